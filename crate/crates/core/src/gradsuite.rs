//! Finite-difference checks of every differentiable op and of a two-frame
//! end-to-end codec, shared by the CLI and the test suites.
//!
//! `straight_through` and `detach` are excluded: their backward rules are
//! deliberately not the derivative of their forward values.

use rand_chacha::ChaCha8Rng;

use crate::codec::{decoder_graph, encoder_graph, init_params, latent_reg, ModelConfig, DECODER, ENCODER};
use crate::error::Result;
use crate::noise::NoiseConfig;
use crate::signal::{MultiScaleMel, SpecScale};
use crate::tensorcore::gradcheck::{gradcheck, randn};
use crate::tensorcore::{group_of, Bound, Graph, Tensor, Var};
use crate::winformer::{SeqLayout, WindowSpec};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub name: &'static str,
    pub seed: u64,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

type Sampler = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;
type Body = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Contract the op output against a random weight tensor (the last input)
/// so every output element carries a distinct gradient.
fn weighted(g: &mut Graph, out: Var, w: Var) -> Result<Var> {
    let m = g.mul(out, w)?;
    g.sum(m)
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    randn(rng, shape, 0.4).map(|v| v.exp() + 0.2)
}

fn case(
    name: &'static str,
    sample: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> + 'static,
    body: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> (&'static str, Sampler, Body) {
    (name, Box::new(sample), Box::new(body))
}

macro_rules! unary {
    ($name:literal, $shape:expr, $draw:expr, |$g:ident, $x:ident| $e:expr) => {
        case(
            $name,
            move |rng| {
                let x: Tensor = $draw(rng, &$shape);
                let out_shape = (|| -> Result<Vec<usize>> {
                    let mut graph = Graph::new();
                    let $g = &mut graph;
                    let $x = $g.constant(x.clone());
                    let y = $e?;
                    Ok($g.shape(y).to_vec())
                })()
                .expect("case is well-formed");
                vec![x, randn(rng, &out_shape, 1.0)]
            },
            |$g, v| {
                let $x = v[0];
                let y = $e?;
                weighted($g, y, v[1])
            },
        )
    };
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    randn(rng, shape, 1.0)
}

fn binary(
    name: &'static str,
    a: &'static [usize],
    b: &'static [usize],
    out: &'static [usize],
    draw_b: fn(&mut ChaCha8Rng, &[usize]) -> Tensor,
    op: fn(&mut Graph, Var, Var) -> Result<Var>,
) -> (&'static str, Sampler, Body) {
    case(
        name,
        move |rng| vec![normal(rng, a), draw_b(rng, b), normal(rng, out)],
        move |g, v| {
            let y = op(g, v[0], v[1])?;
            weighted(g, y, v[2])
        },
    )
}

fn op_cases() -> Vec<(&'static str, Sampler, Body)> {
    const M: [usize; 2] = [3, 4];
    vec![
        binary("add", &M, &M, &M, normal, |g, a, b| g.add(a, b)),
        binary("sub", &M, &M, &M, normal, |g, a, b| g.sub(a, b)),
        binary("mul", &M, &M, &M, normal, |g, a, b| g.mul(a, b)),
        binary("div", &M, &M, &M, positive, |g, a, b| g.div(a, b)),
        binary("add_row", &M, &[4], &M, normal, |g, a, b| g.add_row(a, b)),
        binary("mul_row", &M, &[4], &M, normal, |g, a, b| g.mul_row(a, b)),
        binary("matmul", &[3, 4], &[4, 2], &[3, 2], normal, |g, a, b| g.matmul(a, b)),
        unary!("scale", M, normal, |g, x| g.scale(x, -1.7)),
        unary!("add_scalar", M, normal, |g, x| g.add_scalar(x, 0.3)),
        unary!("neg", M, normal, |g, x| g.neg(x)),
        unary!("exp", M, normal, |g, x| g.exp(x)),
        unary!("log", M, positive, |g, x| g.log(x)),
        unary!("sqrt", M, positive, |g, x| g.sqrt(x)),
        unary!("abs", M, normal, |g, x| g.abs(x)),
        unary!("square", M, normal, |g, x| g.square(x)),
        unary!("tanh", M, normal, |g, x| g.tanh(x)),
        unary!("gelu", M, normal, |g, x| g.gelu(x)),
        unary!("leaky_relu", M, normal, |g, x| g.leaky_relu(x, 0.2)),
        unary!("transpose", M, normal, |g, x| g.transpose(x)),
        unary!("reshape", M, normal, |g, x| g.reshape(x, &[2, 6])),
        unary!("slice_rows", M, normal, |g, x| g.slice_rows(x, 1, 3)),
        unary!("slice_cols", M, normal, |g, x| g.slice_cols(x, 1, 3)),
        unary!("concat_rows", M, normal, |g, x| {
            let a = g.slice_rows(x, 0, 1)?;
            g.concat_rows(&[x, a, x])
        }),
        unary!("concat_cols", M, normal, |g, x| {
            let a = g.slice_cols(x, 2, 4)?;
            g.concat_cols(&[a, x])
        }),
        unary!("sum", M, normal, |g, x| g.sum(x)),
        unary!("mean", M, normal, |g, x| g.mean(x)),
        unary!("sum_axis0", M, normal, |g, x| g.sum_axis(x, 0)),
        unary!("sum_axis1", M, normal, |g, x| g.sum_axis(x, 1)),
        unary!("mean_axis0", M, normal, |g, x| g.mean_axis(x, 0)),
        unary!("mean_axis1", M, normal, |g, x| g.mean_axis(x, 1)),
        unary!("softmax_axis0", M, normal, |g, x| g.softmax(x, 0)),
        unary!("softmax_axis1", M, normal, |g, x| g.softmax(x, 1)),
        unary!("gather_rows", [5, 3], normal, |g, x| g.gather_rows(x, &[0, 2, 2, 4])),
        case(
            "linear",
            |rng| vec![normal(rng, &[3, 4]), normal(rng, &[4, 2]), normal(rng, &[2]), normal(rng, &[3, 2])],
            |g, v| {
                let y = g.linear(v[0], v[1], v[2])?;
                weighted(g, y, v[3])
            },
        ),
        case(
            "layer_norm",
            |rng| vec![normal(rng, &M), normal(rng, &[4]), normal(rng, &[4]), normal(rng, &M)],
            |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted(g, y, v[3])
            },
        ),
    ]
}

/// Two frames through encoder and decoder with the multi-scale mel loss
/// and the latent penalty, differentiated with respect to the sampled
/// input and every encoder and decoder parameter.
fn micro_codec() -> (&'static str, Sampler, Body) {
    let cfg = ModelConfig {
        sample_rate: 4000,
        r: 16,
        hidden: 4,
        code_dim: 2,
        codebook_size: 4,
        enc_layers: 1,
        dec_layers: 1,
        heads: 2,
        enc_window: WindowSpec { left: 2, right: 0 },
        dec_window: WindowSpec { left: 2, right: 1 },
        noise: NoiseConfig { active: false, ..NoiseConfig::default() },
        rotary: true,
        disc_hidden: 4,
        disc_window: 16,
    };
    let params = init_params(&cfg, 0).expect("valid micro config");
    let names: Vec<String> = params
        .iter()
        .filter(|(n, _)| matches!(group_of(n), ENCODER | DECODER))
        .map(|(n, _)| n.clone())
        .collect();
    let names_for_sample = names.clone();
    let layout = SeqLayout { batch: 1, len: 2 };
    let target: Tensor = Tensor::new(
        vec![1, 32],
        (0..32).map(|i| 0.5 * (i as f64 * 0.9).sin()).collect(),
    )
    .expect("shape");
    let mel = MultiScaleMel::new(&[SpecScale::for_window(16, 4000)], 4000).expect("valid scale");
    case(
        "micro_codec",
        move |rng| {
            let seed_params = init_params(&cfg, rand::Rng::random(rng)).expect("valid micro config");
            let mut inputs = vec![randn(rng, &[2, 16], 0.5)];
            // Jitter every parameter (zero-initialized biases included) so
            // no layer-norm row sits at the zero-variance point.
            inputs.extend(names_for_sample.iter().map(|n| {
                let t = seed_params.tensor(n).expect("present");
                let noise = randn(rng, t.shape(), 0.2);
                Tensor::new(t.shape().to_vec(), t.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect())
                    .expect("same shape")
            }));
            inputs
        },
        move |g, v| {
            let p = Bound::from_vars(names.iter().cloned().zip(v[1..].iter().copied()));
            let z = encoder_graph(g, &p, &cfg, v[0], layout, None)?;
            let y = decoder_graph(g, &p, &cfg, z, layout)?;
            let y = g.reshape(y, &[1, 32])?;
            let l = mel.loss_graph(g, &target, y)?;
            let reg = latent_reg(g, z)?;
            let reg = g.scale(reg, 0.1)?;
            g.add(l, reg)
        },
    )
}

/// Runs every case at `seed`.
pub fn run(seed: u64) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::new();
    for (name, sample, body) in op_cases() {
        let rep = gradcheck(seed, &sample, &body)?;
        rows.push(SuiteRow { name, seed, max_rel_err: rep.max_rel_err, tolerance: OP_TOLERANCE });
    }
    let (name, sample, body) = micro_codec();
    let rep = gradcheck(seed, &sample, &body)?;
    rows.push(SuiteRow { name, seed, max_rel_err: rep.max_rel_err, tolerance: COMPOSITE_TOLERANCE });
    Ok(rows)
}
