use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensorcore::{Graph, Tensor, Var};

/// Central-difference step.
pub const STEP: f64 = 1e-4;
/// Minimum distance to a non-smooth point required before a sample is used.
pub const KINK_GUARD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    /// max |analytic − numeric| / max(1, |numeric|) over every input element.
    pub max_rel_err: f64,
    /// Number of resamples needed to stay clear of non-smooth points.
    pub resamples: usize,
}

/// Compares analytic gradients of `f` against central finite differences at
/// `inputs`. Fails with a contract error when the base point lies within
/// [`KINK_GUARD`] of a recorded non-smooth boundary.
pub fn gradcheck_at<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    if g.kink_margin() < KINK_GUARD {
        return Err(Error::Contract(format!(
            "sample within {} of a non-smooth point",
            g.kink_margin()
        )));
    }
    let grads = g.backward(loss)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[which], input);
        for i in 0..input.numel() {
            let orig = input.data()[i];
            work[which].data_mut()[i] = orig + STEP;
            let up = eval(&work)?;
            work[which].data_mut()[i] = orig - STEP;
            let down = eval(&work)?;
            work[which].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Draws inputs from `sample` with a seeded rng and runs [`gradcheck_at`],
/// resampling (up to 50 times) when the draw lands near a non-smooth point.
pub fn gradcheck<S, F>(seed: u64, sample: S, f: F) -> Result<GradcheckReport>
where
    S: Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for resamples in 0..50 {
        let inputs = sample(&mut rng);
        match gradcheck_at(&inputs, &f) {
            Ok(max_rel_err) => {
                return Ok(GradcheckReport {
                    max_rel_err,
                    resamples,
                })
            }
            Err(Error::Contract(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Contract(format!(
        "seed {seed}: no smooth sample found in 50 draws"
    )))
}

/// Gaussian tensor helper for gradcheck samplers.
pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}
