use crate::error::{Error, Result};
use crate::tensorcore::{kernels, Graph, Tensor, Var};
use crate::winformer::{SeqLayout, WindowSpec};

fn check_rows(g: &Graph, x: Var, layout: SeqLayout, heads: usize) -> Result<usize> {
    let (rows, hidden) = g.value(x).dims2()?;
    if rows != layout.rows() {
        return Err(Error::dim("attention", format!("{rows} rows for layout {layout:?}")));
    }
    if heads == 0 || hidden % heads != 0 {
        return Err(Error::dim("attention", format!("hidden {hidden} not divisible by {heads} heads")));
    }
    Ok(hidden)
}

/// Rotary position rotation; frame `t` of each sequence is rotated by its
/// absolute index `t`.
pub fn rope(g: &mut Graph, x: Var, layout: SeqLayout, heads: usize) -> Result<Var> {
    check_rows(g, x, layout, heads)?;
    let rotate = move |t: &Tensor, sign: f64| {
        let mut out = t.clone();
        let (rows, hidden) = t.dims2().unwrap();
        for r in 0..rows {
            let row = &mut out.data_mut()[r * hidden..(r + 1) * hidden];
            kernels::rope_row(row, heads, r % layout.len, sign);
        }
        out
    };
    let value = rotate(g.value(x), 1.0);
    g.custom("rope", &[x], value, move |ctx| vec![Some(rotate(ctx.grad, -1.0))])
}

/// Multi-head scaled dot-product attention restricted to `window` inside
/// each sequence of `layout`. Inputs and output are `[B·T × H]`.
pub fn windowed_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    layout: SeqLayout,
    heads: usize,
    window: WindowSpec,
) -> Result<Var> {
    let hidden = check_rows(g, q, layout, heads)?;
    if g.shape(k) != g.shape(q) || g.shape(v) != g.shape(q) {
        return Err(Error::dim("attention", "q, k, v shapes differ"));
    }
    window.validate()?;
    let hd = hidden / heads;
    let (qv, kv, vv) = (g.value(q), g.value(k), g.value(v));
    fn head(t: &Tensor, row: usize, h: usize, hidden: usize, hd: usize) -> &[f64] {
        &t.data()[row * hidden + h * hd..row * hidden + (h + 1) * hd]
    }
    let mut out = vec![0.0; layout.rows() * hidden];
    let mut probs: Vec<Vec<f64>> = Vec::with_capacity(layout.rows() * heads);
    for b in 0..layout.batch {
        let base = b * layout.len;
        for t in 0..layout.len {
            for h in 0..heads {
                let (lo, hi) = window.span(t, layout.len);
                let keys = (lo..=hi).map(|u| head(kv, base + u, h, hidden, hd));
                let values = (lo..=hi).map(|u| head(vv, base + u, h, hidden, hd));
                let (o, p) = kernels::attend(head(qv, base + t, h, hidden, hd), keys, values);
                let start = (base + t) * hidden + h * hd;
                out[start..start + hd].copy_from_slice(&o);
                probs.push(p);
            }
        }
    }
    let value = Tensor::new(vec![layout.rows(), hidden], out)?;
    g.custom("windowed_attention", &[q, k, v], value, move |ctx| {
        let (qv, kv, vv) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2]);
        let gout = ctx.grad.data();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = vec![0.0; qv.numel()];
        let mut dk = vec![0.0; kv.numel()];
        let mut dv = vec![0.0; vv.numel()];
        let at = |row: usize, h: usize| row * hidden + h * hd;
        let mut idx = 0;
        for b in 0..layout.batch {
            let base = b * layout.len;
            for t in 0..layout.len {
                for h in 0..heads {
                    let p = &probs[idx];
                    idx += 1;
                    let (lo, _) = window.span(t, layout.len);
                    let qo = at(base + t, h);
                    let go = &gout[qo..qo + hd];
                    let dp: Vec<f64> = (0..p.len())
                        .map(|j| {
                            let vo = at(base + lo + j, h);
                            kernels::dot(go, &vv.data()[vo..vo + hd])
                        })
                        .collect();
                    let s: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    for (j, (&pj, &dpj)) in p.iter().zip(&dp).enumerate() {
                        let ko = at(base + lo + j, h);
                        let ds = pj * (dpj - s) * scale;
                        for i in 0..hd {
                            dq[qo + i] += ds * kv.data()[ko + i];
                            dk[ko + i] += ds * qv.data()[qo + i];
                            dv[ko + i] += pj * go[i];
                        }
                    }
                }
            }
        }
        let shape = vec![layout.rows(), hidden];
        vec![
            Some(Tensor::new(shape.clone(), dq).unwrap()),
            Some(Tensor::new(shape.clone(), dk).unwrap()),
            Some(Tensor::new(shape, dv).unwrap()),
        ]
    })
}
