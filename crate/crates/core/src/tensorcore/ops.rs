//! Differentiable op family recorded on [`Graph`].

use crate::error::{Error, Result};
use crate::tensorcore::graph::{BackCtx, Graph, Var};
use crate::tensorcore::kernels;
use crate::tensorcore::Tensor;

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

impl Graph {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// Elementwise op whose local derivative depends on input and output.
    fn unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let value = self.value(x).map(f);
        self.custom(op, &[x], value, move |ctx| {
            let data = ctx
                .grad
                .data()
                .iter()
                .zip(ctx.inputs[0].data().iter().zip(ctx.output.data()))
                .map(|(g, (&xv, &yv))| g * df(xv, yv))
                .collect();
            vec![Some(Tensor::new(ctx.grad.shape().to_vec(), data).unwrap())]
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.custom("add", &[a, b], value, |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.custom("sub", &[a, b], value, |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.custom("mul", &[a, b], value, |ctx| {
            vec![
                ctx.needs[0].then(|| zip_map(ctx.grad, ctx.inputs[1], |g, y| g * y)),
                ctx.needs[1].then(|| zip_map(ctx.grad, ctx.inputs[0], |g, x| g * x)),
            ]
        })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x / y);
        self.custom("div", &[a, b], value, |ctx| {
            vec![
                ctx.needs[0].then(|| zip_map(ctx.grad, ctx.inputs[1], |g, y| g / y)),
                ctx.needs[1].then(|| {
                    let gy = zip_map(ctx.grad, ctx.output, |g, o| g * o);
                    zip_map(&gy, ctx.inputs[1], |v, y| -v / y)
                }),
            ]
        })
    }

    fn broadcast_check(&self, op: &'static str, x: Var, row: Var) -> Result<usize> {
        let (_, cols) = self.value(x).last_dim_split();
        if self.value(row).numel() != cols {
            return Err(Error::dim(
                op,
                format!("row of {} vs trailing dim {cols}", self.value(row).numel()),
            ));
        }
        Ok(cols)
    }

    /// `x + row` with `row` broadcast over every leading index.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let cols = self.broadcast_check("add_row", x, row)?;
        let r = self.value(row).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += r[i % cols];
        }
        let row_shape = self.shape(row).to_vec();
        self.custom("add_row", &[x, row], value, move |ctx| {
            let mut gr = vec![0.0; cols];
            if ctx.needs[1] {
                for (i, g) in ctx.grad.data().iter().enumerate() {
                    gr[i % cols] += g;
                }
            }
            vec![
                Some(ctx.grad.clone()),
                ctx.needs[1].then(|| Tensor::new(row_shape.clone(), gr).unwrap()),
            ]
        })
    }

    /// `x ⊙ row` with `row` broadcast over every leading index.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let cols = self.broadcast_check("mul_row", x, row)?;
        let r = self.value(row).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v *= r[i % cols];
        }
        let row_shape = self.shape(row).to_vec();
        self.custom("mul_row", &[x, row], value, move |ctx| {
            let r = ctx.inputs[1].data();
            let gx = ctx.needs[0].then(|| {
                let data = ctx
                    .grad
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g * r[i % cols])
                    .collect();
                Tensor::new(ctx.grad.shape().to_vec(), data).unwrap()
            });
            let gr = ctx.needs[1].then(|| {
                let mut gr = vec![0.0; cols];
                for (i, (g, x)) in ctx.grad.data().iter().zip(ctx.inputs[0].data()).enumerate() {
                    gr[i % cols] += g * x;
                }
                Tensor::new(row_shape.clone(), gr).unwrap()
            });
            vec![gx, gr]
        })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, |_, _| 1.0)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary("neg", x, |v| -v, |_, _| -1.0)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, |_, y| y)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::NonFinite("log of non-positive value".into()));
        }
        self.unary("log", x, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", x, f64::sqrt, |_, y| 0.5 / y)
    }

    /// |x| with the subgradient at 0 fixed to 0.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let margin = self
            .value(x)
            .data()
            .iter()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min);
        self.note_kink(margin);
        self.unary("abs", x, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, kernels::gelu, |x, _| kernels::gelu_grad(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let margin = self
            .value(x)
            .data()
            .iter()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min);
        self.note_kink(margin);
        self.unary(
            "leaky_relu",
            x,
            |v| if v > 0.0 { v } else { slope * v },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}x{k}] · [{k2}x{n}]")));
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        self.custom("matmul", &[a, b], value, move |ctx| {
            let g = ctx.grad.data();
            let (av, bv) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            vec![
                ctx.needs[0]
                    .then(|| Tensor::new(vec![m, k], kernels::matmul_bt(g, bv, m, n, k)).unwrap()),
                ctx.needs[1]
                    .then(|| Tensor::new(vec![k, n], kernels::matmul_at(av, g, m, k, n)).unwrap()),
            ]
        })
    }

    /// Affine layer `x·w + b` over the rows of a matrix.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let value = Tensor::new(vec![c, r], transpose_data(self.value(x).data(), r, c))?;
        self.custom("transpose", &[x], value, move |ctx| {
            vec![Some(
                Tensor::new(vec![r, c], transpose_data(ctx.grad.data(), c, r)).unwrap(),
            )]
        })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let orig = self.shape(x).to_vec();
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        self.custom("reshape", &[x], value, move |ctx| {
            vec![Some(ctx.grad.clone().reshaped(orig.clone()).unwrap())]
        })
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if start > end || end > r {
            return Err(Error::dim("slice_rows", format!("{start}..{end} of {r}")));
        }
        let value = Tensor::new(
            vec![end - start, c],
            self.value(x).data()[start * c..end * c].to_vec(),
        )?;
        self.custom("slice_rows", &[x], value, move |ctx| {
            let mut g = vec![0.0; r * c];
            g[start * c..end * c].copy_from_slice(ctx.grad.data());
            vec![Some(Tensor::new(vec![r, c], g).unwrap())]
        })
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if start > end || end > c {
            return Err(Error::dim("slice_cols", format!("{start}..{end} of {c}")));
        }
        let w = end - start;
        let src = self.value(x).data();
        let data = (0..r)
            .flat_map(|i| src[i * c + start..i * c + end].iter().copied())
            .collect();
        let value = Tensor::new(vec![r, w], data)?;
        self.custom("slice_cols", &[x], value, move |ctx| {
            let mut g = vec![0.0; r * c];
            for i in 0..r {
                g[i * c + start..i * c + end].copy_from_slice(&ctx.grad.data()[i * w..(i + 1) * w]);
            }
            vec![Some(Tensor::new(vec![r, c], g).unwrap())]
        })
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).dims2()?.1;
        let mut rows = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != cols {
                return Err(Error::dim("concat_rows", format!("{c} vs {cols} columns")));
            }
            rows.push(r);
            data.extend_from_slice(self.value(p).data());
        }
        let total: usize = rows.iter().sum();
        let value = Tensor::new(vec![total, cols], data)?;
        self.custom("concat_rows", parts, value, move |ctx| {
            let mut offset = 0;
            rows.iter()
                .map(|&r| {
                    let g = ctx.grad.data()[offset * cols..(offset + r) * cols].to_vec();
                    offset += r;
                    Some(Tensor::new(vec![r, cols], g).unwrap())
                })
                .collect()
        })
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::dim("concat_cols", format!("{r} vs {rows} rows")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        self.custom("concat_cols", parts, value, move |ctx| {
            let g = ctx.grad.data();
            let mut offset = 0;
            widths
                .iter()
                .map(|&w| {
                    let part = (0..rows)
                        .flat_map(|i| g[i * total + offset..i * total + offset + w].iter().copied())
                        .collect();
                    offset += w;
                    Some(Tensor::new(vec![rows, w], part).unwrap())
                })
                .collect()
        })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        let shape = self.shape(x).to_vec();
        self.custom("sum", &[x], value, move |ctx| {
            vec![Some(Tensor::full(&shape, ctx.grad.item()))]
        })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(self.value(x).sum() / n as f64);
        let shape = self.shape(x).to_vec();
        self.custom("mean", &[x], value, move |ctx| {
            vec![Some(Tensor::full(&shape, ctx.grad.item() / n as f64))]
        })
    }

    /// Sum along `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("sum_axis", format!("axis {axis} of rank {}", shape.len())));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                out[o * inner + i] = (0..len).map(|a| src[(o * len + a) * inner + i]).sum();
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let value = Tensor::new(out_shape, out)?;
        self.custom("sum_axis", &[x], value, move |ctx| {
            let g = ctx.grad.data();
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for a in 0..len {
                    for i in 0..inner {
                        gx[(o * len + a) * inner + i] = g[o * inner + i];
                    }
                }
            }
            vec![Some(Tensor::new(shape.clone(), gx).unwrap())]
        })
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::dim("mean_axis", format!("axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / len as f64)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("softmax", format!("axis {axis} of rank {}", shape.len())));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        let mut lane = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                for a in 0..len {
                    lane[a] = src[(o * len + a) * inner + i];
                }
                for (a, p) in kernels::softmax_slice(&lane).into_iter().enumerate() {
                    out[(o * len + a) * inner + i] = p;
                }
            }
        }
        let value = Tensor::new(shape.clone(), out)?;
        self.custom("softmax", &[x], value, move |ctx| {
            let (g, y) = (ctx.grad.data(), ctx.output.data());
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |a: usize| (o * len + a) * inner + i;
                    let dot: f64 = (0..len).map(|a| g[idx(a)] * y[idx(a)]).sum();
                    for a in 0..len {
                        gx[idx(a)] = y[idx(a)] * (g[idx(a)] - dot);
                    }
                }
            }
            vec![Some(Tensor::new(shape.clone(), gx).unwrap())]
        })
    }

    /// Layer normalization over the trailing axis followed by a per-feature
    /// affine map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        let cols = self.broadcast_check("layer_norm", x, gamma)?;
        self.broadcast_check("layer_norm", x, beta)?;
        let xv = self.value(x);
        let (rows, _) = xv.last_dim_split();
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let (row, s) = kernels::normalize_row(xv.row(r), eps);
            xhat.extend(row);
            inv_std.push(s);
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat
            .iter()
            .enumerate()
            .map(|(i, v)| v * g[i % cols] + b[i % cols])
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let (gshape, bshape) = (self.shape(gamma).to_vec(), self.shape(beta).to_vec());
        self.custom("layer_norm", &[x, gamma, beta], value, move |ctx| {
            let gout = ctx.grad.data();
            let gam = ctx.inputs[1].data();
            let mut gx = vec![0.0; gout.len()];
            let mut ggam = vec![0.0; cols];
            let mut gbeta = vec![0.0; cols];
            let n = cols as f64;
            for r in 0..rows {
                let base = r * cols;
                let mut sum_d = 0.0;
                let mut sum_dx = 0.0;
                for j in 0..cols {
                    let d = gout[base + j] * gam[j];
                    sum_d += d;
                    sum_dx += d * xhat[base + j];
                    ggam[j] += gout[base + j] * xhat[base + j];
                    gbeta[j] += gout[base + j];
                }
                for j in 0..cols {
                    let d = gout[base + j] * gam[j];
                    gx[base + j] = inv_std[r] * (d - sum_d / n - xhat[base + j] * sum_dx / n);
                }
            }
            vec![
                ctx.needs[0].then(|| Tensor::new(ctx.grad.shape().to_vec(), gx).unwrap()),
                ctx.needs[1].then(|| Tensor::new(gshape.clone(), ggam).unwrap()),
                ctx.needs[2].then(|| Tensor::new(bshape.clone(), gbeta).unwrap()),
            ]
        })
    }

    /// Row lookup; the backward pass scatter-adds into the selected rows.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (k, d) = self.value(table).dims2()?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= k {
                return Err(Error::Index { index: id, size: k });
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let ids = ids.to_vec();
        self.custom("gather_rows", &[table], value, move |ctx| {
            let mut g = vec![0.0; k * d];
            for (i, &id) in ids.iter().enumerate() {
                for j in 0..d {
                    g[id * d + j] += ctx.grad.data()[i * d + j];
                }
            }
            vec![Some(Tensor::new(vec![k, d], g).unwrap())]
        })
    }

    /// Forward value `value`, backward passes the incoming gradient to `x`
    /// unchanged (straight-through estimator).
    pub fn straight_through(&mut self, x: Var, value: Tensor) -> Result<Var> {
        if value.shape() != self.shape(x) {
            return Err(Error::dim(
                "straight_through",
                format!("{:?} vs {:?}", value.shape(), self.shape(x)),
            ));
        }
        self.custom("straight_through", &[x], value, |ctx: &BackCtx<'_>| {
            vec![Some(ctx.grad.clone())]
        })
    }
}

fn transpose_data(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

/// `(outer, len, inner)` around `axis` for row-major strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::eye(2));
        let m = g.constant(mat(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let out = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = g.constant(mat(&[vec![1.0, 2.0]]));
        let b = g.constant(mat(&[vec![3.0], vec![4.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_dimension_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_values() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.softmax(x, 0).unwrap();
        let expect = [0.090031, 0.244728, 0.665241];
        for (a, b) in g.value(y).data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
        let z = g.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let z = g.softmax(z, 0).unwrap();
        assert_eq!(g.value(z).data(), &[0.5, 0.5]);
        let big = g.constant(Tensor::new(vec![2], vec![1000.0, 1000.0]).unwrap());
        let big = g.softmax(big, 0).unwrap();
        assert_eq!(g.value(big).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_along_first_axis_of_matrix() {
        let mut g = Graph::new();
        let x = g.constant(mat(&[vec![0.0, 1.0], vec![0.0, 3.0]]));
        let y = g.softmax(x, 0).unwrap();
        let v = g.value(y);
        assert!((v.get2(0, 0) - 0.5).abs() < 1e-12);
        assert!((v.get2(0, 1) + v.get2(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap());
        let one = g.constant(Tensor::full(&[2], 1.0));
        let zero = g.constant(Tensor::zeros(&[2]));
        let y = g.layer_norm(x, one, zero, 1e-12).unwrap();
        let v = g.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);

        let flat = g.constant(Tensor::new(vec![1, 2], vec![5.0, 5.0]).unwrap());
        let gamma = g.constant(Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let beta = g.constant(Tensor::new(vec![2], vec![0.25, 0.75]).unwrap());
        let y = g.layer_norm(flat, gamma, beta, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.25, 0.75]);
    }

    #[test]
    fn gather_rows_forward_backward() {
        let mut g = Graph::new();
        let table = g.param(mat(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
        let out = g.gather_rows(table, &[2, 0]).unwrap();
        assert_eq!(g.value(out).data(), &[5.0, 6.0, 1.0, 2.0]);

        let empty = g.gather_rows(table, &[]).unwrap();
        assert_eq!(g.shape(empty), &[0, 2]);

        assert!(matches!(
            g.gather_rows(table, &[3]),
            Err(Error::Index { index: 3, size: 3 })
        ));

        let twice = g.gather_rows(table, &[1, 1]).unwrap();
        let s = g.sum(twice).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(table).unwrap().data(), &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn square_gradient_at_three() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.square(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn straight_through_passes_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![0.2, 0.7, -1.4]).unwrap());
        let q = g.value(x).map(f64::round);
        let y = g.straight_through(x, q).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 1.0, -1.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        let y = g.exp(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn abs_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![-2.0, 0.0, 2.0]).unwrap());
        let y = g.abs(x).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[-1.0, 0.0, 1.0]);
        assert_eq!(g.kink_margin(), 0.0);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let d = g.detach(x);
        let y = g.mul(x, d).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn non_finite_values_fail_at_op_boundary() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1000.0));
        assert!(matches!(g.exp(x), Err(Error::NonFinite(_))));
        let z = g.constant(Tensor::scalar(0.0));
        assert!(g.log(z).is_err());
    }

    #[test]
    fn records_are_topologically_ordered() {
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(1.0));
        let b = g.exp(a).unwrap();
        let c = g.add(a, b).unwrap();
        let _ = g.sum(c).unwrap();
        for rec in g.records() {
            assert!(rec.inputs.iter().all(|i| i.index() < rec.output.index()));
        }
    }
}
