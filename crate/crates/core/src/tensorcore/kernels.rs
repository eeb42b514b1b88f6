//! Slice-level numeric kernels shared by the graph ops and the streaming
//! inference path. Both paths call these functions so that offline and
//! streamed computations perform identical arithmetic in identical order.

/// `c[m×n] = a[m×k] · b[k×n]`, accumulating along `k` in ascending order.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`.
pub fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// `c[k×n] = a[m×k]ᵀ · b[m×n]`.
pub fn matmul_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Affine map of one row: `x · w + bias` with `w` stored `[in × out]`.
pub fn linear_row(x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let out = bias.len();
    let mut y = matmul(x, w, 1, x.len(), out);
    for (v, b) in y.iter_mut().zip(bias) {
        *v += b;
    }
    y
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Normalizes one row to zero mean and unit variance. Returns the normalized
/// row and the inverse standard deviation.
pub fn normalize_row(x: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    (x.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

pub fn layer_norm_row(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let (xhat, _) = normalize_row(x, eps);
    xhat.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| v * g + b)
        .collect()
}

/// Rotary frequency for pair `i` of a head of width `head_dim`.
fn rope_freq(i: usize, head_dim: usize) -> f64 {
    10000f64.powf(-2.0 * i as f64 / head_dim as f64)
}

/// Rotates consecutive pairs inside every head of `row` by `pos·θᵢ`.
/// `sign = -1.0` applies the inverse rotation.
pub fn rope_row(row: &mut [f64], heads: usize, pos: usize, sign: f64) {
    let head_dim = row.len() / heads;
    for h in 0..heads {
        let seg = &mut row[h * head_dim..(h + 1) * head_dim];
        for i in 0..head_dim / 2 {
            let angle = pos as f64 * rope_freq(i, head_dim);
            let (s, c) = (sign * angle).sin_cos();
            let (a, b) = (seg[2 * i], seg[2 * i + 1]);
            seg[2 * i] = a * c - b * s;
            seg[2 * i + 1] = a * s + b * c;
        }
    }
}

/// Masked attention of one query against an ordered list of keys/values for
/// one head. Returns `(output, probabilities)`.
pub fn attend<'a>(
    q: &[f64],
    keys: impl Iterator<Item = &'a [f64]> + Clone,
    values: impl Iterator<Item = &'a [f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.0 / (q.len() as f64).sqrt();
    let scores: Vec<f64> = keys.map(|k| dot(q, k) * scale).collect();
    let probs = softmax_slice(&scores);
    let mut out = vec![0.0; q.len()];
    for (p, v) in probs.iter().zip(values) {
        for (o, &vv) in out.iter_mut().zip(v) {
            *o += p * vv;
        }
    }
    (out, probs)
}

/// Max-subtracted softmax over a contiguous slice.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
