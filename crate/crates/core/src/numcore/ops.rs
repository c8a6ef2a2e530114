//! Forward kernels and their adjoints.
//!
//! Every kernel is a pure function over [`Tensor`]s. The tape in
//! [`super::tape`] records calls to these and replays the `*_backward`
//! companions in reverse order.

use super::{NumError, Tensor};

pub const BN_EPS: f64 = 1e-5;

fn shape_err(msg: String) -> NumError {
    NumError::Shape(msg)
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<(), NumError> {
    if t.dims().len() != rank {
        return Err(shape_err(format!(
            "{what}: expected rank {rank}, got dims {:?}",
            t.dims()
        )));
    }
    Ok(())
}

/// `[m, k] x [k, n] -> [m, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    expect_rank(a, 2, "matmul lhs")?;
    expect_rank(b, 2, "matmul rhs")?;
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let (k2, n) = (b.dims()[0], b.dims()[1]);
    if k != k2 {
        return Err(shape_err(format!(
            "matmul: inner dims differ ({k} vs {k2})"
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor, NumError> {
    expect_rank(a, 2, "transpose")?;
    let (m, n) = (a.dims()[0], a.dims()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor), NumError> {
    let da = matmul(grad, &transpose(b)?)?;
    let db = matmul(&transpose(a)?, grad)?;
    Ok((da, db))
}

/// Fully-connected layer: `x [n, in]`, `w [out, in]`, `b [out]` -> `[n, out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor, NumError> {
    expect_rank(x, 2, "linear input")?;
    expect_rank(w, 2, "linear weight")?;
    let (n, fin) = (x.dims()[0], x.dims()[1]);
    let (fout, fin2) = (w.dims()[0], w.dims()[1]);
    if fin != fin2 {
        return Err(shape_err(format!(
            "linear: input has {fin} features, weight expects {fin2}"
        )));
    }
    if let Some(b) = b {
        if b.dims() != [fout] {
            return Err(shape_err(format!("linear: bias dims {:?}", b.dims())));
        }
    }
    let mut out = vec![0.0; n * fout];
    for s in 0..n {
        let xs = &x.data()[s * fin..(s + 1) * fin];
        for o in 0..fout {
            let ws = &w.data()[o * fin..(o + 1) * fin];
            let mut acc = b.map_or(0.0, |b| b.data()[o]);
            for (xv, wv) in xs.iter().zip(ws) {
                acc += xv * wv;
            }
            out[s * fout + o] = acc;
        }
    }
    Tensor::new(vec![n, fout], out)
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor, Tensor), NumError> {
    let (n, fin) = (x.dims()[0], x.dims()[1]);
    let fout = w.dims()[0];
    let mut dx = vec![0.0; n * fin];
    let mut dw = vec![0.0; fout * fin];
    let mut db = vec![0.0; fout];
    for s in 0..n {
        let xs = &x.data()[s * fin..(s + 1) * fin];
        for o in 0..fout {
            let g = grad.data()[s * fout + o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let ws = &w.data()[o * fin..(o + 1) * fin];
            let dxs = &mut dx[s * fin..(s + 1) * fin];
            for (d, &wv) in dxs.iter_mut().zip(ws) {
                *d += g * wv;
            }
            let dws = &mut dw[o * fin..(o + 1) * fin];
            for (d, &xv) in dws.iter_mut().zip(xs) {
                *d += g * xv;
            }
        }
    }
    Ok((
        Tensor::new(vec![n, fin], dx)?,
        Tensor::new(vec![fout, fin], dw)?,
        Tensor::new(vec![fout], db)?,
    ))
}

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry {
            stride: 1,
            pad: 0,
            groups: 1,
        }
    }
}

pub fn conv_output_hw(h: usize, w: usize, kh: usize, kw: usize, g: ConvGeometry) -> Option<(usize, usize)> {
    let hp = h + 2 * g.pad;
    let wp = w + 2 * g.pad;
    if hp < kh || wp < kw || g.stride == 0 {
        return None;
    }
    Some(((hp - kh) / g.stride + 1, (wp - kw) / g.stride + 1))
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn conv_dims(x: &Tensor, w: &Tensor, g: ConvGeometry) -> Result<ConvDims, NumError> {
    expect_rank(x, 4, "conv2d input")?;
    expect_rank(w, 4, "conv2d weight")?;
    let [n, cin, h, wd] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let [cout, cin_g, kh, kw] = [w.dims()[0], w.dims()[1], w.dims()[2], w.dims()[3]];
    if g.groups == 0 || cin % g.groups != 0 || cout % g.groups != 0 || cin / g.groups != cin_g {
        return Err(shape_err(format!(
            "conv2d: {cin} input channels, weight {:?}, groups {}",
            w.dims(),
            g.groups
        )));
    }
    let (ho, wo) = conv_output_hw(h, wd, kh, kw, g)
        .ok_or_else(|| shape_err(format!("conv2d: kernel {kh}x{kw} larger than padded input {h}x{wd}")))?;
    Ok(ConvDims {
        n,
        cin,
        h,
        w: wd,
        cout,
        cin_g,
        kh,
        kw,
        ho,
        wo,
    })
}

/// `x [n, cin, h, w]`, `w [cout, cin/groups, kh, kw]`, optional bias `[cout]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeometry) -> Result<Tensor, NumError> {
    let d = conv_dims(x, w, g)?;
    if let Some(b) = b {
        if b.dims() != [d.cout] {
            return Err(shape_err(format!("conv2d: bias dims {:?}", b.dims())));
        }
    }
    let cout_g = d.cout / g.groups;
    let mut out = vec![0.0; d.n * d.cout * d.ho * d.wo];
    let (xd, wd) = (x.data(), w.data());
    for s in 0..d.n {
        for co in 0..d.cout {
            let grp = co / cout_g;
            let plane = &mut out[((s * d.cout + co) * d.ho) * d.wo..((s * d.cout + co + 1) * d.ho) * d.wo];
            if let Some(b) = b {
                plane.fill(b.data()[co]);
            }
            for cig in 0..d.cin_g {
                let ci = grp * d.cin_g + cig;
                let xplane = &xd[((s * d.cin + ci) * d.h) * d.w..((s * d.cin + ci + 1) * d.h) * d.w];
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let wv = wd[((co * d.cin_g + cig) * d.kh + ky) * d.kw + kx];
                        conv_tap(plane, xplane, wv, ky, kx, &d, g);
                    }
                }
            }
        }
    }
    Tensor::new(vec![d.n, d.cout, d.ho, d.wo], out)
}

#[inline]
fn conv_tap(plane: &mut [f64], xplane: &[f64], wv: f64, ky: usize, kx: usize, d: &ConvDims, g: ConvGeometry) {
    for oy in 0..d.ho {
        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
        if iy < 0 || iy >= d.h as isize {
            continue;
        }
        let xrow = &xplane[iy as usize * d.w..(iy as usize + 1) * d.w];
        let orow = &mut plane[oy * d.wo..(oy + 1) * d.wo];
        for (ox, o) in orow.iter_mut().enumerate() {
            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
            if ix >= 0 && (ix as usize) < d.w {
                *o += wv * xrow[ix as usize];
            }
        }
    }
}

/// Returns `(dx, dw, db)`.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad: &Tensor,
    g: ConvGeometry,
) -> Result<(Tensor, Tensor, Tensor), NumError> {
    let d = conv_dims(x, w, g)?;
    if grad.dims() != [d.n, d.cout, d.ho, d.wo] {
        return Err(shape_err(format!("conv2d_backward: grad dims {:?}", grad.dims())));
    }
    let cout_g = d.cout / g.groups;
    let (xd, wd, gd) = (x.data(), w.data(), grad.data());
    let mut dx = vec![0.0; xd.len()];
    let mut dw = vec![0.0; wd.len()];
    let mut db = vec![0.0; d.cout];
    for s in 0..d.n {
        for co in 0..d.cout {
            let grp = co / cout_g;
            let gplane = &gd[((s * d.cout + co) * d.ho) * d.wo..((s * d.cout + co + 1) * d.ho) * d.wo];
            db[co] += gplane.iter().sum::<f64>();
            for cig in 0..d.cin_g {
                let ci = grp * d.cin_g + cig;
                let base = ((s * d.cin + ci) * d.h) * d.w;
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let widx = ((co * d.cin_g + cig) * d.kh + ky) * d.kw + kx;
                        let wv = wd[widx];
                        let mut acc = 0.0;
                        for oy in 0..d.ho {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let row = base + iy as usize * d.w;
                            for ox in 0..d.wo {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                let gv = gplane[oy * d.wo + ox];
                                acc += gv * xd[row + ix as usize];
                                dx[row + ix as usize] += gv * wv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.dims().to_vec(), dx)?,
        Tensor::new(w.dims().to_vec(), dw)?,
        Tensor::new(vec![d.cout], db)?,
    ))
}

/// Non-overlapping average pooling with window `kh x kw` (stride equals window).
pub fn mean_pool2d(x: &Tensor, kh: usize, kw: usize) -> Result<Tensor, NumError> {
    expect_rank(x, 4, "mean_pool2d")?;
    let [n, c, h, w] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    if kh == 0 || kw == 0 || h % kh != 0 || w % kw != 0 {
        return Err(shape_err(format!(
            "mean_pool2d: window {kh}x{kw} does not tile {h}x{w}"
        )));
    }
    let (ho, wo) = (h / kh, w / kw);
    let inv = 1.0 / (kh * kw) as f64;
    let mut out = vec![0.0; n * c * ho * wo];
    for p in 0..n * c {
        let xp = &x.data()[p * h * w..(p + 1) * h * w];
        let op = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..h {
            for xx in 0..w {
                op[(y / kh) * wo + xx / kw] += xp[y * w + xx];
            }
        }
        op.iter_mut().for_each(|v| *v *= inv);
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

pub fn mean_pool2d_backward(x_dims: &[usize], kh: usize, kw: usize, grad: &Tensor) -> Result<Tensor, NumError> {
    let [n, c, h, w] = [x_dims[0], x_dims[1], x_dims[2], x_dims[3]];
    let (ho, wo) = (h / kh, w / kw);
    let inv = 1.0 / (kh * kw) as f64;
    let mut dx = vec![0.0; n * c * h * w];
    for p in 0..n * c {
        let gp = &grad.data()[p * ho * wo..(p + 1) * ho * wo];
        let dp = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                dp[y * w + xx] = gp[(y / kh) * wo + xx / kw] * inv;
            }
        }
    }
    Tensor::new(x_dims.to_vec(), dx)
}

/// Channel axis is dim 1; statistics run over every other axis.
fn channel_layout(x: &Tensor) -> Result<(usize, usize, usize), NumError> {
    let dims = x.dims();
    if dims.len() < 2 {
        return Err(shape_err(format!("batch_norm: dims {dims:?} lack a channel axis")));
    }
    let inner: usize = dims[2..].iter().product();
    Ok((dims[0], dims[1], inner))
}

/// Per-channel batch statistics `(mean, biased variance)`.
pub fn channel_stats(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>), NumError> {
    let (n, c, inner) = channel_layout(x)?;
    let m = (n * inner) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * inner;
            mean[ch] += x.data()[off..off + inner].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * inner;
            var[ch] += x.data()[off..off + inner]
                .iter()
                .map(|v| (v - mean[ch]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    Ok((mean, var))
}

/// Affine normalisation with the given per-channel statistics.
pub fn batch_norm_with_stats(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
) -> Result<Tensor, NumError> {
    let (n, c, inner) = channel_layout(x)?;
    if gamma.len() != c || beta.len() != c || mean.len() != c || var.len() != c {
        return Err(shape_err(format!("batch_norm: {c} channels but parameter length mismatch")));
    }
    let mut out = x.data().to_vec();
    for s in 0..n {
        for ch in 0..c {
            let denom = var[ch] + BN_EPS;
            if denom <= 0.0 {
                return Err(NumError::Domain(format!("batch_norm: variance {} on channel {ch}", var[ch])));
            }
            let scale = gamma.data()[ch] / denom.sqrt();
            let shift = beta.data()[ch] - mean[ch] * scale;
            let off = (s * c + ch) * inner;
            out[off..off + inner].iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }
    Tensor::new(x.dims().to_vec(), out)
}

/// Adjoint of training-mode batch norm (statistics depend on `x`).
/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_train_backward(
    x: &Tensor,
    gamma: &Tensor,
    mean: &[f64],
    var: &[f64],
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NumError> {
    let (n, c, inner) = channel_layout(x)?;
    let m = (n * inner) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dx = vec![0.0; x.len()];
    for ch in 0..c {
        let inv_std = 1.0 / (var[ch] + BN_EPS).sqrt();
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for s in 0..n {
            let off = (s * c + ch) * inner;
            for k in off..off + inner {
                let xhat = (x.data()[k] - mean[ch]) * inv_std;
                sum_g += grad.data()[k];
                sum_gx += grad.data()[k] * xhat;
            }
        }
        dgamma[ch] = sum_gx;
        dbeta[ch] = sum_g;
        let gm = gamma.data()[ch];
        for s in 0..n {
            let off = (s * c + ch) * inner;
            for k in off..off + inner {
                let xhat = (x.data()[k] - mean[ch]) * inv_std;
                dx[k] = gm * inv_std / m * (m * grad.data()[k] - sum_g - xhat * sum_gx);
            }
        }
    }
    Ok((
        Tensor::new(x.dims().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// Adjoint of evaluation-mode batch norm (frozen statistics).
pub fn batch_norm_eval_backward(
    x: &Tensor,
    gamma: &Tensor,
    mean: &[f64],
    var: &[f64],
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NumError> {
    let (n, c, inner) = channel_layout(x)?;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dx = vec![0.0; x.len()];
    for s in 0..n {
        for ch in 0..c {
            let inv_std = 1.0 / (var[ch] + BN_EPS).sqrt();
            let off = (s * c + ch) * inner;
            for k in off..off + inner {
                let gv = grad.data()[k];
                dgamma[ch] += gv * (x.data()[k] - mean[ch]) * inv_std;
                dbeta[ch] += gv;
                dx[k] = gv * gamma.data()[ch] * inv_std;
            }
        }
    }
    Ok((
        Tensor::new(x.dims().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Subgradient 0 at exactly 0.
pub fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Standard normal CDF via `erf`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

/// Horner evaluation of `c[0] + c[1] x + ... + c[d] x^d`.
pub fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Derivative of the polynomial with ascending coefficients `coeffs`.
pub fn horner_derivative(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c)
}

/// Mean softmax cross-entropy over rows of `logits [n, k]`. Returns the loss
/// and the softmax probabilities (needed by the adjoint).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NumError> {
    expect_rank(logits, 2, "cross_entropy logits")?;
    let (n, k) = (logits.dims()[0], logits.dims()[1]);
    if labels.len() != n {
        return Err(shape_err(format!("cross_entropy: {n} rows but {} labels", labels.len())));
    }
    let mut probs = vec![0.0; n * k];
    let mut loss = 0.0;
    for s in 0..n {
        let label = labels[s];
        if label >= k {
            return Err(NumError::Domain(format!("label {label} out of range for {k} classes")));
        }
        let row = &logits.data()[s * k..(s + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for j in 0..k {
            probs[s * k + j] = (row[j] - log_z).exp();
        }
    }
    Ok((loss / n as f64, Tensor::new(vec![n, k], probs)?))
}

pub fn softmax_cross_entropy_backward(probs: &Tensor, labels: &[usize]) -> Tensor {
    let (n, k) = (probs.dims()[0], probs.dims()[1]);
    let mut g = probs.data().to_vec();
    for (s, &label) in labels.iter().enumerate() {
        g[s * k + label] -= 1.0;
    }
    g.iter_mut().for_each(|v| *v /= n as f64);
    Tensor::new(vec![n, k], g).expect("dims preserved")
}

/// Norm selector for the outer norm of the range loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QNorm {
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    Inf,
}

/// Per-sample `max |x|` over one activation input `[n, ...]`, with the flat
/// index of the first maximal element in scan order.
pub fn per_sample_max_abs(x: &Tensor) -> Vec<(f64, usize)> {
    let n = x.dims()[0];
    let inner = x.len() / n;
    (0..n)
        .map(|s| {
            let mut best = (0.0, s * inner);
            for k in s * inner..(s + 1) * inner {
                let v = x.data()[k].abs();
                if v > best.0 {
                    best = (v, k);
                }
            }
            best
        })
        .collect()
}

/// Outer q-norm of a vector of nonnegative layer norms, and its gradient.
pub fn q_norm_with_grad(values: &[f64], q: QNorm) -> (f64, Vec<f64>) {
    match q {
        QNorm::L1 => (values.iter().sum(), vec![1.0; values.len()]),
        QNorm::L2 => {
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let grad = if norm > 0.0 {
                values.iter().map(|v| v / norm).collect()
            } else {
                vec![0.0; values.len()]
            };
            (norm, grad)
        }
        QNorm::Inf => {
            let mut arg = 0;
            for (i, &v) in values.iter().enumerate() {
                if v > values[arg] {
                    arg = i;
                }
            }
            let mut grad = vec![0.0; values.len()];
            if !values.is_empty() {
                grad[arg] = 1.0;
            }
            (values.get(arg).copied().unwrap_or(0.0), grad)
        }
    }
}
