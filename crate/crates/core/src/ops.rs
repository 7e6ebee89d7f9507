//! Forward and backward kernels for the tensor operations used by the model.
//!
//! Every kernel here is a pure function over [`Tensor`]s. The autograd tape in
//! [`crate::graph`] wraps them; the public band-split API calls the forward
//! halves directly.

use rayon::prelude::*;

use crate::tensor::Tensor;

/// `c = a · b (+ beta · c)` for row-major matrices. `a` is m×k (stored k×m
/// when `a_t`), `b` is k×n (stored n×k when `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major blocks whose lengths are checked in the debug assertion.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a grouped 2-d convolution over (frequency, time).
///
/// Frequency always uses stride 1 and "same" padding; time may be strided.
/// Input samples outside the signal read as zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub groups: usize,
    pub kf: usize,
    pub kt: usize,
    pub stride_t: usize,
    pub pad_t: usize,
    pub out_t: usize,
}

impl ConvGeom {
    /// Stride-1 convolution with same padding on both axes.
    pub fn same(groups: usize, k: usize, frames: usize) -> Self {
        ConvGeom { groups, kf: k, kt: k, stride_t: 1, pad_t: (k - 1) / 2, out_t: frames }
    }

    /// Non-overlapping time downsampling: kernel (1, factor), stride factor,
    /// output `ceil(frames / factor)` with implicit zero padding at the end.
    pub fn downsample(groups: usize, factor: usize, frames: usize) -> Self {
        ConvGeom { groups, kf: 1, kt: factor, stride_t: factor, pad_t: 0, out_t: frames.div_ceil(factor) }
    }

    fn is_pointwise(&self, frames: usize) -> bool {
        self.kf == 1 && self.kt == 1 && self.stride_t == 1 && self.pad_t == 0 && self.out_t == frames
    }
}

fn im2col(x: &[f64], cin_g: usize, f: usize, t: usize, geom: &ConvGeom, cols: &mut [f64]) {
    let ncol = f * geom.out_t;
    let pad_f = (geom.kf - 1) / 2;
    for ci in 0..cin_g {
        for a in 0..geom.kf {
            for j in 0..geom.kt {
                let row = (ci * geom.kf + a) * geom.kt + j;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for fo in 0..f {
                    let fi = fo as isize + a as isize - pad_f as isize;
                    let drow = &mut dst[fo * geom.out_t..(fo + 1) * geom.out_t];
                    if fi < 0 || fi >= f as isize {
                        drow.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(ci * f + fi as usize) * t..(ci * f + fi as usize + 1) * t];
                    for (to, d) in drow.iter_mut().enumerate() {
                        let ti = (to * geom.stride_t + j) as isize - geom.pad_t as isize;
                        *d = if ti >= 0 && (ti as usize) < t { src[ti as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], cin_g: usize, f: usize, t: usize, geom: &ConvGeom, dx: &mut [f64]) {
    let ncol = f * geom.out_t;
    let pad_f = (geom.kf - 1) / 2;
    for ci in 0..cin_g {
        for a in 0..geom.kf {
            for j in 0..geom.kt {
                let row = (ci * geom.kf + a) * geom.kt + j;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for fo in 0..f {
                    let fi = fo as isize + a as isize - pad_f as isize;
                    if fi < 0 || fi >= f as isize {
                        continue;
                    }
                    let base = (ci * f + fi as usize) * t;
                    for to in 0..geom.out_t {
                        let ti = (to * geom.stride_t + j) as isize - geom.pad_t as isize;
                        if ti >= 0 && (ti as usize) < t {
                            dx[base + ti as usize] += src[fo * geom.out_t + to];
                        }
                    }
                }
            }
        }
    }
}

/// Grouped convolution. `x`: (cin, F, T); `w`: (cout, cin/groups, kf, kt);
/// `b`: (cout). Returns (cout, F, out_t).
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, geom: &ConvGeom) -> Tensor {
    let (cin, f, t) = (x.dim(0), x.dim(1), x.dim(2));
    let cout = w.dim(0);
    let g = geom.groups;
    let (cin_g, cout_g) = (cin / g, cout / g);
    assert!(cin % g == 0 && cout % g == 0, "conv channels must divide into {g} groups");
    assert_eq!(w.shape(), &[cout, cin_g, geom.kf, geom.kt], "conv weight shape");
    let r = cin_g * geom.kf * geom.kt;
    let ncol = f * geom.out_t;
    let mut out = Tensor::zeros(&[cout, f, geom.out_t]);
    let pointwise = geom.is_pointwise(t);
    out.data_mut().par_chunks_mut(cout_g * ncol).enumerate().for_each(|(gi, og)| {
        let xg = &x.data()[gi * cin_g * f * t..(gi + 1) * cin_g * f * t];
        let wg = &w.data()[gi * cout_g * r..(gi + 1) * cout_g * r];
        if pointwise {
            gemm(cout_g, r, ncol, wg, false, xg, false, og, 0.0);
        } else {
            let mut cols = vec![0.0; r * ncol];
            im2col(xg, cin_g, f, t, geom, &mut cols);
            gemm(cout_g, r, ncol, wg, false, &cols, false, og, 0.0);
        }
        if let Some(b) = b {
            for (co, row) in og.chunks_mut(ncol).enumerate() {
                let bias = b.data()[gi * cout_g + co];
                row.iter_mut().for_each(|v| *v += bias);
            }
        }
    });
    out
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    geom: &ConvGeom,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (cin, f, t) = (x.dim(0), x.dim(1), x.dim(2));
    let cout = w.dim(0);
    let g = geom.groups;
    let (cin_g, cout_g) = (cin / g, cout / g);
    let r = cin_g * geom.kf * geom.kt;
    let ncol = f * geom.out_t;
    let pointwise = geom.is_pointwise(t);

    let per_group: Vec<(Vec<f64>, Vec<f64>)> = (0..g)
        .into_par_iter()
        .map(|gi| {
            let xg = &x.data()[gi * cin_g * f * t..(gi + 1) * cin_g * f * t];
            let wg = &w.data()[gi * cout_g * r..(gi + 1) * cout_g * r];
            let dyg = &dy.data()[gi * cout_g * ncol..(gi + 1) * cout_g * ncol];
            let mut dwg = vec![0.0; cout_g * r];
            let mut dxg = Vec::new();
            if pointwise {
                gemm(cout_g, ncol, r, dyg, false, xg, true, &mut dwg, 0.0);
                if need_dx {
                    dxg = vec![0.0; r * ncol];
                    gemm(r, cout_g, ncol, wg, true, dyg, false, &mut dxg, 0.0);
                }
            } else {
                let mut cols = vec![0.0; r * ncol];
                im2col(xg, cin_g, f, t, geom, &mut cols);
                gemm(cout_g, ncol, r, dyg, false, &cols, true, &mut dwg, 0.0);
                if need_dx {
                    gemm(r, cout_g, ncol, wg, true, dyg, false, &mut cols, 0.0);
                    dxg = vec![0.0; cin_g * f * t];
                    col2im(&cols, cin_g, f, t, geom, &mut dxg);
                }
            }
            (dxg, dwg)
        })
        .collect();

    let mut dw = Tensor::zeros(w.shape());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for (gi, (dxg, dwg)) in per_group.into_iter().enumerate() {
        dw.data_mut()[gi * cout_g * r..(gi + 1) * cout_g * r].copy_from_slice(&dwg);
        if let Some(dx) = dx.as_mut() {
            dx.data_mut()[gi * cin_g * f * t..(gi + 1) * cin_g * f * t].copy_from_slice(&dxg);
        }
    }
    let mut db = Tensor::zeros(&[cout]);
    for (co, row) in dy.data().chunks(ncol).enumerate() {
        db.data_mut()[co] = row.iter().sum();
    }
    (dx, dw, db)
}

/// Grouped transposed convolution over time with kernel == stride, cropped to
/// `out_t` frames. `x`: (cin, F, T); `w`: (cin, cout/groups, stride).
pub fn conv_transpose_time(x: &Tensor, w: &Tensor, b: Option<&Tensor>, groups: usize, out_t: usize) -> Tensor {
    let (cin, f, t) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout_g, s) = (w.dim(1), w.dim(2));
    let cin_g = cin / groups;
    let cout = cout_g * groups;
    assert!(out_t <= t * s, "transposed conv cannot produce {out_t} frames from {t}x{s}");
    let mut out = Tensor::zeros(&[cout, f, out_t]);
    let ft = f * t;
    out.data_mut().par_chunks_mut(cout_g * f * out_t).enumerate().for_each(|(gi, og)| {
        let xg = &x.data()[gi * cin_g * ft..(gi + 1) * cin_g * ft];
        // wg viewed as (cin_g) × (cout_g·s); z = wgᵀ · xg is (cout_g·s) × (F·T).
        let wg = &w.data()[gi * cin_g * cout_g * s..(gi + 1) * cin_g * cout_g * s];
        let mut z = vec![0.0; cout_g * s * ft];
        gemm(cout_g * s, cin_g, ft, wg, true, xg, false, &mut z, 0.0);
        for co in 0..cout_g {
            let bias = b.map_or(0.0, |b| b.data()[gi * cout_g + co]);
            for fi in 0..f {
                let orow = &mut og[(co * f + fi) * out_t..(co * f + fi + 1) * out_t];
                for (to, o) in orow.iter_mut().enumerate() {
                    let (ti, j) = (to / s, to % s);
                    *o = z[(co * s + j) * ft + fi * t + ti] + bias;
                }
            }
        }
    });
    out
}

pub fn conv_transpose_time_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    groups: usize,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (cin, f, t) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout_g, s) = (w.dim(1), w.dim(2));
    let cin_g = cin / groups;
    let cout = cout_g * groups;
    let out_t = dy.dim(2);
    let ft = f * t;
    let per_group: Vec<(Vec<f64>, Vec<f64>)> = (0..groups)
        .into_par_iter()
        .map(|gi| {
            let xg = &x.data()[gi * cin_g * ft..(gi + 1) * cin_g * ft];
            let wg = &w.data()[gi * cin_g * cout_g * s..(gi + 1) * cin_g * cout_g * s];
            let mut dz = vec![0.0; cout_g * s * ft];
            for co in 0..cout_g {
                for fi in 0..f {
                    let drow = &dy.data()[((gi * cout_g + co) * f + fi) * out_t..][..out_t];
                    for (to, &d) in drow.iter().enumerate() {
                        let (ti, j) = (to / s, to % s);
                        dz[(co * s + j) * ft + fi * t + ti] = d;
                    }
                }
            }
            let mut dwg = vec![0.0; cin_g * cout_g * s];
            gemm(cin_g, ft, cout_g * s, xg, false, &dz, true, &mut dwg, 0.0);
            let mut dxg = Vec::new();
            if need_dx {
                dxg = vec![0.0; cin_g * ft];
                gemm(cin_g, cout_g * s, ft, wg, false, &dz, false, &mut dxg, 0.0);
            }
            (dxg, dwg)
        })
        .collect();
    let mut dw = Tensor::zeros(w.shape());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let wlen = cin_g * cout_g * s;
    for (gi, (dxg, dwg)) in per_group.into_iter().enumerate() {
        dw.data_mut()[gi * wlen..(gi + 1) * wlen].copy_from_slice(&dwg);
        if let Some(dx) = dx.as_mut() {
            dx.data_mut()[gi * cin_g * ft..(gi + 1) * cin_g * ft].copy_from_slice(&dxg);
        }
    }
    let mut db = Tensor::zeros(&[cout]);
    for (co, plane) in dy.data().chunks(f * out_t).enumerate() {
        db.data_mut()[co] = plane.iter().sum();
    }
    (dx, dw, db)
}

pub const NORM_EPS: f64 = 1e-5;

/// Group normalization over (channels-in-group, F, T) with per-channel affine.
/// Returns the output and the per-group (mean, inverse std).
pub fn group_norm(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor) -> (Tensor, Vec<(f64, f64)>) {
    let c = x.dim(0);
    let plane: usize = x.shape()[1..].iter().product();
    let cg = c / groups;
    let n = (cg * plane) as f64;
    let mut out = Tensor::zeros(x.shape());
    let mut stats = Vec::with_capacity(groups);
    for gi in 0..groups {
        let xs = &x.data()[gi * cg * plane..(gi + 1) * cg * plane];
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        stats.push((mean, inv));
        for cl in 0..cg {
            let ch = gi * cg + cl;
            let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
            let src = &x.data()[ch * plane..(ch + 1) * plane];
            let dst = &mut out.data_mut()[ch * plane..(ch + 1) * plane];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * inv * ga + be;
            }
        }
    }
    (out, stats)
}

pub fn group_norm_backward(
    x: &Tensor,
    groups: usize,
    gamma: &Tensor,
    stats: &[(f64, f64)],
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let c = x.dim(0);
    let plane: usize = x.shape()[1..].iter().product();
    let cg = c / groups;
    let n = (cg * plane) as f64;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for gi in 0..groups {
        let (mean, inv) = stats[gi];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for cl in 0..cg {
            let ch = gi * cg + cl;
            let ga = gamma.data()[ch];
            let xs = &x.data()[ch * plane..(ch + 1) * plane];
            let dys = &dy.data()[ch * plane..(ch + 1) * plane];
            let (mut dg, mut db) = (0.0, 0.0);
            for (xv, dv) in xs.iter().zip(dys) {
                let xhat = (xv - mean) * inv;
                dg += dv * xhat;
                db += dv;
                sum_dxhat += dv * ga;
                sum_dxhat_xhat += dv * ga * xhat;
            }
            dgamma.data_mut()[ch] = dg;
            dbeta.data_mut()[ch] = db;
        }
        let (m1, m2) = (sum_dxhat / n, sum_dxhat_xhat / n);
        for cl in 0..cg {
            let ch = gi * cg + cl;
            let ga = gamma.data()[ch];
            for i in ch * plane..(ch + 1) * plane {
                let xhat = (x.data()[i] - mean) * inv;
                dx.data_mut()[i] = inv * (dy.data()[i] * ga - m1 - xhat * m2);
            }
        }
    }
    (dx, dgamma, dbeta)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

/// Frequency-axis linear map with one weight matrix per band group.
/// `x`: (C, Fin, T) with C = n_band·cg; `w`: (n_band, Fout, Fin); `b`: (n_band, Fout).
pub fn band_linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (c, fin, t) = (x.dim(0), x.dim(1), x.dim(2));
    let (nb, fout) = (w.dim(0), w.dim(1));
    let cg = c / nb;
    let mut out = Tensor::zeros(&[c, fout, t]);
    out.data_mut().par_chunks_mut(fout * t).enumerate().for_each(|(ch, oc)| {
        let band = ch / cg;
        let wb = &w.data()[band * fout * fin..(band + 1) * fout * fin];
        let xc = &x.data()[ch * fin * t..(ch + 1) * fin * t];
        gemm(fout, fin, t, wb, false, xc, false, oc, 0.0);
        for (fo, row) in oc.chunks_mut(t).enumerate() {
            let bias = b.data()[band * fout + fo];
            row.iter_mut().for_each(|v| *v += bias);
        }
    });
    out
}

pub fn band_linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (c, fin, t) = (x.dim(0), x.dim(1), x.dim(2));
    let (nb, fout) = (w.dim(0), w.dim(1));
    let cg = c / nb;
    let mut dx = Tensor::zeros(x.shape());
    dx.data_mut().par_chunks_mut(fin * t).enumerate().for_each(|(ch, dxc)| {
        let band = ch / cg;
        let wb = &w.data()[band * fout * fin..(band + 1) * fout * fin];
        let dyc = &dy.data()[ch * fout * t..(ch + 1) * fout * t];
        gemm(fin, fout, t, wb, true, dyc, false, dxc, 0.0);
    });
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[nb, fout]);
    for ch in 0..c {
        let band = ch / cg;
        let xc = &x.data()[ch * fin * t..(ch + 1) * fin * t];
        let dyc = &dy.data()[ch * fout * t..(ch + 1) * fout * t];
        gemm(fout, t, fin, dyc, false, xc, true, &mut dw.data_mut()[band * fout * fin..(band + 1) * fout * fin], 1.0);
        for (fo, row) in dyc.chunks(t).enumerate() {
            db.data_mut()[band * fout + fo] += row.iter().sum::<f64>();
        }
    }
    (dx, dw, db)
}

/// Linear map over the last axis: `y = x · wᵀ + b`, `w`: (dout, din).
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let din = *x.shape().last().unwrap();
    let dout = w.dim(0);
    let rows = x.numel() / din;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    let mut out = Tensor::zeros(&shape);
    gemm(rows, din, dout, x.data(), false, w.data(), true, out.data_mut(), 0.0);
    if let Some(b) = b {
        for row in out.data_mut().chunks_mut(dout) {
            row.iter_mut().zip(b.data()).for_each(|(v, bb)| *v += bb);
        }
    }
    out
}

pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let din = *x.shape().last().unwrap();
    let dout = w.dim(0);
    let rows = x.numel() / din;
    let mut dx = Tensor::zeros(x.shape());
    gemm(rows, dout, din, dy.data(), false, w.data(), false, dx.data_mut(), 0.0);
    let mut dw = Tensor::zeros(w.shape());
    gemm(dout, rows, din, dy.data(), true, x.data(), false, dw.data_mut(), 0.0);
    let mut db = Tensor::zeros(&[dout]);
    for row in dy.data().chunks(dout) {
        db.data_mut().iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    (dx, dw, db)
}

/// Layer normalization over the last axis. Returns output and per-row
/// (mean, inverse std).
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> (Tensor, Vec<(f64, f64)>) {
    let d = *x.shape().last().unwrap();
    let mut out = Tensor::zeros(x.shape());
    let mut stats = Vec::with_capacity(x.numel() / d);
    for (src, dst) in x.data().chunks(d).zip(out.data_mut().chunks_mut(d)) {
        let mean = src.iter().sum::<f64>() / d as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        stats.push((mean, inv));
        for i in 0..d {
            dst[i] = (src[i] - mean) * inv * gamma.data()[i] + beta.data()[i];
        }
    }
    (out, stats)
}

pub fn layer_norm_backward(x: &Tensor, gamma: &Tensor, stats: &[(f64, f64)], dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let d = *x.shape().last().unwrap();
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[d]);
    let mut dbeta = Tensor::zeros(&[d]);
    let rows = x.data().chunks(d).zip(dy.data().chunks(d)).zip(dx.data_mut().chunks_mut(d));
    for (((xs, dys), dxs), &(mean, inv)) in rows.zip(stats) {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..d {
            let xhat = (xs[i] - mean) * inv;
            let dxhat = dys[i] * gamma.data()[i];
            dgamma.data_mut()[i] += dys[i] * xhat;
            dbeta.data_mut()[i] += dys[i];
            m1 += dxhat;
            m2 += dxhat * xhat;
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for i in 0..d {
            let xhat = (xs[i] - mean) * inv;
            dxs[i] = inv * (dys[i] * gamma.data()[i] - m1 - xhat * m2);
        }
    }
    (dx, dgamma, dbeta)
}

/// Axis permutation of a 3-d tensor: output axis `i` is input axis `perm[i]`.
pub fn permute3(x: &Tensor, perm: [usize; 3]) -> Tensor {
    let s = x.shape();
    let out_shape = [s[perm[0]], s[perm[1]], s[perm[2]]];
    let in_strides = [s[1] * s[2], s[2], 1];
    let st = [in_strides[perm[0]], in_strides[perm[1]], in_strides[perm[2]]];
    let mut out = Tensor::zeros(&out_shape);
    let mut idx = 0;
    let data = x.data();
    let od = out.data_mut();
    for i in 0..out_shape[0] {
        for j in 0..out_shape[1] {
            let base = i * st[0] + j * st[1];
            for k in 0..out_shape[2] {
                od[idx] = data[base + k * st[2]];
                idx += 1;
            }
        }
    }
    out
}

pub fn inverse_perm(perm: [usize; 3]) -> [usize; 3] {
    let mut inv = [0; 3];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Nearest-neighbour time upsampling: `y[.., t] = x[.., t / factor]` for `t < out_t`.
pub fn repeat_time(x: &Tensor, factor: usize, out_t: usize) -> Tensor {
    let t = *x.shape().last().unwrap();
    assert!(out_t <= t * factor);
    let rows = x.numel() / t;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_t;
    let mut out = Tensor::zeros(&shape);
    for r in 0..rows {
        let src = &x.data()[r * t..(r + 1) * t];
        for (to, o) in out.data_mut()[r * out_t..(r + 1) * out_t].iter_mut().enumerate() {
            *o = src[to / factor];
        }
    }
    out
}

pub fn repeat_time_backward(dy: &Tensor, factor: usize, in_t: usize) -> Tensor {
    let out_t = *dy.shape().last().unwrap();
    let rows = dy.numel() / out_t;
    let mut shape = dy.shape().to_vec();
    *shape.last_mut().unwrap() = in_t;
    let mut dx = Tensor::zeros(&shape);
    for r in 0..rows {
        for to in 0..out_t {
            dx.data_mut()[r * in_t + to / factor] += dy.data()[r * out_t + to];
        }
    }
    dx
}
