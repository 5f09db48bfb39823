//! Layer kernels with explicit forward and backward passes.
//!
//! Spatial activations are `[N, W, H, D, C]`, row-major, channels fastest.
//! Convolution weights are `[k, k, k, C_in, C_out]`.

use rand::Rng;

use super::tensor::{gemm, Tensor};
use super::NnError;
use crate::netspec::{conv_out_dim, pool_out_dim, same_padding, Padding};

fn spatial_dims(x: &Tensor, what: &str) -> Result<[usize; 5], NnError> {
    match *x.shape() {
        [n, w, h, d, c] => Ok([n, w, h, d, c]),
        _ => Err(NnError::shape(
            &format!("{what} expects [N, W, H, D, C] input"),
            &[0, 0, 0, 0, 0],
            x.shape(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_low: [usize; 3],
}

impl ConvGeometry {
    fn rows(&self) -> usize {
        self.batch * self.output.iter().product::<usize>()
    }

    fn patch(&self) -> usize {
        self.kernel.pow(3) * self.c_in
    }

    /// Calls `f(col_offset, input_offset, len)` for every run of in-bounds kernel
    /// taps of output rows `rows`, with `col_offset` relative to the first row.
    /// A run spans consecutive `kz` taps when the stride is one, otherwise a single
    /// tap; its values are contiguous on both sides.
    fn for_each_run(&self, rows: std::ops::Range<usize>, mut f: impl FnMut(usize, usize, usize)) {
        let [w, h, d] = self.input;
        let [wo, ho, do_] = self.output;
        let (k, s, c) = (self.kernel, self.stride, self.c_in);
        let patch = self.patch();
        let range = |o: usize, pad: usize, n: usize| {
            // kernel taps [lo, hi) that land inside [0, n)
            let start = (o * s) as isize - pad as isize;
            let lo = (-start).max(0) as usize;
            let hi = ((n as isize - start).max(0) as usize).min(k);
            (start, lo, hi.max(lo))
        };
        for (i, row) in rows.enumerate() {
            let oz = row % do_;
            let oy = row / do_ % ho;
            let ox = row / (do_ * ho) % wo;
            let n = row / (do_ * ho * wo);
            let (sx, x0, x1) = range(ox, self.pad_low[0], w);
            let (sy, y0, y1) = range(oy, self.pad_low[1], h);
            let (sz, z0, z1) = range(oz, self.pad_low[2], d);
            let base_col = i * patch;
            for kx in x0..x1 {
                let ix = (sx + kx as isize) as usize;
                for ky in y0..y1 {
                    let iy = (sy + ky as isize) as usize;
                    let plane = ((n * w + ix) * h + iy) * d;
                    let col = base_col + (kx * k + ky) * k * c;
                    if s == 1 {
                        let iz = (sz + z0 as isize) as usize;
                        f(col + z0 * c, (plane + iz) * c, (z1 - z0) * c);
                    } else {
                        for kz in z0..z1 {
                            let iz = (sz + kz as isize) as usize;
                            f(col + kz * c, (plane + iz) * c, c);
                        }
                    }
                }
            }
        }
    }

    /// Output rows per im2col block, sized to keep a block cache-resident.
    fn block_rows(&self) -> usize {
        (32_768 / self.patch()).max(16)
    }

    fn im2col(&self, x: &[f64], rows: std::ops::Range<usize>, cols: &mut [f64]) {
        cols.fill(0.0);
        self.for_each_run(rows, |col, inp, len| cols[col..col + len].copy_from_slice(&x[inp..inp + len]));
    }
}

/// State kept between a convolution's forward and backward passes.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub geometry: ConvGeometry,
    x: Tensor,
}

pub fn conv_geometry(
    x_shape: [usize; 5],
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry, NnError> {
    let [n, iw, ih, id, c_in] = x_shape;
    let (k, c_out) = match *w.shape() {
        [k1, k2, k3, wc_in, c_out] if k1 == k2 && k2 == k3 => {
            if wc_in != c_in {
                return Err(NnError::shape(
                    "conv3d: weight C_in axis disagrees with input C axis",
                    &[c_in],
                    &[wc_in],
                ));
            }
            (k1, c_out)
        }
        _ => {
            return Err(NnError::shape(
                "conv3d: weight must be [k, k, k, C_in, C_out]",
                &[0, 0, 0, c_in, 0],
                w.shape(),
            ))
        }
    };
    if b.shape() != [c_out] {
        return Err(NnError::shape("conv3d: bias must be [C_out]", &[c_out], b.shape()));
    }
    if stride == 0 {
        return Err(NnError::Config("conv3d: stride must be positive".into()));
    }
    let input = [iw, ih, id];
    let mut output = [0; 3];
    let mut pad_low = [0; 3];
    for a in 0..3 {
        output[a] = conv_out_dim(input[a], k, stride, padding).ok_or_else(|| {
            NnError::shape(
                &format!("conv3d: kernel does not fit spatial axis {a}"),
                &[k],
                &[input[a]],
            )
        })?;
        if padding == Padding::Same {
            pad_low[a] = same_padding(input[a], k, stride).0;
        }
    }
    Ok(ConvGeometry {
        batch: n,
        input,
        output,
        c_in,
        c_out,
        kernel: k,
        stride,
        pad_low,
    })
}

/// 3D cross-correlation plus bias.
pub fn conv3d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor, ConvCache), NnError> {
    let g = conv_geometry(spatial_dims(x, "conv3d")?, w, b, stride, padding)?;
    let (rows, patch, c_out) = (g.rows(), g.patch(), g.c_out);
    let mut y = Vec::with_capacity(rows * c_out);
    for _ in 0..rows {
        y.extend_from_slice(b.data());
    }
    let block = g.block_rows();
    let mut cols = vec![0.0; block * patch];
    for r0 in (0..rows).step_by(block) {
        let r1 = (r0 + block).min(rows);
        let cols = &mut cols[..(r1 - r0) * patch];
        g.im2col(x.data(), r0..r1, cols);
        gemm(r1 - r0, patch, c_out, cols, false, w.data(), false, 1.0, &mut y[r0 * c_out..r1 * c_out]);
    }
    let [wo, ho, do_] = g.output;
    let y = Tensor::new(vec![g.batch, wo, ho, do_, c_out], y)?;
    Ok((y, ConvCache { geometry: g, x: x.clone() }))
}

pub fn conv3d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: Padding) -> Result<Tensor, NnError> {
    conv3d_forward(x, w, b, stride, padding).map(|(y, _)| y)
}

/// Returns `(dx, dw, db)`; `dx` only when requested.
pub fn conv3d_backward(
    cache: &ConvCache,
    w: &Tensor,
    dy: &Tensor,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let g = &cache.geometry;
    let (rows, patch, c_out) = (g.rows(), g.patch(), g.c_out);
    let dyd = dy.data();
    assert_eq!(dyd.len(), rows * c_out, "conv3d backward: dy shape");

    let mut db = Tensor::zeros(&[c_out]);
    for r in dyd.chunks_exact(c_out) {
        for (acc, v) in db.data_mut().iter_mut().zip(r) {
            *acc += v;
        }
    }

    let mut dw = Tensor::zeros(w.shape());
    let mut dx = need_dx.then(|| Tensor::zeros(cache.x.shape()));
    let block = g.block_rows();
    let mut cols = vec![0.0; block * patch];
    for r0 in (0..rows).step_by(block) {
        let r1 = (r0 + block).min(rows);
        let m = r1 - r0;
        let cols = &mut cols[..m * patch];
        let dy_block = &dyd[r0 * c_out..r1 * c_out];
        g.im2col(cache.x.data(), r0..r1, cols);
        gemm(patch, m, c_out, cols, true, dy_block, false, 1.0, dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            gemm(m, c_out, patch, dy_block, false, w.data(), true, 0.0, cols);
            let dxd = dx.data_mut();
            g.for_each_run(r0..r1, |col, inp, len| {
                for (t, s) in dxd[inp..inp + len].iter_mut().zip(&cols[col..col + len]) {
                    *t += s;
                }
            });
        }
    }
    (dx, dw, db)
}

/// Exponential linear unit with alpha = 1, in place.
pub fn elu_inplace(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < -0.5 {
            // no cancellation this far from zero, and exp is much cheaper
            *v = v.exp() - 1.0;
        } else if *v <= 0.0 {
            *v = v.exp_m1();
        }
    }
}

pub fn elu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    elu_inplace(y.data_mut());
    y
}

/// Multiplies `dy` by the ELU derivative expressed through the output `y`.
pub fn elu_backward_inplace(y: &[f64], dy: &mut [f64]) {
    for (g, &out) in dy.iter_mut().zip(y) {
        if out <= 0.0 {
            *g *= out + 1.0;
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// Max pooling with floor semantics. Ties resolve to the lowest input index.
pub fn maxpool3d_forward(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, PoolCache), NnError> {
    let [n, w, h, d, c] = spatial_dims(x, "maxpool3d")?;
    if window == 0 || stride == 0 {
        return Err(NnError::Config("maxpool3d: window and stride must be positive".into()));
    }
    let mut out = [0; 3];
    for (a, dim) in [w, h, d].into_iter().enumerate() {
        out[a] = pool_out_dim(dim, window, stride).ok_or_else(|| {
            NnError::shape(&format!("maxpool3d: window exceeds spatial axis {a}"), &[window], &[dim])
        })?;
    }
    let [wo, ho, do_] = out;
    let total = n * wo * ho * do_ * c;
    let mut y = Vec::with_capacity(total);
    let mut argmax = Vec::with_capacity(total);
    let xd = x.data();
    let mut best = vec![0.0; c];
    let mut best_i = vec![0usize; c];
    for b in 0..n {
        for ox in 0..wo {
            for oy in 0..ho {
                for oz in 0..do_ {
                    let mut first = true;
                    for kx in 0..window {
                        for ky in 0..window {
                            for kz in 0..window {
                                let base =
                                    (((b * w + ox * stride + kx) * h + oy * stride + ky) * d + oz * stride + kz) * c;
                                let voxel = &xd[base..base + c];
                                if first {
                                    best.copy_from_slice(voxel);
                                    best_i.iter_mut().enumerate().for_each(|(ch, i)| *i = base + ch);
                                    first = false;
                                    continue;
                                }
                                for ch in 0..c {
                                    if voxel[ch] > best[ch] {
                                        best[ch] = voxel[ch];
                                        best_i[ch] = base + ch;
                                    }
                                }
                            }
                        }
                    }
                    y.extend_from_slice(&best);
                    argmax.extend_from_slice(&best_i);
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![n, wo, ho, do_, c], y)?,
        PoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool3d(x: &Tensor, window: usize, stride: usize) -> Result<Tensor, NnError> {
    maxpool3d_forward(x, window, stride).map(|(y, _)| y)
}

pub fn maxpool3d_backward(cache: &PoolCache, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(&cache.input_shape);
    let dxd = dx.data_mut();
    for (&i, &g) in cache.argmax.iter().zip(dy.data()) {
        dxd[i] += g;
    }
    dx
}

/// Parameters of a squeeze-and-excitation block: `w1: [C, C/r]`, `w2: [C/r, C]`.
#[derive(Debug, Clone, Copy)]
pub struct SeParams<'a> {
    pub w1: &'a Tensor,
    pub b1: &'a Tensor,
    pub w2: &'a Tensor,
    pub b2: &'a Tensor,
}

#[derive(Debug, Clone)]
pub struct SeCache {
    x: Tensor,
    z: Vec<f64>,
    hidden: Vec<f64>,
    gates: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn se_check(channels: usize, p: &SeParams<'_>) -> Result<usize, NnError> {
    let hidden = match *p.w1.shape() {
        [c, hdn] if c == channels => hdn,
        _ => return Err(NnError::shape("se_block: w1 must be [C, C/r]", &[channels, 0], p.w1.shape())),
    };
    if hidden == 0 || channels % hidden != 0 {
        return Err(NnError::Config(format!(
            "se_block: {channels} channels not divisible into {hidden} hidden units"
        )));
    }
    if p.b1.shape() != [hidden] || p.w2.shape() != [hidden, channels] || p.b2.shape() != [channels] {
        return Err(NnError::shape(
            "se_block: expected b1 [C/r], w2 [C/r, C], b2 [C]",
            &[hidden, hidden, channels, channels],
            &[p.b1.len(), p.w2.shape()[0], p.w2.shape().get(1).copied().unwrap_or(0), p.b2.len()],
        ));
    }
    Ok(hidden)
}

/// Channel gating: `z = spatial mean`, `g = sigmoid(relu(z w1 + b1) w2 + b2)`, `y = g * x`.
pub fn se_forward(x: &Tensor, p: SeParams<'_>) -> Result<(Tensor, SeCache), NnError> {
    let [n, w, h, d, c] = spatial_dims(x, "se_block")?;
    let hidden_units = se_check(c, &p)?;
    let s = w * h * d;
    let xd = x.data();
    let mut z = vec![0.0; n * c];
    for b in 0..n {
        let zb = &mut z[b * c..(b + 1) * c];
        for voxel in xd[b * s * c..(b + 1) * s * c].chunks_exact(c) {
            for (acc, v) in zb.iter_mut().zip(voxel) {
                *acc += v;
            }
        }
        zb.iter_mut().for_each(|v| *v /= s as f64);
    }
    let mut hidden = Vec::with_capacity(n * hidden_units);
    for _ in 0..n {
        hidden.extend_from_slice(p.b1.data());
    }
    gemm(n, c, hidden_units, &z, false, p.w1.data(), false, 1.0, &mut hidden);
    let mut gates = Vec::with_capacity(n * c);
    for _ in 0..n {
        gates.extend_from_slice(p.b2.data());
    }
    let relu: Vec<f64> = hidden.iter().map(|v| v.max(0.0)).collect();
    gemm(n, hidden_units, c, &relu, false, p.w2.data(), false, 1.0, &mut gates);
    gates.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut y = x.clone();
    let yd = y.data_mut();
    for b in 0..n {
        let gb = &gates[b * c..(b + 1) * c];
        for voxel in yd[b * s * c..(b + 1) * s * c].chunks_exact_mut(c) {
            for (v, g) in voxel.iter_mut().zip(gb) {
                *v *= g;
            }
        }
    }
    Ok((
        y,
        SeCache {
            x: x.clone(),
            z,
            hidden,
            gates,
        },
    ))
}

pub fn se_block(x: &Tensor, p: SeParams<'_>) -> Result<Tensor, NnError> {
    se_forward(x, p).map(|(y, _)| y)
}

#[derive(Debug, Clone)]
pub struct SeGrads {
    pub dx: Tensor,
    pub dw1: Tensor,
    pub db1: Tensor,
    pub dw2: Tensor,
    pub db2: Tensor,
}

pub fn se_backward(cache: &SeCache, p: SeParams<'_>, dy: &Tensor) -> SeGrads {
    let shape = cache.x.shape();
    let (n, c) = (shape[0], shape[4]);
    let s = shape[1] * shape[2] * shape[3];
    let hu = p.w1.shape()[1];
    let xd = cache.x.data();
    let dyd = dy.data();

    // d gate pre-activation
    let mut dgate = vec![0.0; n * c];
    for b in 0..n {
        let acc = &mut dgate[b * c..(b + 1) * c];
        let range = b * s * c..(b + 1) * s * c;
        for (xv, gv) in xd[range.clone()].chunks_exact(c).zip(dyd[range].chunks_exact(c)) {
            for ch in 0..c {
                acc[ch] += xv[ch] * gv[ch];
            }
        }
    }
    for (dg, g) in dgate.iter_mut().zip(&cache.gates) {
        *dg *= g * (1.0 - g);
    }

    let relu: Vec<f64> = cache.hidden.iter().map(|v| v.max(0.0)).collect();
    let mut dw2 = Tensor::zeros(p.w2.shape());
    gemm(hu, n, c, &relu, true, &dgate, false, 0.0, dw2.data_mut());
    let mut db2 = Tensor::zeros(&[c]);
    for row in dgate.chunks_exact(c) {
        db2.data_mut().iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }

    let mut dhidden = vec![0.0; n * hu];
    gemm(n, c, hu, &dgate, false, p.w2.data(), true, 0.0, &mut dhidden);
    for (dh, h) in dhidden.iter_mut().zip(&cache.hidden) {
        if *h <= 0.0 {
            *dh = 0.0;
        }
    }
    let mut dw1 = Tensor::zeros(p.w1.shape());
    gemm(c, n, hu, &cache.z, true, &dhidden, false, 0.0, dw1.data_mut());
    let mut db1 = Tensor::zeros(&[hu]);
    for row in dhidden.chunks_exact(hu) {
        db1.data_mut().iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    let mut dz = vec![0.0; n * c];
    gemm(n, hu, c, &dhidden, false, p.w1.data(), true, 0.0, &mut dz);

    let mut dx = Tensor::zeros(shape);
    let dxd = dx.data_mut();
    let inv_s = 1.0 / s as f64;
    for b in 0..n {
        let gb = &cache.gates[b * c..(b + 1) * c];
        let dzb = &dz[b * c..(b + 1) * c];
        let range = b * s * c..(b + 1) * s * c;
        for (out, gv) in dxd[range.clone()].chunks_exact_mut(c).zip(dyd[range].chunks_exact(c)) {
            for ch in 0..c {
                out[ch] = gv[ch] * gb[ch] + dzb[ch] * inv_s;
            }
        }
    }
    SeGrads { dx, dw1, db1, dw2, db2 }
}

/// Affine map `x w + b` with `x: [N, in]`, `w: [in, out]`.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let (n, input) = match *x.shape() {
        [n, i] => (n, i),
        _ => return Err(NnError::shape("dense expects [N, in] input", &[0, 0], x.shape())),
    };
    let out = match *w.shape() {
        [i, o] if i == input => o,
        _ => return Err(NnError::shape("dense: weight must be [in, out]", &[input, 0], w.shape())),
    };
    if b.shape() != [out] {
        return Err(NnError::shape("dense: bias must be [out]", &[out], b.shape()));
    }
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(b.data());
    }
    gemm(n, input, out, x.data(), false, w.data(), false, 1.0, &mut y);
    Tensor::new(vec![n, out], y)
}

/// Returns `(dx, dw, db)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, input) = (x.shape()[0], x.shape()[1]);
    let out = w.shape()[1];
    let mut dw = Tensor::zeros(w.shape());
    gemm(input, n, out, x.data(), true, dy.data(), false, 0.0, dw.data_mut());
    let mut db = Tensor::zeros(&[out]);
    for row in dy.data().chunks_exact(out) {
        db.data_mut().iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    let mut dx = Tensor::zeros(x.shape());
    gemm(n, out, input, dy.data(), false, w.data(), true, 0.0, dx.data_mut());
    (dx, dw, db)
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Applies dropout in training; the identity otherwise. Returns the mask used.
pub fn dropout(
    x: &Tensor,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<(Tensor, Option<Vec<f64>>), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training {
        return Ok((x.clone(), None));
    }
    let mask = dropout_mask(x.len(), rate, rng);
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
    Ok((y, Some(mask)))
}
