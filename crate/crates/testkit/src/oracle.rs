//! Straightforward scalar re-implementations of the layer kernels.
//!
//! Layouts match the engine: activations `[N, W, H, D, C]`, conv weights
//! `[k, k, k, C_in, C_out]`, all row-major.

use otoar_core::netspec::Padding;
use otoar_core::nn::layers::{self, SeParams};
use otoar_core::nn::Tensor;
use rand::Rng;

use crate::{max_abs_diff, rand_tensor};

fn out_and_pad(input: usize, k: usize, s: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => (input >= k).then(|| ((input - k) / s + 1, 0)),
        Padding::Same => {
            let out = input.div_ceil(s);
            let needed = ((out - 1) * s + k).saturating_sub(input);
            Some((out, needed / 2))
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv3d(
    x: &[f64],
    [n, w, h, d, cin]: [usize; 5],
    weights: &[f64],
    k: usize,
    cout: usize,
    bias: &[f64],
    stride: usize,
    padding: Padding,
) -> Option<(Vec<f64>, [usize; 5])> {
    let (wo, pw) = out_and_pad(w, k, stride, padding)?;
    let (ho, ph) = out_and_pad(h, k, stride, padding)?;
    let (dd, pd) = out_and_pad(d, k, stride, padding)?;
    let mut y = vec![0.0; n * wo * ho * dd * cout];
    for b in 0..n {
        for ox in 0..wo {
            for oy in 0..ho {
                for oz in 0..dd {
                    for co in 0..cout {
                        let mut acc = bias[co];
                        for kx in 0..k {
                            for ky in 0..k {
                                for kz in 0..k {
                                    let ix = (ox * stride + kx) as i64 - pw as i64;
                                    let iy = (oy * stride + ky) as i64 - ph as i64;
                                    let iz = (oz * stride + kz) as i64 - pd as i64;
                                    if ix < 0 || iy < 0 || iz < 0 || ix >= w as i64 || iy >= h as i64 || iz >= d as i64 {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        let xi = (((b * w + ix as usize) * h + iy as usize) * d + iz as usize) * cin + ci;
                                        let wi = (((kx * k + ky) * k + kz) * cin + ci) * cout + co;
                                        acc += x[xi] * weights[wi];
                                    }
                                }
                            }
                        }
                        y[(((b * wo + ox) * ho + oy) * dd + oz) * cout + co] = acc;
                    }
                }
            }
        }
    }
    Some((y, [n, wo, ho, dd, cout]))
}

pub fn maxpool3d(x: &[f64], [n, w, h, d, c]: [usize; 5], window: usize, stride: usize) -> (Vec<f64>, Vec<usize>) {
    let o = |i: usize| if i < window { 0 } else { (i - window) / stride + 1 };
    let (wo, ho, dd) = (o(w), o(h), o(d));
    let mut y = Vec::new();
    let mut arg = Vec::new();
    for b in 0..n {
        for ox in 0..wo {
            for oy in 0..ho {
                for oz in 0..dd {
                    for ch in 0..c {
                        // first strictly greater value wins, i.e. ties go to the lowest index
                        let mut best = (f64::NEG_INFINITY, usize::MAX);
                        for kx in 0..window {
                            for ky in 0..window {
                                for kz in 0..window {
                                    let i = (((b * w + ox * stride + kx) * h + oy * stride + ky) * d + oz * stride + kz) * c + ch;
                                    if best.1 == usize::MAX || x[i] > best.0 {
                                        best = (x[i], i);
                                    }
                                }
                            }
                        }
                        y.push(best.0);
                        arg.push(best.1);
                    }
                }
            }
        }
    }
    (y, arg)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `w1: [C, C/r]`, `w2: [C/r, C]`.
pub fn se_block(x: &[f64], [n, w, h, d, c]: [usize; 5], w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64]) -> Vec<f64> {
    let hidden = b1.len();
    let s = w * h * d;
    let mut y = x.to_vec();
    for b in 0..n {
        let mut z = vec![0.0; c];
        for v in 0..s {
            for ch in 0..c {
                z[ch] += x[(b * s + v) * c + ch];
            }
        }
        for zc in z.iter_mut() {
            *zc /= s as f64;
        }
        let mut u = vec![0.0; hidden];
        for j in 0..hidden {
            let mut acc = b1[j];
            for ch in 0..c {
                acc += z[ch] * w1[ch * hidden + j];
            }
            u[j] = acc.max(0.0);
        }
        for ch in 0..c {
            let mut acc = b2[ch];
            for j in 0..hidden {
                acc += u[j] * w2[j * c + ch];
            }
            let g = sigmoid(acc);
            for v in 0..s {
                y[(b * s + v) * c + ch] *= g;
            }
        }
    }
    y
}

/// Largest output discrepancy of each kernel against its oracle over one random case.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleGap {
    pub conv: f64,
    pub pool: f64,
    pub pool_argmax_mismatch: usize,
    pub se: f64,
}

fn shape(t: &Tensor) -> [usize; 5] {
    let s = t.shape();
    [s[0], s[1], s[2], s[3], s[4]]
}

/// One randomized comparison with spatial extents up to 6 and at most 4 channels.
pub fn random_case(rng: &mut impl Rng) -> OracleGap {
    let n = rng.random_range(1..=2);
    let dims = [0; 3].map(|_| rng.random_range(1..=6));
    let c = rng.random_range(1..=4);
    let x = rand_tensor(rng, &[n, dims[0], dims[1], dims[2], c], -1.0, 1.0);
    let xs = shape(&x);

    let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
    let min_dim = *dims.iter().min().unwrap();
    let k = rng.random_range(1..=if padding == Padding::Valid { min_dim.min(3) } else { 3 });
    let stride = rng.random_range(1..=2);
    let cout = rng.random_range(1..=4);
    let w = rand_tensor(rng, &[k, k, k, c, cout], -1.0, 1.0);
    let b = rand_tensor(rng, &[cout], -1.0, 1.0);
    let got = layers::conv3d(&x, &w, &b, stride, padding).expect("valid conv case");
    let (want, want_shape) = conv3d(x.data(), xs, w.data(), k, cout, b.data(), stride, padding).expect("oracle shape");
    let conv = if got.shape() == want_shape { max_abs_diff(got.data(), &want) } else { f64::INFINITY };

    let window = rng.random_range(1..=min_dim.min(3));
    let pstride = rng.random_range(1..=3);
    // quantized values produce ties, exercising the tie rule
    let xq = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| (v * 3.0).round()).collect()).unwrap();
    let (got, cache) = layers::maxpool3d_forward(&xq, window, pstride).expect("valid pool case");
    let (want, want_arg) = maxpool3d(xq.data(), xs, window, pstride);
    let pool = max_abs_diff(got.data(), &want);
    let ones = Tensor::filled(got.shape(), 1.0);
    let routed = layers::maxpool3d_backward(&cache, &ones);
    let mut want_routed = vec![0.0; xq.len()];
    for i in want_arg {
        want_routed[i] += 1.0;
    }
    let pool_argmax_mismatch = routed.data().iter().zip(&want_routed).filter(|(a, b)| a != b).count();

    let divisors: Vec<usize> = (1..=c).filter(|r| c % r == 0).collect();
    let r = divisors[rng.random_range(0..divisors.len())];
    let hidden = c / r;
    let w1 = rand_tensor(rng, &[c, hidden], -1.0, 1.0);
    let b1 = rand_tensor(rng, &[hidden], -0.5, 0.5);
    let w2 = rand_tensor(rng, &[hidden, c], -1.0, 1.0);
    let b2 = rand_tensor(rng, &[c], -0.5, 0.5);
    let p = SeParams {
        w1: &w1,
        b1: &b1,
        w2: &w2,
        b2: &b2,
    };
    let got = layers::se_block(&x, p).expect("valid se case");
    let want = se_block(x.data(), xs, w1.data(), b1.data(), w2.data(), b2.data());
    let se = max_abs_diff(got.data(), &want);

    OracleGap {
        conv,
        pool,
        pool_argmax_mismatch,
        se,
    }
}
