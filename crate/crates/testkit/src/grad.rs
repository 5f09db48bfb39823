//! Central finite-difference checks of the analytic backward passes.
//!
//! Relative error is `|a - n| / max(|a|, |n|, 1e-6)`: entries whose true
//! gradient is tiny are compared absolutely at the floor.

use otoar_core::netspec::{parse_netspec, Padding};
use otoar_core::nn::layers::{self, SeParams};
use otoar_core::nn::{msle_loss, Model, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::rand_tensor;

const FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel: f64,
}

impl GradCheck {
    fn merge(name: &str, parts: impl IntoIterator<Item = (usize, f64)>) -> GradCheck {
        let (checked, max_rel) = parts
            .into_iter()
            .fold((0, 0.0f64), |(n, m), (c, r)| (n + c, if r.is_nan() { f64::NAN } else { m.max(r) }));
        GradCheck {
            name: name.to_string(),
            checked,
            max_rel,
        }
    }
}

/// Compares `analytic` with central differences of `loss`, which receives the
/// perturbed copy of `x`.
pub fn check_against(x: &Tensor, analytic: &[f64], h: f64, mut loss: impl FnMut(&Tensor) -> f64) -> (usize, f64) {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = loss(&probe);
        probe.data_mut()[i] = orig - h;
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        let e = rel_err(analytic[i], (up - down) / (2.0 * h));
        worst = if e.is_nan() { f64::NAN } else { worst.max(e) };
    }
    (x.len(), worst)
}

fn dot(a: &Tensor, r: &Tensor) -> f64 {
    a.data().iter().zip(r.data()).map(|(x, y)| x * y).sum()
}

const H: f64 = 1e-5;

pub fn conv3d(rng: &mut impl Rng, stride: usize, padding: Padding) -> GradCheck {
    let x = rand_tensor(rng, &[2, 4, 5, 3, 2], -1.0, 1.0);
    let w = rand_tensor(rng, &[3, 3, 3, 2, 3], -1.0, 1.0);
    let b = rand_tensor(rng, &[3], -1.0, 1.0);
    let (y, cache) = layers::conv3d_forward(&x, &w, &b, stride, padding).unwrap();
    let r = rand_tensor(rng, y.shape(), -1.0, 1.0);
    let (dx, dw, db) = layers::conv3d_backward(&cache, &w, &r, true);
    let f = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&layers::conv3d(x, w, b, stride, padding).unwrap(), &r);
    GradCheck::merge(
        &format!("conv3d (stride {stride}, {padding:?})"),
        [
            check_against(&x, dx.unwrap().data(), H, |p| f(p, &w, &b)),
            check_against(&w, dw.data(), H, |p| f(&x, p, &b)),
            check_against(&b, db.data(), H, |p| f(&x, &w, p)),
        ],
    )
}

pub fn elu(rng: &mut impl Rng) -> GradCheck {
    let x = rand_tensor(rng, &[200], -3.0, 3.0);
    let r = rand_tensor(rng, &[200], -1.0, 1.0);
    let y = layers::elu(&x);
    let mut dx = r.clone();
    layers::elu_backward_inplace(y.data(), dx.data_mut());
    GradCheck::merge("elu", [check_against(&x, dx.data(), H, |p| dot(&layers::elu(p), &r))])
}

pub fn se_block(rng: &mut impl Rng) -> GradCheck {
    let x = rand_tensor(rng, &[2, 3, 3, 2, 4], -1.0, 1.0);
    let w1 = rand_tensor(rng, &[4, 2], -1.0, 1.0);
    let b1 = rand_tensor(rng, &[2], 0.1, 0.5);
    let w2 = rand_tensor(rng, &[2, 4], -1.0, 1.0);
    let b2 = rand_tensor(rng, &[4], -0.5, 0.5);
    let p = SeParams {
        w1: &w1,
        b1: &b1,
        w2: &w2,
        b2: &b2,
    };
    let (y, cache) = layers::se_forward(&x, p).unwrap();
    let r = rand_tensor(rng, y.shape(), -1.0, 1.0);
    let g = layers::se_backward(&cache, p, &r);
    let f = |x: &Tensor, w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor| {
        dot(&layers::se_block(x, SeParams { w1, b1, w2, b2 }).unwrap(), &r)
    };
    GradCheck::merge(
        "se_block",
        [
            check_against(&x, g.dx.data(), H, |t| f(t, &w1, &b1, &w2, &b2)),
            check_against(&w1, g.dw1.data(), H, |t| f(&x, t, &b1, &w2, &b2)),
            check_against(&b1, g.db1.data(), H, |t| f(&x, &w1, t, &w2, &b2)),
            check_against(&w2, g.dw2.data(), H, |t| f(&x, &w1, &b1, t, &b2)),
            check_against(&b2, g.db2.data(), H, |t| f(&x, &w1, &b1, &w2, t)),
        ],
    )
}

pub fn maxpool3d(rng: &mut impl Rng) -> GradCheck {
    // distinct values 0.01 apart so no perturbation changes an argmax
    let shape = [2, 4, 4, 3, 2];
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    vals.shuffle(rng);
    let x = Tensor::new(shape.to_vec(), vals).unwrap();
    let (y, cache) = layers::maxpool3d_forward(&x, 2, 2).unwrap();
    let r = rand_tensor(rng, y.shape(), -1.0, 1.0);
    let dx = layers::maxpool3d_backward(&cache, &r);
    GradCheck::merge(
        "maxpool3d",
        [check_against(&x, dx.data(), H, |p| dot(&layers::maxpool3d(p, 2, 2).unwrap(), &r))],
    )
}

pub fn dense(rng: &mut impl Rng) -> GradCheck {
    let x = rand_tensor(rng, &[3, 7], -1.0, 1.0);
    let w = rand_tensor(rng, &[7, 5], -1.0, 1.0);
    let b = rand_tensor(rng, &[5], -1.0, 1.0);
    let r = rand_tensor(rng, &[3, 5], -1.0, 1.0);
    let (dx, dw, db) = layers::dense_backward(&x, &w, &r);
    let f = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&layers::dense(x, w, b).unwrap(), &r);
    GradCheck::merge(
        "dense",
        [
            check_against(&x, dx.data(), H, |p| f(p, &w, &b)),
            check_against(&w, dw.data(), H, |p| f(&x, p, &b)),
            check_against(&b, db.data(), H, |p| f(&x, &w, p)),
        ],
    )
}

/// Dropout inside a model, with the mask pinned by the dropout seed.
pub fn dropout(rng: &mut impl Rng) -> GradCheck {
    let spec = parse_netspec("I(3,3,2,1) D(0.4) O(21)").unwrap();
    let model = Model::new(spec, rng.random()).unwrap();
    let x = rand_tensor(rng, &[2, 3, 3, 2, 1], -1.0, 1.0);
    let r = rand_tensor(rng, &[2, 21], -1.0, 1.0);
    let seed = rng.random();
    let trace = model.forward(&x, true, seed).unwrap();
    let (_, dx) = model.backward_with_input(&trace, &r, true);
    let f = |p: &Tensor| dot(&model.forward(p, true, seed).unwrap().output, &r);
    GradCheck::merge("dropout (fixed mask)", [check_against(&x, dx.unwrap().data(), H, f)])
}

pub fn msle(rng: &mut impl Rng) -> GradCheck {
    let pred = rand_tensor(rng, &[4, 21], -0.5, 6.0);
    let target = rand_tensor(rng, &[4, 21], 0.0, 6.0);
    let (_, g) = msle_loss(&pred, &target).unwrap();
    GradCheck::merge(
        "msle_loss",
        [check_against(&pred, g.data(), 1e-5, |p| msle_loss(p, &target).unwrap().0)],
    )
}

/// Every layer type in isolation, each from its own seeded stream.
pub fn layer_suite(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        conv3d(&mut rng, 1, Padding::Same),
        conv3d(&mut rng, 2, Padding::Valid),
        conv3d(&mut rng, 2, Padding::Same),
        elu(&mut rng),
        se_block(&mut rng),
        maxpool3d(&mut rng),
        dense(&mut rng),
        dropout(&mut rng),
        msle(&mut rng),
    ]
}

pub const TINY_MODEL: &str = "I(8,8,8,1) C(4) SE(2) P(2) C(4) SE(2) P(2) FC(8) D(0.2) O(21)";

/// All parameters of a small model with every layer type, MSLE loss, step `h`.
pub fn tiny_model(seed: u64, h: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = parse_netspec(TINY_MODEL).unwrap();
    let mut model = Model::new(spec, seed).unwrap();
    // nonzero biases so no bias gradient is trivially exact
    for p in model.params.iter_mut().filter(|p| p.shape().len() == 1) {
        *p = rand_tensor(&mut rng, p.shape(), -0.1, 0.1);
    }
    let x = rand_tensor(&mut rng, &[2, 8, 8, 8, 1], 0.0, 1.0);
    let target = rand_tensor(&mut rng, &[2, 21], 0.0, 8.0);
    let dropout_seed = rng.random();
    let trace = model.forward(&x, true, dropout_seed).unwrap();
    let (_, g) = msle_loss(&trace.output, &target).unwrap();
    let grads = model.backward(&trace, &g);
    let mut parts = Vec::new();
    for (i, grad) in grads.iter().enumerate() {
        let mut probe = model.clone();
        parts.push(check_against(&model.params[i], grad.data(), h, |p| {
            probe.params[i] = p.clone();
            let out = probe.forward(&x, true, dropout_seed).unwrap().output;
            msle_loss(&out, &target).unwrap().0
        }));
    }
    GradCheck::merge("tiny model (all parameters)", parts)
}
