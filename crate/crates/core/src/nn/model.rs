use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, ConvCache, PoolCache, SeCache, SeParams};
use super::tensor::Tensor;
use super::NnError;
use crate::netspec::{LayerSpec, NetworkSpec, Shape};

#[derive(Debug, Clone)]
struct LayerPlan {
    spec: LayerSpec,
    input: Shape,
    output: Shape,
    params: Range<usize>,
}

/// A network instance: its description plus every weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: NetworkSpec,
    pub params: Vec<Tensor>,
    pub seed: u64,
}

enum Cache {
    Conv { conv: ConvCache, y: Tensor },
    Se(SeCache),
    Pool(PoolCache),
    Dense { x: Tensor, y: Tensor },
    Output { x: Tensor },
    Dropout(Option<Vec<f64>>),
}

/// Everything the backward pass needs from one training forward pass.
pub struct Trace {
    input_shape: Vec<usize>,
    caches: Vec<(Vec<usize>, Cache)>,
    pub output: Tensor,
}

fn plan(spec: &NetworkSpec) -> Result<Vec<LayerPlan>, NnError> {
    let rows = spec
        .validate()
        .map_err(|e| NnError::Config(e.to_string()))?;
    let mut next = 0;
    let mut out = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let n = match layer {
            LayerSpec::Conv { .. } | LayerSpec::Dense { .. } | LayerSpec::Output { .. } => 2,
            LayerSpec::SqueezeExcite { .. } => 4,
            LayerSpec::Pool { .. } | LayerSpec::Dropout { .. } => 0,
        };
        out.push(LayerPlan {
            spec: *layer,
            input: rows[i].output,
            output: rows[i + 1].output,
            params: next..next + n,
        });
        next += n;
    }
    Ok(out)
}

/// `(shape, fan_in)` of every parameter tensor of a layer, weights before biases.
fn param_shapes(p: &LayerPlan) -> Vec<(Vec<usize>, usize)> {
    match (p.spec, p.input) {
        (LayerSpec::Conv { filters, kernel, .. }, Shape::Spatial([.., c])) => {
            let fan = kernel.pow(3) * c;
            vec![(vec![kernel, kernel, kernel, c, filters], fan), (vec![filters], fan)]
        }
        (LayerSpec::SqueezeExcite { ratio }, Shape::Spatial([.., c])) => {
            let h = c / ratio;
            vec![(vec![c, h], c), (vec![h], c), (vec![h, c], h), (vec![c], h)]
        }
        (LayerSpec::Dense { units }, s) | (LayerSpec::Output { units }, s) => {
            let fan = s.numel();
            vec![(vec![fan, units], fan), (vec![units], fan)]
        }
        _ => Vec::new(),
    }
}

impl Model {
    /// Weights drawn from `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, biases zero.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let plans = plan(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for p in &plans {
            for (shape, fan_in) in param_shapes(p) {
                if shape.len() == 1 {
                    params.push(Tensor::zeros(&shape));
                } else {
                    let limit = (6.0 / fan_in as f64).sqrt();
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                    params.push(Tensor::new(shape, data)?);
                }
            }
        }
        Ok(Self { spec, params, seed })
    }

    /// Rebuilds a model from stored tensors, checking them against the spec.
    pub fn from_parts(spec: NetworkSpec, params: Vec<Tensor>, seed: u64) -> Result<Self, NnError> {
        let plans = plan(&spec)?;
        let expected: Vec<Vec<usize>> = plans
            .iter()
            .flat_map(param_shapes)
            .map(|(s, _)| s)
            .collect();
        if expected.len() != params.len() {
            return Err(NnError::shape("parameter count disagrees with spec", &[expected.len()], &[params.len()]));
        }
        for (e, p) in expected.iter().zip(&params) {
            if e.as_slice() != p.shape() {
                return Err(NnError::shape("parameter shape disagrees with spec", e, p.shape()));
            }
        }
        Ok(Self { spec, params, seed })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn plans(&self) -> Vec<LayerPlan> {
        plan(&self.spec).expect("model spec validated at construction")
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.params.len());
        for (i, p) in self.plans().iter().enumerate() {
            let suffixes: &[&str] = match p.spec {
                LayerSpec::SqueezeExcite { .. } => &["w1", "b1", "w2", "b2"],
                _ => &["w", "b"],
            };
            for s in suffixes.iter().take(p.params.len()) {
                names.push(format!("{}.{}.{}", i + 1, p.spec.tag(), s));
            }
        }
        names
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        let i = self.spec.input;
        match *x.shape() {
            [_, w, h, d, c] if [w, h, d, c] == [i.w, i.h, i.d, i.channels] => Ok(()),
            _ => Err(NnError::Layer {
                index: 0,
                source: Box::new(NnError::shape(
                    "batch does not match network input",
                    &[0, i.w, i.h, i.d, i.channels],
                    x.shape(),
                )),
            }),
        }
    }

    /// Inference pass: dropout is the identity.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.run(x, None).map(|t| t.output)
    }

    /// Forward pass with dropout masks drawn from `dropout_seed` when training.
    pub fn forward(&self, x: &Tensor, training: bool, dropout_seed: u64) -> Result<Trace, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        self.run(x, training.then_some(&mut rng))
    }

    fn run(&self, x: &Tensor, mut rng: Option<&mut ChaCha8Rng>) -> Result<Trace, NnError> {
        self.check_input(x)?;
        let n = x.shape()[0];
        let mut act = x.clone();
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        for (i, p) in self.plans().iter().enumerate() {
            let at = |e: NnError| NnError::Layer {
                index: i + 1,
                source: Box::new(e),
            };
            let ps = &self.params[p.params.clone()];
            let in_shape = act.shape().to_vec();
            let cache = match p.spec {
                LayerSpec::Conv { stride, padding, .. } => {
                    let (mut y, conv) = layers::conv3d_forward(&act, &ps[0], &ps[1], stride, padding).map_err(at)?;
                    layers::elu_inplace(y.data_mut());
                    act = y.clone();
                    Cache::Conv { conv, y }
                }
                LayerSpec::SqueezeExcite { .. } => {
                    let (y, c) = layers::se_forward(&act, se_params(ps)).map_err(at)?;
                    act = y;
                    Cache::Se(c)
                }
                LayerSpec::Pool { window, stride } => {
                    let (y, c) = layers::maxpool3d_forward(&act, window, stride).map_err(at)?;
                    act = y;
                    Cache::Pool(c)
                }
                LayerSpec::Dense { .. } => {
                    let flat = flatten(act, n).map_err(at)?;
                    let mut y = layers::dense(&flat, &ps[0], &ps[1]).map_err(at)?;
                    layers::elu_inplace(y.data_mut());
                    act = y.clone();
                    Cache::Dense { x: flat, y }
                }
                LayerSpec::Output { .. } => {
                    let flat = flatten(act, n).map_err(at)?;
                    act = layers::dense(&flat, &ps[0], &ps[1]).map_err(at)?;
                    Cache::Output { x: flat }
                }
                LayerSpec::Dropout { rate } => match rng.as_deref_mut() {
                    Some(r) => {
                        let (y, mask) = layers::dropout(&act, rate, true, r).map_err(at)?;
                        act = y;
                        Cache::Dropout(mask)
                    }
                    None => Cache::Dropout(None),
                },
            };
            debug_assert_eq!(act.len(), n * p.output.numel());
            caches.push((in_shape, cache));
        }
        Ok(Trace {
            input_shape: x.shape().to_vec(),
            caches,
            output: act,
        })
    }

    /// Gradients of every parameter, aligned with `params`, given `dL/d output`.
    pub fn backward(&self, trace: &Trace, d_output: &Tensor) -> Vec<Tensor> {
        self.backward_with_input(trace, d_output, false).0
    }

    /// Also returns `dL/d input` when `need_input_grad` is set.
    pub fn backward_with_input(
        &self,
        trace: &Trace,
        d_output: &Tensor,
        need_input_grad: bool,
    ) -> (Vec<Tensor>, Option<Tensor>) {
        assert_eq!(d_output.shape(), trace.output.shape(), "backward: output gradient shape");
        let mut grads: Vec<Tensor> = self.params.iter().map(Tensor::zeros_like).collect();
        let plans = self.plans();
        let mut delta = d_output.clone();
        for (i, (p, (in_shape, cache))) in plans.iter().zip(&trace.caches).enumerate().rev() {
            let ps = &self.params[p.params.clone()];
            let first = i == 0;
            delta = match cache {
                Cache::Conv { conv, y } => {
                    layers::elu_backward_inplace(y.data(), delta.data_mut());
                    let (dx, dw, db) = layers::conv3d_backward(conv, &ps[0], &delta, !first || need_input_grad);
                    grads[p.params.start] = dw;
                    grads[p.params.start + 1] = db;
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                Cache::Se(c) => {
                    let g = layers::se_backward(c, se_params(ps), &delta);
                    let s = p.params.start;
                    grads[s] = g.dw1;
                    grads[s + 1] = g.db1;
                    grads[s + 2] = g.dw2;
                    grads[s + 3] = g.db2;
                    g.dx
                }
                Cache::Pool(c) => layers::maxpool3d_backward(c, &delta),
                Cache::Dense { x, y } => {
                    layers::elu_backward_inplace(y.data(), delta.data_mut());
                    let (dx, dw, db) = layers::dense_backward(x, &ps[0], &delta);
                    grads[p.params.start] = dw;
                    grads[p.params.start + 1] = db;
                    dx.reshape(in_shape).expect("flatten is invertible")
                }
                Cache::Output { x } => {
                    let (dx, dw, db) = layers::dense_backward(x, &ps[0], &delta);
                    grads[p.params.start] = dw;
                    grads[p.params.start + 1] = db;
                    dx.reshape(in_shape).expect("flatten is invertible")
                }
                Cache::Dropout(mask) => {
                    if let Some(mask) = mask {
                        delta.data_mut().iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                    }
                    delta
                }
            };
        }
        let input_grad = (need_input_grad && delta.shape() == trace.input_shape.as_slice()).then_some(delta);
        (grads, input_grad)
    }
}

fn se_params(ps: &[Tensor]) -> SeParams<'_> {
    SeParams {
        w1: &ps[0],
        b1: &ps[1],
        w2: &ps[2],
        b2: &ps[3],
    }
}

fn flatten(x: Tensor, n: usize) -> Result<Tensor, NnError> {
    let per = x.len() / n;
    x.reshape(&[n, per])
}

/// Stacks per-sample `[W, H, D, C]` inputs (C fastest) into a batch tensor.
pub fn batch_from_samples(samples: &[&[f64]], sample_shape: [usize; 4]) -> Result<Tensor, NnError> {
    let per: usize = sample_shape.iter().product();
    let mut data = Vec::with_capacity(per * samples.len());
    for s in samples {
        if s.len() != per {
            return Err(NnError::shape("sample size", &[per], &[s.len()]));
        }
        data.extend_from_slice(s);
    }
    let [w, h, d, c] = sample_shape;
    Tensor::new(vec![samples.len(), w, h, d, c], data)
}

/// Reorders an x-fastest volume grid into the `[W, H, D]` row-major (z-fastest) layout.
pub fn volume_to_sample(values: &[f64], dims: [usize; 3]) -> Vec<f64> {
    let [w, h, d] = dims;
    let mut out = vec![0.0; w * h * d];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                out[(x * h + y) * d + z] = values[x + w * (y + h * z)];
            }
        }
    }
    out
}
