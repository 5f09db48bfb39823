//! Random valid network descriptions and a fixed set of malformed ones.

use otoar_core::netspec::{conv_out_dim, pool_out_dim, InputDims, LayerSpec, NetworkSpec, Padding, Shape};
use rand::Rng;

fn spatial_layer(rng: &mut impl Rng, s: [usize; 4], seen_conv: bool) -> Option<LayerSpec> {
    let [w, h, d, c] = s;
    let min_dim = w.min(h).min(d);
    match rng.random_range(0..4) {
        0 => {
            let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
            let kmax = if padding == Padding::Valid { min_dim.min(5) } else { 5 };
            let kernel = rng.random_range(1..=kmax);
            let stride = rng.random_range(1..=3);
            Some(LayerSpec::Conv {
                filters: rng.random_range(1..=32),
                kernel,
                stride,
                padding,
            })
        }
        1 if seen_conv => {
            let divisors: Vec<usize> = (1..=c).filter(|r| c % r == 0).collect();
            Some(LayerSpec::SqueezeExcite {
                ratio: divisors[rng.random_range(0..divisors.len())],
            })
        }
        2 => {
            let window = rng.random_range(1..=min_dim.min(4));
            Some(LayerSpec::Pool {
                window,
                stride: rng.random_range(1..=3),
            })
        }
        _ => Some(LayerSpec::Dropout {
            rate: f64::from(rng.random_range(0..100u32)) / 100.0,
        }),
    }
}

fn advance(layer: LayerSpec, s: [usize; 4]) -> Option<[usize; 4]> {
    let [w, h, d, c] = s;
    match layer {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding,
        } => {
            let o = [w, h, d].map(|x| conv_out_dim(x, kernel, stride, padding));
            Some([o[0]?, o[1]?, o[2]?, filters])
        }
        LayerSpec::Pool { window, stride } => {
            let o = [w, h, d].map(|x| pool_out_dim(x, window, stride));
            Some([o[0]?, o[1]?, o[2]?, c])
        }
        _ => Some(s),
    }
}

/// A spec that passes validation: a spatial stage, a dense stage, then `O(21)`.
pub fn random_spec(rng: &mut impl Rng) -> NetworkSpec {
    let input = InputDims {
        w: rng.random_range(1..=40),
        h: rng.random_range(1..=40),
        d: rng.random_range(1..=40),
        channels: rng.random_range(1..=4),
    };
    let mut layers = Vec::new();
    let mut shape = [input.w, input.h, input.d, input.channels];
    let mut seen_conv = false;
    for _ in 0..rng.random_range(0..=6) {
        let Some(layer) = spatial_layer(rng, shape, seen_conv) else { continue };
        if let Some(next) = advance(layer, shape) {
            seen_conv |= matches!(layer, LayerSpec::Conv { .. });
            shape = next;
            layers.push(layer);
        }
    }
    for _ in 0..rng.random_range(0..=3) {
        layers.push(LayerSpec::Dense {
            units: rng.random_range(1..=300),
        });
        if rng.random_bool(0.3) {
            layers.push(LayerSpec::Dropout {
                rate: f64::from(rng.random_range(0..100u32)) / 100.0,
            });
        }
    }
    layers.push(LayerSpec::Output { units: 21 });
    let spec = NetworkSpec { input, layers };
    debug_assert!(spec.validate().is_ok(), "generator produced an invalid spec: {spec}");
    spec
}

fn pad(rng: &mut impl Rng) -> &'static str {
    ["", " ", "  ", "\t"][rng.random_range(0..4)]
}

/// Same network as `spec`, written with random argument style, whitespace,
/// omitted defaults and comments.
pub fn render_variant(spec: &NetworkSpec, rng: &mut impl Rng) -> String {
    let mut out = String::new();
    if rng.random_bool(0.3) {
        out.push_str("# generated\n");
    }
    let i = spec.input;
    let mut input_args = vec![i.w.to_string(), i.h.to_string(), i.d.to_string()];
    if i.channels != 1 || rng.random_bool(0.5) {
        input_args.push(i.channels.to_string());
    }
    out.push_str(&format!("I({})", input_args.join(",")));
    for layer in &spec.layers {
        out.push_str(if rng.random_bool(0.2) { "\n" } else { " " });
        let keyword = rng.random_bool(0.5);
        let args: Vec<(&str, String, bool)> = match *layer {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => vec![
                ("f", filters.to_string(), false),
                ("k", kernel.to_string(), kernel == 3),
                ("s", stride.to_string(), stride == 1),
                ("p", if padding == Padding::Same { "same" } else { "valid" }.to_string(), padding == Padding::Same),
            ],
            LayerSpec::SqueezeExcite { ratio } => vec![("r", ratio.to_string(), ratio == 4)],
            LayerSpec::Pool { window, stride } => {
                vec![("w", window.to_string(), window == 2 && stride == 2), ("s", stride.to_string(), stride == window)]
            }
            LayerSpec::Dense { units } => vec![("u", units.to_string(), false)],
            LayerSpec::Dropout { rate } => vec![("rate", rate.to_string(), rate == 0.2)],
            LayerSpec::Output { units } => vec![("u", units.to_string(), units == 21)],
        };
        // trailing defaults may be dropped
        let mut keep = args.len();
        while keep > 0 && args[keep - 1].2 && rng.random_bool(0.5) {
            keep -= 1;
        }
        out.push_str(layer.tag());
        if keep == 0 && rng.random_bool(0.5) {
            continue;
        }
        let parts: Vec<String> = args[..keep]
            .iter()
            .map(|(k, v, _)| if keyword { format!("{k}{}={}{v}", pad(rng), pad(rng)) } else { v.clone() })
            .collect();
        let sep = format!("{},{}", pad(rng), pad(rng));
        out.push_str(&format!("({}{}{})", pad(rng), parts.join(&sep), pad(rng)));
        if rng.random_bool(0.1) {
            out.push_str(" # note\n");
        }
    }
    out
}

/// Output shape of a valid spec.
pub fn final_shape(spec: &NetworkSpec) -> Option<Shape> {
    spec.output_shape().ok()
}

/// Malformed descriptions with the expected diagnostic line, column and a
/// fragment of the message.
pub const MALFORMED: [(&str, usize, usize, &str); 20] = [
    ("", 1, 1, "empty network description"),
    ("C(8) O(21)", 1, 1, "must start with an input layer"),
    ("I(8,8,8) C(8", 1, 13, "unterminated argument list"),
    ("I(8,8,8) X(3) O(21)", 1, 10, "unknown layer `X`"),
    ("I(8,8,8) C(f=) O(21)", 1, 14, "missing value for `f`"),
    ("I(8,8,8) C(f=8,q=2) O(21)", 1, 16, "unknown parameter `q`"),
    ("I(8,8,8) C(f=8,8) O(21)", 1, 16, "positional argument after keyword"),
    ("I(8,8,8) C(0) O(21)", 1, 12, "must be a positive integer"),
    ("I(8,8,8) D(1.5) O(21)", 1, 12, "dropout rate must be a number in [0, 1)"),
    ("I(8,8,8) C(8,p=full) O(21)", 1, 14, "padding must be `same` or `valid`"),
    ("I(8,8,8) O(21) FC(4)", 1, 10, "Output must be final layer"),
    ("I(8,8,8) O(20)", 1, 10, "output must have 21 units"),
    ("I(8,8,8) P(16) O(21)", 1, 10, "pool window 16 exceeds spatial extent 8"),
    ("I(4,4,4)\n  C(8,k=5,p=valid) O(21)", 2, 3, "kernel 5 does not fit"),
    ("I(8,8,8) FC(8) SE O(21)", 1, 16, "after flattening"),
    ("I(8,8,8) C(6) SE(4) O(21)", 1, 15, "channels 6 not divisible by ratio 4"),
    ("I(8,8,8) C(8,3,1,same,9) O(21)", 1, 23, "takes at most 4 arguments"),
    ("I(8,8,8)\nC(8) I(2,2,2) O(21)", 2, 6, "input layer may only appear first"),
    ("I(8,8,8) C(f=8 k=3) O(21)", 1, 16, "expected `,` or `)`"),
    ("I(8,8) O(21)", 1, 1, "requires parameter `d`"),
];
