//! A small text language for linear 3D convnet architectures.
//!
//! A program is a whitespace-separated sequence of layers. `#` starts a
//! comment that runs to the end of the line.
//!
//! ```text
//! I(32,32,16,1)                    input W,H,D[,C]          (C defaults to 1)
//! C(f=8,k=3,s=1,p=same)            conv, elu activation     (k=3, s=1, p=same)
//! SE(r=4)                          squeeze-and-excitation   (r=4)
//! P(2) | P(w=2,s=2)                max pool                 (w=2, s=w)
//! FC(256) | FC(u=256)              dense, elu activation
//! D(0.2) | D(rate=0.2)             inverted dropout         (rate=0.2)
//! O(21) | O(u=21)                  linear output            (u=21)
//! ```
//!
//! Arguments are positional (in the order shown) or `key=value`. Layers whose
//! parameters all have defaults may omit the parentheses.

use std::fmt;

/// Seven landmarks, three coordinates each.
pub const OUTPUT_UNITS: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    fn as_str(self) -> &'static str {
        match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    SqueezeExcite {
        ratio: usize,
    },
    Pool {
        window: usize,
        stride: usize,
    },
    Dense {
        units: usize,
    },
    Dropout {
        rate: f64,
    },
    Output {
        units: usize,
    },
}

impl LayerSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "C",
            LayerSpec::SqueezeExcite { .. } => "SE",
            LayerSpec::Pool { .. } => "P",
            LayerSpec::Dense { .. } => "FC",
            LayerSpec::Dropout { .. } => "D",
            LayerSpec::Output { .. } => "O",
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => write!(f, "C(f={filters},k={kernel},s={stride},p={})", padding.as_str()),
            LayerSpec::SqueezeExcite { ratio } => write!(f, "SE(r={ratio})"),
            LayerSpec::Pool { window, stride } => write!(f, "P(w={window},s={stride})"),
            LayerSpec::Dense { units } => write!(f, "FC({units})"),
            LayerSpec::Dropout { rate } => write!(f, "D({rate})"),
            LayerSpec::Output { units } => write!(f, "O({units})"),
        }
    }
}

/// Input extents `(W, H, D, channels)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputDims {
    pub w: usize,
    pub h: usize,
    pub d: usize,
    pub channels: usize,
}

impl InputDims {
    pub fn shape(&self) -> Shape {
        Shape::Spatial([self.w, self.h, self.d, self.channels])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input: InputDims,
    pub layers: Vec<LayerSpec>,
}

/// Activation shape of a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `[W, H, D, C]`
    Spatial([usize; 4]),
    Flat(usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match self {
            Shape::Spatial(s) => s.iter().product(),
            Shape::Flat(n) => *n,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            Shape::Spatial(s) => s.to_vec(),
            Shape::Flat(n) => vec![*n],
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Spatial([w, h, d, c]) => write!(f, "{w}x{h}x{d}x{c}"),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// Spatial output extent of a convolution along one axis.
pub fn conv_out_dim(dim: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Same => Some(dim.div_ceil(stride)).filter(|&n| n > 0),
        Padding::Valid => (dim >= kernel).then(|| (dim - kernel) / stride + 1),
    }
}

/// `(low, high)` zero padding for `same` convolution; the extra zero goes high.
pub fn same_padding(dim: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = dim.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(dim);
    (total / 2, total - total / 2)
}

pub fn pool_out_dim(dim: usize, window: usize, stride: usize) -> Option<usize> {
    (dim >= window).then(|| (dim - window) / stride + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeRow {
    /// 1-based position in the program; 0 is the input layer.
    pub index: usize,
    pub layer: String,
    pub output: Shape,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeError {
    pub layer_index: usize,
    pub message: String,
}

impl fmt::Display for ShapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {}: {}", self.layer_index, self.message)
    }
}

impl std::error::Error for ShapeError {}

impl NetworkSpec {
    /// Per-layer output shapes, preceded by a row for the input.
    pub fn infer_shapes(&self) -> Result<Vec<ShapeRow>, ShapeError> {
        let mut rows = Vec::with_capacity(self.layers.len() + 1);
        let mut shape = self.input.shape();
        let input_ok = [self.input.w, self.input.h, self.input.d, self.input.channels]
            .iter()
            .all(|&d| d > 0);
        if !input_ok {
            return Err(ShapeError {
                layer_index: 0,
                message: "input extents must be positive".into(),
            });
        }
        rows.push(ShapeRow {
            index: 0,
            layer: format!(
                "I({},{},{},{})",
                self.input.w, self.input.h, self.input.d, self.input.channels
            ),
            output: shape,
            params: 0,
        });
        let mut seen_conv = false;
        for (i, layer) in self.layers.iter().enumerate() {
            let index = i + 1;
            let err = |message: String| ShapeError {
                layer_index: index,
                message,
            };
            let (out, params) = match (*layer, shape) {
                (
                    LayerSpec::Conv {
                        filters,
                        kernel,
                        stride,
                        padding,
                    },
                    Shape::Spatial([w, h, d, c]),
                ) => {
                    if filters == 0 || kernel == 0 || stride == 0 {
                        return Err(err("conv parameters must be positive".into()));
                    }
                    let mut o = [0usize; 3];
                    for (a, dim) in [w, h, d].into_iter().enumerate() {
                        o[a] = conv_out_dim(dim, kernel, stride, padding).ok_or_else(|| {
                            err(format!("kernel {kernel} does not fit spatial extent {dim}"))
                        })?;
                    }
                    seen_conv = true;
                    (
                        Shape::Spatial([o[0], o[1], o[2], filters]),
                        kernel.pow(3) * c * filters + filters,
                    )
                }
                (LayerSpec::Conv { .. }, Shape::Flat(_)) => {
                    return Err(err("convolution after flattening".into()))
                }
                (LayerSpec::SqueezeExcite { ratio }, Shape::Spatial(s)) => {
                    if !seen_conv {
                        return Err(err("squeeze-excitation requires a preceding convolution".into()));
                    }
                    let c = s[3];
                    if ratio == 0 || c % ratio != 0 {
                        return Err(err(format!("channels {c} not divisible by ratio {ratio}")));
                    }
                    let hidden = c / ratio;
                    (shape, 2 * c * hidden + hidden + c)
                }
                (LayerSpec::SqueezeExcite { .. }, Shape::Flat(_)) => {
                    return Err(err("squeeze-excitation after flattening".into()))
                }
                (LayerSpec::Pool { window, stride }, Shape::Spatial([w, h, d, c])) => {
                    if window == 0 || stride == 0 {
                        return Err(err("pool window and stride must be positive".into()));
                    }
                    let mut o = [0usize; 3];
                    for (a, dim) in [w, h, d].into_iter().enumerate() {
                        o[a] = pool_out_dim(dim, window, stride).ok_or_else(|| {
                            err(format!("pool window {window} exceeds spatial extent {dim}"))
                        })?;
                    }
                    (Shape::Spatial([o[0], o[1], o[2], c]), 0)
                }
                (LayerSpec::Pool { .. }, Shape::Flat(_)) => {
                    return Err(err("pooling after flattening".into()))
                }
                (LayerSpec::Dense { units }, s) | (LayerSpec::Output { units }, s) => {
                    if units == 0 {
                        return Err(err("units must be positive".into()));
                    }
                    (Shape::Flat(units), s.numel() * units + units)
                }
                (LayerSpec::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(err(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    (s, 0)
                }
            };
            shape = out;
            rows.push(ShapeRow {
                index,
                layer: layer.to_string(),
                output: out,
                params,
            });
        }
        Ok(rows)
    }

    /// Structural rules that do not depend on shapes.
    pub fn check_structure(&self) -> Result<(), ShapeError> {
        let outputs: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Output { .. }))
            .map(|(i, _)| i + 1)
            .collect();
        match outputs.as_slice() {
            [] => Err(ShapeError {
                layer_index: self.layers.len(),
                message: "missing output layer".into(),
            }),
            [i] if *i == self.layers.len() => match self.layers.last() {
                Some(LayerSpec::Output { units }) if *units != OUTPUT_UNITS => Err(ShapeError {
                    layer_index: *i,
                    message: format!("output must have {OUTPUT_UNITS} units, got {units}"),
                }),
                _ => Ok(()),
            },
            [i] => Err(ShapeError {
                layer_index: *i,
                message: "Output must be final layer".into(),
            }),
            [_, second, ..] => Err(ShapeError {
                layer_index: *second,
                message: "more than one output layer".into(),
            }),
        }
    }

    pub fn validate(&self) -> Result<Vec<ShapeRow>, ShapeError> {
        self.check_structure()?;
        self.infer_shapes()
    }

    pub fn output_shape(&self) -> Result<Shape, ShapeError> {
        Ok(self.infer_shapes()?.last().expect("input row").output)
    }

    /// Canonical one-line text with every parameter written out.
    pub fn serialize(&self) -> String {
        let i = self.input;
        let mut out = format!("I({},{},{},{})", i.w, i.h, i.d, i.channels);
        for l in &self.layers {
            out.push(' ');
            out.push_str(&l.to_string());
        }
        out
    }

    /// `I(W,H,D,1) [C(f=8*2^i,k=3,p=same) SE(r=4) P(2)] x blocks FC(256) D(0.2) O(21)`.
    /// Blocks are added (up to four) while the smallest extent stays at least 4
    /// after pooling, so the flattened features keep coarse position; inputs with
    /// an extent of 2 or 3 still get one block.
    pub fn reference(w: usize, h: usize, d: usize) -> NetworkSpec {
        Self::reference_with_dropout(w, h, d, 0.2)
    }

    pub fn reference_with_dropout(w: usize, h: usize, d: usize, rate: f64) -> NetworkSpec {
        let min_dim = w.min(h).min(d).max(1);
        let mut blocks = 0;
        while blocks < 4 && min_dim >> (blocks + 1) >= 4 {
            blocks += 1;
        }
        if blocks == 0 && min_dim >= 2 {
            blocks = 1;
        }
        let mut layers = Vec::new();
        for b in 0..blocks {
            layers.push(LayerSpec::Conv {
                filters: 8 << b,
                kernel: 3,
                stride: 1,
                padding: Padding::Same,
            });
            layers.push(LayerSpec::SqueezeExcite { ratio: 4 });
            layers.push(LayerSpec::Pool { window: 2, stride: 2 });
        }
        layers.push(LayerSpec::Dense { units: 256 });
        layers.push(LayerSpec::Dropout { rate });
        layers.push(LayerSpec::Output { units: OUTPUT_UNITS });
        NetworkSpec {
            input: InputDims {
                w,
                h,
                d,
                channels: 1,
            },
            layers,
        }
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

/// Positioned parse or validation error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Byte offset into the source.
    pub offset: usize,
    /// 1-based.
    pub line: usize,
    /// 1-based, in characters.
    pub column: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for Diagnostic {}

fn diagnostic(src: &str, offset: usize, message: impl Into<String>) -> Diagnostic {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let column = src[line_start..offset].chars().count() + 1;
    Diagnostic {
        offset,
        line,
        column,
        message: message.into(),
    }
}

#[derive(Debug, Clone)]
struct Arg<'a> {
    key: Option<&'a str>,
    value: &'a str,
    offset: usize,
}

#[derive(Debug)]
struct RawLayer<'a> {
    name: &'a str,
    offset: usize,
    args: Vec<Arg<'a>>,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    /// Letters, digits, `_`, `.`, `+`, `-`: enough for names and numbers.
    fn word(&mut self) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '+' | '-') {
                self.bump();
            } else {
                break;
            }
        }
        &self.src[start..self.pos]
    }

    fn err(&self, offset: usize, msg: impl Into<String>) -> Diagnostic {
        diagnostic(self.src, offset, msg)
    }

    fn layers(&mut self) -> Result<Vec<RawLayer<'a>>, Diagnostic> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let Some(c) = self.peek() else { break };
            let offset = self.pos;
            if !c.is_ascii_alphabetic() {
                return Err(self.err(offset, format!("unexpected character `{c}`")));
            }
            let name = self.word();
            let mut args = Vec::new();
            if self.peek() == Some('(') {
                self.bump();
                self.skip_trivia();
                if self.peek() == Some(')') {
                    self.bump();
                } else {
                    loop {
                        self.skip_trivia();
                        let arg_off = self.pos;
                        let first = self.word();
                        if first.is_empty() {
                            return Err(match self.peek() {
                                None => self.err(arg_off, "unterminated argument list"),
                                Some(c) => self.err(arg_off, format!("expected argument, found `{c}`")),
                            });
                        }
                        self.skip_trivia();
                        let arg = if self.peek() == Some('=') {
                            self.bump();
                            self.skip_trivia();
                            let val_off = self.pos;
                            let value = self.word();
                            if value.is_empty() {
                                return Err(self.err(val_off, format!("missing value for `{first}`")));
                            }
                            Arg {
                                key: Some(first),
                                value,
                                offset: arg_off,
                            }
                        } else {
                            Arg {
                                key: None,
                                value: first,
                                offset: arg_off,
                            }
                        };
                        args.push(arg);
                        self.skip_trivia();
                        match self.bump() {
                            Some(',') => continue,
                            Some(')') => break,
                            Some(c) => {
                                return Err(self.err(
                                    self.pos - c.len_utf8(),
                                    format!("expected `,` or `)`, found `{c}`"),
                                ))
                            }
                            None => return Err(self.err(self.pos, "unterminated argument list")),
                        }
                    }
                }
            }
            match self.peek() {
                Some(c) if !c.is_whitespace() && c != '#' => {
                    return Err(self.err(self.pos, format!("expected whitespace after layer, found `{c}`")));
                }
                _ => {}
            }
            out.push(RawLayer { name, offset, args });
        }
        Ok(out)
    }
}

/// Binds positional and keyword arguments to a layer's parameter list.
struct Binder<'s, 'a> {
    src: &'s str,
    layer: &'s RawLayer<'a>,
    params: &'static [&'static str],
    bound: Vec<Option<&'s Arg<'a>>>,
}

impl<'s, 'a> Binder<'s, 'a> {
    fn new(src: &'s str, layer: &'s RawLayer<'a>, params: &'static [&'static str]) -> Result<Self, Diagnostic> {
        let mut bound: Vec<Option<&Arg<'a>>> = vec![None; params.len()];
        let mut positional = 0;
        let mut seen_keyword = false;
        for arg in &layer.args {
            let slot = match arg.key {
                None => {
                    if seen_keyword {
                        return Err(diagnostic(src, arg.offset, "positional argument after keyword argument"));
                    }
                    positional += 1;
                    if positional > params.len() {
                        return Err(diagnostic(
                            src,
                            arg.offset,
                            format!("{} takes at most {} arguments", layer.name, params.len()),
                        ));
                    }
                    positional - 1
                }
                Some(k) => {
                    seen_keyword = true;
                    params.iter().position(|p| *p == k).ok_or_else(|| {
                        diagnostic(src, arg.offset, format!("unknown parameter `{k}` for {}", layer.name))
                    })?
                }
            };
            if bound[slot].is_some() {
                return Err(diagnostic(src, arg.offset, format!("parameter `{}` given twice", params[slot])));
            }
            bound[slot] = Some(arg);
        }
        Ok(Self {
            src,
            layer,
            params,
            bound,
        })
    }

    fn usize_or(&self, slot: usize, default: Option<usize>) -> Result<usize, Diagnostic> {
        match self.bound[slot] {
            Some(arg) => match arg.value.parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(diagnostic(
                    self.src,
                    arg.offset,
                    format!("`{}` must be a positive integer, got `{}`", self.params[slot], arg.value),
                )),
            },
            None => default.ok_or_else(|| {
                diagnostic(
                    self.src,
                    self.layer.offset,
                    format!("{} requires parameter `{}`", self.layer.name, self.params[slot]),
                )
            }),
        }
    }

    fn rate(&self, slot: usize, default: f64) -> Result<f64, Diagnostic> {
        match self.bound[slot] {
            Some(arg) => match arg.value.parse::<f64>() {
                Ok(v) if (0.0..1.0).contains(&v) => Ok(v),
                _ => Err(diagnostic(
                    self.src,
                    arg.offset,
                    format!("dropout rate must be a number in [0, 1), got `{}`", arg.value),
                )),
            },
            None => Ok(default),
        }
    }

    fn padding(&self, slot: usize) -> Result<Padding, Diagnostic> {
        match self.bound[slot] {
            None => Ok(Padding::Same),
            Some(arg) => match arg.value {
                "same" => Ok(Padding::Same),
                "valid" => Ok(Padding::Valid),
                other => Err(diagnostic(
                    self.src,
                    arg.offset,
                    format!("padding must be `same` or `valid`, got `{other}`"),
                )),
            },
        }
    }
}

/// Parses and fully validates a network description.
pub fn parse_netspec(src: &str) -> Result<NetworkSpec, Diagnostic> {
    let raw = Lexer { src, pos: 0 }.layers()?;
    let Some(first) = raw.first() else {
        return Err(diagnostic(src, 0, "empty network description"));
    };
    if first.name != "I" {
        return Err(diagnostic(src, first.offset, "network must start with an input layer I(...)"));
    }
    let b = Binder::new(src, first, &["w", "h", "d", "c"])?;
    let input = InputDims {
        w: b.usize_or(0, None)?,
        h: b.usize_or(1, None)?,
        d: b.usize_or(2, None)?,
        channels: b.usize_or(3, Some(1))?,
    };

    let mut layers = Vec::with_capacity(raw.len() - 1);
    for l in &raw[1..] {
        let layer = match l.name {
            "C" => {
                let b = Binder::new(src, l, &["f", "k", "s", "p"])?;
                LayerSpec::Conv {
                    filters: b.usize_or(0, None)?,
                    kernel: b.usize_or(1, Some(3))?,
                    stride: b.usize_or(2, Some(1))?,
                    padding: b.padding(3)?,
                }
            }
            "SE" => {
                let b = Binder::new(src, l, &["r"])?;
                LayerSpec::SqueezeExcite {
                    ratio: b.usize_or(0, Some(4))?,
                }
            }
            "P" => {
                let b = Binder::new(src, l, &["w", "s"])?;
                let window = b.usize_or(0, Some(2))?;
                LayerSpec::Pool {
                    window,
                    stride: b.usize_or(1, Some(window))?,
                }
            }
            "FC" => {
                let b = Binder::new(src, l, &["u"])?;
                LayerSpec::Dense {
                    units: b.usize_or(0, None)?,
                }
            }
            "D" => {
                let b = Binder::new(src, l, &["rate"])?;
                LayerSpec::Dropout { rate: b.rate(0, 0.2)? }
            }
            "O" => {
                let b = Binder::new(src, l, &["u"])?;
                LayerSpec::Output {
                    units: b.usize_or(0, Some(OUTPUT_UNITS))?,
                }
            }
            "I" => return Err(diagnostic(src, l.offset, "input layer may only appear first")),
            other => return Err(diagnostic(src, l.offset, format!("unknown layer `{other}`"))),
        };
        layers.push(layer);
    }

    let spec = NetworkSpec { input, layers };
    let at_layer = |e: ShapeError| {
        let offset = raw.get(e.layer_index).map_or(src.len(), |l| l.offset);
        diagnostic(src, offset, e.message)
    };
    spec.check_structure().map_err(at_layer)?;
    spec.infer_shapes().map_err(at_layer)?;
    Ok(spec)
}

impl std::str::FromStr for NetworkSpec {
    type Err = Diagnostic;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_netspec(s)
    }
}

/// Fixed-width text rendering of a shape table.
pub fn format_shape_table(rows: &[ShapeRow]) -> String {
    let mut out = format!("{:>5}  {:<28} {:>16} {:>10}\n", "index", "layer", "output", "params");
    for r in rows {
        out.push_str(&format!(
            "{:>5}  {:<28} {:>16} {:>10}\n",
            r.index,
            r.layer,
            r.output.to_string(),
            r.params
        ));
    }
    let total: usize = rows.iter().map(|r| r.params).sum();
    out.push_str(&format!("total parameters: {total}\n"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let spec = parse_netspec("I(8,8,8,1) O(21)").unwrap();
        assert!(spec.layers == vec![LayerSpec::Output { units: 21 }]);
        assert_eq!(spec.serialize(), "I(8,8,8,1) O(21)");
    }

    #[test]
    fn valid_conv_then_pool() {
        let spec = parse_netspec("I(8,8,8,1) C(f=4,k=3,p=valid) P(2) O(21)").unwrap();
        let rows = spec.infer_shapes().unwrap();
        // (8 - 3) / 1 + 1 = 6, then floor(6 / 2) = 3
        assert_eq!(rows[1].output, Shape::Spatial([6, 6, 6, 4]));
        assert_eq!(rows[2].output, Shape::Spatial([3, 3, 3, 4]));
    }

    #[test]
    fn output_must_be_last() {
        let err = parse_netspec("I(8,8,8,1) D(0.2) O(21) FC(5)").unwrap_err();
        assert_eq!(err.message, "Output must be final layer");
        assert_eq!((err.line, err.column), (1, 19));
    }

    #[test]
    fn paper_scale_flatten() {
        let spec = parse_netspec("I(200,200,100,1) O(21)").unwrap();
        assert_eq!(spec.input.shape().numel(), 4_000_000);
        assert_eq!(spec.infer_shapes().unwrap()[1].params, 4_000_000 * 21 + 21);
    }

    #[test]
    fn unit_kernel_keeps_extent() {
        for p in ["same", "valid"] {
            let spec = parse_netspec(&format!("I(7,5,3,2) C(f=6,k=1,s=1,p={p}) O(21)")).unwrap();
            assert_eq!(spec.infer_shapes().unwrap()[1].output, Shape::Spatial([7, 5, 3, 6]));
        }
    }

    #[test]
    fn pool_floor_division() {
        let spec = parse_netspec("I(7,7,5,1) C(f=4) P(2) O(21)").unwrap();
        assert_eq!(spec.infer_shapes().unwrap()[2].output, Shape::Spatial([3, 3, 2, 4]));
    }

    #[test]
    fn same_padding_puts_extra_zero_high() {
        assert_eq!(same_padding(5, 3, 1), (1, 1));
        assert_eq!(same_padding(5, 2, 1), (0, 1));
        assert_eq!(same_padding(6, 3, 2), (0, 1));
        assert_eq!(same_padding(4, 4, 1), (1, 2));
    }

    #[test]
    fn defaults_are_written_out() {
        let spec = parse_netspec("I(16,16,8) C(8) SE P FC(32) D O").unwrap();
        assert_eq!(
            spec.serialize(),
            "I(16,16,8,1) C(f=8,k=3,s=1,p=same) SE(r=4) P(w=2,s=2) FC(32) D(0.2) O(21)"
        );
    }

    #[test]
    fn reference_architecture_shapes() {
        let spec = NetworkSpec::reference(32, 32, 16);
        let rows = spec.validate().unwrap();
        let outs: Vec<Shape> = rows.iter().map(|r| r.output).collect();
        assert_eq!(
            outs,
            vec![
                Shape::Spatial([32, 32, 16, 1]),
                Shape::Spatial([32, 32, 16, 8]),
                Shape::Spatial([32, 32, 16, 8]),
                Shape::Spatial([16, 16, 8, 8]),
                Shape::Spatial([16, 16, 8, 16]),
                Shape::Spatial([16, 16, 8, 16]),
                Shape::Spatial([8, 8, 4, 16]),
                Shape::Flat(256),
                Shape::Flat(256),
                Shape::Flat(21),
            ]
        );
        let params: Vec<usize> = rows.iter().map(|r| r.params).collect();
        // 27*1*8+8, 8*2+2+2*8+8, 27*8*16+16, 16*4+4+4*16+16, 4096*256+256, 256*21+21
        assert_eq!(params, vec![0, 224, 42, 0, 3472, 148, 0, 1_048_832, 0, 5397]);
        assert_eq!(parse_netspec(&spec.serialize()).unwrap(), spec);
    }

    #[test]
    fn small_inputs_get_fewer_blocks() {
        let pools = |w, h, d| NetworkSpec::reference(w, h, d).layers.iter().filter(|l| l.tag() == "P").count();
        assert_eq!((pools(8, 8, 8), pools(4, 4, 4), pools(3, 9, 9), pools(200, 200, 100)), (1, 1, 1, 4));
        let spec = NetworkSpec::reference(8, 8, 8);
        spec.validate().unwrap();
    }

    #[test]
    fn diagnostics_are_positioned() {
        let err = parse_netspec("I(8,8,8,1)\n  C(f=4) X(3) O(21)").unwrap_err();
        assert_eq!((err.line, err.column), (2, 10));
        assert!(err.message.contains("unknown layer"));
    }
}
