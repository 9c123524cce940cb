//! Feedforward network model, forward evaluation and model-file I/O.
//!
//! Layers are numbered the way the rest of the crate talks about them: the
//! input layer is layer 1, the first entry of [`Network::layers`] produces
//! layer 2 and the last entry produces the output layer `K`. Neuron indices
//! inside a layer are zero-based and follow the flattened (channel, row,
//! column) order for convolutional tensors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// A hidden or output neuron, addressed by layer number (input layer is 1)
/// and zero-based position within the layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

impl NeuronId {
    pub fn new(layer: usize, index: usize) -> Self {
        NeuronId { layer, index }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n({},{})", self.layer, self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Layer {
    /// `weights[h][l]` connects input `h` to output neuron `l`.
    #[serde(rename = "dense")]
    Dense {
        #[serde(serialize_with = "ser_mat")]
        weights: Vec<Vec<f64>>,
        #[serde(serialize_with = "ser_vec")]
        bias: Vec<f64>,
        relu: bool,
    },
    /// `kernels[o][c][y][x]`; zero padding of `padding` cells on every side.
    #[serde(rename = "conv2d")]
    Conv2d {
        #[serde(serialize_with = "ser_tensor4")]
        kernels: Vec<Vec<Vec<Vec<f64>>>>,
        #[serde(serialize_with = "ser_vec")]
        bias: Vec<f64>,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        relu: bool,
    },
    /// Non-overlapping windows; a window hanging over the right or bottom
    /// edge covers only the remaining cells.
    #[serde(rename = "maxpool")]
    MaxPool { window: [usize; 2] },
    #[serde(rename = "flatten")]
    Flatten,
}

fn default_stride() -> usize {
    1
}

/// One affine output `bias + Σ coef · input[idx]` of a dense or convolutional layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineRow {
    pub terms: Vec<(usize, f64)>,
    pub bias: f64,
}

impl Layer {
    pub fn relu(&self) -> bool {
        match self {
            Layer::Dense { relu, .. } | Layer::Conv2d { relu, .. } => *relu,
            Layer::MaxPool { .. } | Layer::Flatten => false,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv2d { .. })
    }

    fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let in_len: usize = input.iter().product();
        match self {
            Layer::Dense { weights, bias, .. } => {
                if weights.len() != in_len {
                    return Err(format!(
                        "dense weights have {} rows but the layer input has {} values",
                        weights.len(),
                        in_len
                    ));
                }
                for (h, row) in weights.iter().enumerate() {
                    if row.len() != bias.len() {
                        return Err(format!(
                            "dense weight row {h} has {} columns but bias has {} entries",
                            row.len(),
                            bias.len()
                        ));
                    }
                }
                if bias.is_empty() {
                    return Err("dense layer with zero neurons".into());
                }
                Ok(vec![bias.len()])
            }
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
                ..
            } => {
                let [c, h, w] = chw(input)?;
                if kernels.is_empty() || kernels.len() != bias.len() {
                    return Err(format!(
                        "conv2d has {} kernels but {} biases",
                        kernels.len(),
                        bias.len()
                    ));
                }
                if *stride == 0 {
                    return Err("conv2d stride must be positive".into());
                }
                let kh = kernels[0].first().map_or(0, |k| k.len());
                let kw = kernels[0]
                    .first()
                    .and_then(|k| k.first())
                    .map_or(0, |r| r.len());
                if kh == 0 || kw == 0 {
                    return Err("conv2d kernel with zero extent".into());
                }
                for (o, kernel) in kernels.iter().enumerate() {
                    if kernel.len() != c {
                        return Err(format!(
                            "conv2d kernel {o} has {} channels, input has {c}",
                            kernel.len()
                        ));
                    }
                    for plane in kernel {
                        if plane.len() != kh || plane.iter().any(|r| r.len() != kw) {
                            return Err(format!("conv2d kernel {o} is not {kh}x{kw}"));
                        }
                    }
                }
                if h + 2 * padding < kh || w + 2 * padding < kw {
                    return Err("conv2d kernel larger than padded input".into());
                }
                let oh = (h + 2 * padding - kh) / stride + 1;
                let ow = (w + 2 * padding - kw) / stride + 1;
                Ok(vec![kernels.len(), oh, ow])
            }
            Layer::MaxPool { window } => {
                let [c, h, w] = chw(input)?;
                if window[0] == 0 || window[1] == 0 {
                    return Err("maxpool window must be positive".into());
                }
                Ok(vec![c, h.div_ceil(window[0]), w.div_ceil(window[1])])
            }
            Layer::Flatten => Ok(vec![in_len]),
        }
    }

    fn check_finite(&self) -> std::result::Result<(), String> {
        let bad = match self {
            Layer::Dense { weights, bias, .. } => {
                weights.iter().flatten().chain(bias).any(|x| !x.is_finite())
            }
            Layer::Conv2d { kernels, bias, .. } => kernels
                .iter()
                .flatten()
                .flatten()
                .flatten()
                .chain(bias)
                .any(|x| !x.is_finite()),
            _ => false,
        };
        if bad {
            Err("non-finite weight or bias".into())
        } else {
            Ok(())
        }
    }

    /// Affine rows of a dense or convolutional layer over its flattened input.
    /// Returns `None` for max-pooling and flatten layers.
    #[allow(clippy::needless_range_loop)]
    pub fn affine_rows(&self, input_shape: &[usize]) -> Option<Vec<AffineRow>> {
        match self {
            Layer::Dense { weights, bias, .. } => Some(
                bias.iter()
                    .enumerate()
                    .map(|(l, &b)| AffineRow {
                        terms: weights
                            .iter()
                            .enumerate()
                            .filter(|(_, row)| row[l] != 0.0)
                            .map(|(h, row)| (h, row[l]))
                            .collect(),
                        bias: b,
                    })
                    .collect(),
            ),
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
                ..
            } => {
                let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
                let kh = kernels[0][0].len();
                let kw = kernels[0][0][0].len();
                let oh = (h + 2 * padding - kh) / stride + 1;
                let ow = (w + 2 * padding - kw) / stride + 1;
                let mut rows = Vec::with_capacity(kernels.len() * oh * ow);
                for (o, kernel) in kernels.iter().enumerate() {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut terms = Vec::new();
                            for ch in 0..c {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let wgt = kernel[ch][ky][kx];
                                        if wgt == 0.0 {
                                            continue;
                                        }
                                        if let Some(idx) =
                                            conv_source(ch, oy, ox, ky, kx, h, w, *stride, *padding)
                                        {
                                            terms.push((idx, wgt));
                                        }
                                    }
                                }
                            }
                            rows.push(AffineRow {
                                terms,
                                bias: bias[o],
                            });
                        }
                    }
                }
                Some(rows)
            }
            Layer::MaxPool { .. } | Layer::Flatten => None,
        }
    }

    /// Evaluates one layer: returns pre-activation values, post-activation
    /// values and, for max-pooling, the winning input index of each output.
    #[allow(clippy::needless_range_loop)]
    pub fn forward(&self, input: &[f64], input_shape: &[usize]) -> LayerOutput {
        match self {
            Layer::Dense {
                weights,
                bias,
                relu,
            } => {
                let mut u = Vec::with_capacity(bias.len());
                for (l, &b) in bias.iter().enumerate() {
                    let mut acc = 0.0;
                    for (h, row) in weights.iter().enumerate() {
                        acc += row[l] * input[h];
                    }
                    u.push(acc + b);
                }
                LayerOutput::activated(u, *relu)
            }
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
                relu,
            } => {
                let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
                let kh = kernels[0][0].len();
                let kw = kernels[0][0][0].len();
                let oh = (h + 2 * padding - kh) / stride + 1;
                let ow = (w + 2 * padding - kw) / stride + 1;
                let mut u = Vec::with_capacity(kernels.len() * oh * ow);
                for (o, kernel) in kernels.iter().enumerate() {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ch in 0..c {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        if let Some(idx) =
                                            conv_source(ch, oy, ox, ky, kx, h, w, *stride, *padding)
                                        {
                                            acc += kernel[ch][ky][kx] * input[idx];
                                        }
                                    }
                                }
                            }
                            u.push(acc + bias[o]);
                        }
                    }
                }
                LayerOutput::activated(u, *relu)
            }
            Layer::MaxPool { window } => {
                let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
                let oh = h.div_ceil(window[0]);
                let ow = w.div_ceil(window[1]);
                let mut out = Vec::with_capacity(c * oh * ow);
                let mut winners = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = usize::MAX;
                            for idx in pool_window(ch, oy, ox, h, w, *window) {
                                if best == usize::MAX || input[idx] > input[best] {
                                    best = idx;
                                }
                            }
                            out.push(input[best]);
                            winners.push(best);
                        }
                    }
                }
                LayerOutput {
                    u: out.clone(),
                    v: out,
                    winners: Some(winners),
                }
            }
            Layer::Flatten => LayerOutput {
                u: input.to_vec(),
                v: input.to_vec(),
                winners: None,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerOutput {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub winners: Option<Vec<usize>>,
}

impl LayerOutput {
    fn activated(u: Vec<f64>, relu: bool) -> Self {
        let v = if relu {
            u.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
        } else {
            u.clone()
        };
        LayerOutput {
            u,
            v,
            winners: None,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_source(
    ch: usize,
    oy: usize,
    ox: usize,
    ky: usize,
    kx: usize,
    h: usize,
    w: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let y = (oy * stride + ky).checked_sub(padding)?;
    let x = (ox * stride + kx).checked_sub(padding)?;
    (y < h && x < w).then_some((ch * h + y) * w + x)
}

/// Flattened input indices covered by one pooling window, row-major.
pub(crate) fn pool_window(
    ch: usize,
    oy: usize,
    ox: usize,
    h: usize,
    w: usize,
    window: [usize; 2],
) -> impl Iterator<Item = usize> {
    let y0 = oy * window[0];
    let x0 = ox * window[1];
    let y1 = (y0 + window[0]).min(h);
    let x1 = (x0 + window[1]).min(w);
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (ch * h + y) * w + x))
}

fn chw(shape: &[usize]) -> std::result::Result<[usize; 3], String> {
    match shape {
        [c, h, w] => Ok([*c, *h, *w]),
        other => Err(format!(
            "expected a [channels, height, width] input, got {other:?}"
        )),
    }
}

/// Values of every layer for one input.
///
/// `u[j]` and `v[j]` hold layer `j + 2`; for layers without a ReLU the two
/// coincide.
#[derive(Clone, Debug, PartialEq)]
pub struct Activations {
    pub input: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Per layer, whether its neurons carry activation-pattern bits.
    pub relu_mask: Vec<bool>,
    /// Per layer, the winning input index of each max-pooling output.
    pub pool_winners: Vec<Option<Vec<usize>>>,
    pub label: usize,
}

impl Activations {
    /// Pre-activation value; layer 1 is the input itself.
    pub fn pre(&self, n: NeuronId) -> f64 {
        if n.layer == 1 {
            self.input[n.index]
        } else {
            self.u[n.layer - 2][n.index]
        }
    }

    pub fn post(&self, n: NeuronId) -> f64 {
        if n.layer == 1 {
            self.input[n.index]
        } else {
            self.v[n.layer - 2][n.index]
        }
    }

    pub fn output(&self) -> &[f64] {
        self.v.last().expect("network has layers")
    }

    pub fn pattern(&self) -> ActivationPattern {
        pattern_of(self)
    }
}

/// Activation bit per ReLU neuron. Target patterns built for synthesis may be
/// partial; patterns extracted from a run cover every hidden ReLU neuron.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActivationPattern {
    pub bits: BTreeMap<NeuronId, bool>,
}

impl ActivationPattern {
    pub fn get(&self, n: NeuronId) -> Option<bool> {
        self.bits.get(&n).copied()
    }

    pub fn set(&mut self, n: NeuronId, bit: bool) {
        self.bits.insert(n, bit);
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Highest layer carrying at least one bit.
    pub fn max_layer(&self) -> Option<usize> {
        self.bits.keys().map(|n| n.layer).max()
    }
}

/// A neuron is activated iff its pre-activation is non-negative (`u = v`
/// holds at zero).
pub fn pattern_of(acts: &Activations) -> ActivationPattern {
    let mut bits = BTreeMap::new();
    for (j, us) in acts.u.iter().enumerate() {
        if !acts.relu_mask[j] {
            continue;
        }
        for (i, &u) in us.iter().enumerate() {
            bits.insert(NeuronId::new(j + 2, i), u >= 0.0);
        }
    }
    ActivationPattern { bits }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Output shape of each layer.
    shapes: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidNetwork(format!(
                "input shape {input_shape:?} is empty"
            )));
        }
        if layers.len() < 2 {
            return Err(Error::InvalidNetwork(
                "at least one hidden layer is required".into(),
            ));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.clone();
        for (j, layer) in layers.iter().enumerate() {
            let k = j + 2;
            layer
                .check_finite()
                .map_err(|e| Error::InvalidNetwork(format!("layer {k}: {e}")))?;
            current = layer
                .output_shape(&current)
                .map_err(|e| Error::InvalidNetwork(format!("layer {k}: {e}")))?;
            shapes.push(current.clone());
        }
        let out_len: usize = current.iter().product();
        if out_len < 2 {
            return Err(Error::InvalidNetwork(format!(
                "output layer has {out_len} neurons, at least 2 required"
            )));
        }
        if layers.last().is_some_and(Layer::relu) {
            return Err(Error::InvalidNetwork(
                "output layer must not apply ReLU".into(),
            ));
        }
        Ok(Network {
            input_shape,
            layers,
            shapes,
        })
    }

    /// Dense-only network from `(weights, bias, relu)` triples.
    pub fn dense(input_dim: usize, layers: Vec<(Vec<Vec<f64>>, Vec<f64>, bool)>) -> Result<Self> {
        Network::new(
            vec![input_dim],
            layers
                .into_iter()
                .map(|(weights, bias, relu)| Layer::Dense {
                    weights,
                    bias,
                    relu,
                })
                .collect(),
        )
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of layers including the input layer.
    pub fn num_layers(&self) -> usize {
        self.layers.len() + 1
    }

    /// Layer object producing layer number `k` (`2..=K`).
    pub fn layer(&self, k: usize) -> &Layer {
        &self.layers[k - 2]
    }

    /// Shape of layer `k`'s values; layer 1 is the input.
    pub fn shape(&self, k: usize) -> &[usize] {
        if k == 1 {
            &self.input_shape
        } else {
            &self.shapes[k - 2]
        }
    }

    pub fn width(&self, k: usize) -> usize {
        self.shape(k).iter().product()
    }

    pub fn output_dim(&self) -> usize {
        self.width(self.num_layers())
    }

    /// Whether layer `k` is a hidden layer whose neurons carry pattern bits.
    pub fn is_relu_layer(&self, k: usize) -> bool {
        k >= 2 && k < self.num_layers() && self.layer(k).relu()
    }

    /// Hidden ReLU layer numbers in ascending order.
    pub fn relu_layers(&self) -> Vec<usize> {
        (2..self.num_layers())
            .filter(|&k| self.is_relu_layer(k))
            .collect()
    }

    /// Every neuron that carries an activation-pattern bit.
    pub fn relu_neurons(&self) -> Vec<NeuronId> {
        self.relu_layers()
            .into_iter()
            .flat_map(|k| (0..self.width(k)).map(move |i| NeuronId::new(k, i)))
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Activations> {
        let expected = self.input_dim();
        if input.len() != expected {
            return Err(Error::InputShape {
                expected,
                got: input.len(),
            });
        }
        if let Some(i) = input.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput(i));
        }
        let k_max = self.num_layers();
        let mut u = Vec::with_capacity(self.layers.len());
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut relu_mask = Vec::with_capacity(self.layers.len());
        let mut pool_winners = Vec::with_capacity(self.layers.len());
        for (j, layer) in self.layers.iter().enumerate() {
            let prev: &[f64] = if j == 0 { input } else { &v[j - 1] };
            let out = layer.forward(prev, self.shape(j + 1));
            u.push(out.u);
            v.push(out.v);
            relu_mask.push(layer.relu() && j + 2 < k_max);
            pool_winners.push(out.winners);
        }
        let label = argmax(v.last().expect("at least two layers"));
        Ok(Activations {
            input: input.to_vec(),
            u,
            v,
            relu_mask,
            pool_winners,
            label,
        })
    }

    pub fn label(&self, input: &[f64]) -> Result<usize> {
        Ok(self.forward(input)?.label)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Network::from_json(&text).map_err(|e| match e {
            Error::ModelParse(m) | Error::InvalidNetwork(m) => {
                Error::ModelParse(format!("{}: {m}", path.display()))
            }
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::ModelParse(e.to_string()))?;
        Network::new(file.input_shape, file.layers).map_err(|e| Error::ModelParse(e.to_string()))
    }

    /// Model JSON with every float written to 17 significant digits.
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization is infallible")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in values.iter().enumerate().skip(1) {
        if x > values[best] {
            best = i;
        }
    }
    best
}

struct F17(f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = serde_json::value::RawValue::from_string(format!("{:.16e}", self.0))
            .map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

fn ser_vec<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|&x| F17(x)))
}

struct Row<'a>(&'a [f64]);

impl Serialize for Row<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ser_vec(self.0, s)
    }
}

fn ser_mat<S: Serializer>(m: &[Vec<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(m.iter().map(|r| Row(r)))
}

struct Plane<'a>(&'a [Vec<f64>]);

impl Serialize for Plane<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ser_mat(self.0, s)
    }
}

struct Kernel<'a>(&'a [Vec<Vec<f64>>]);

impl Serialize for Kernel<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|p| Plane(p)))
    }
}

fn ser_tensor4<S: Serializer>(
    t: &[Vec<Vec<Vec<f64>>>],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(t.iter().map(|k| Kernel(k)))
}
