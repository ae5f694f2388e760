//! Feed-forward network model, JSON file format and exact forward evaluation.
//!
//! Layers are numbered `1..=L`; layer 0 is the input. Every dense layer owns a
//! `(fan_in + 1) x width` weight matrix whose row 0 holds the biases (the
//! constant-1 bias node). Node indices are 0-based in the Rust API; class
//! indices handed to the query drivers and pool groups in the file format are
//! 1-based.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    ReluDense,
    AtanDense,
    MaxPool,
    Softmax,
    LinearOutput,
}

impl LayerKind {
    pub fn is_dense(self) -> bool {
        matches!(
            self,
            LayerKind::ReluDense | LayerKind::AtanDense | LayerKind::LinearOutput
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::ReluDense => "relu_dense",
            LayerKind::AtanDense => "atan_dense",
            LayerKind::MaxPool => "max_pool",
            LayerKind::Softmax => "softmax",
            LayerKind::LinearOutput => "linear_output",
        }
    }
}

/// Dense weight matrix with the bias stored as row 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    fan_in: usize,
    width: usize,
    data: Vec<f64>,
}

impl Weights {
    /// Build from rows; `rows[0]` is the bias row.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::validation(
                "weights",
                "need a bias row plus at least one input row",
            ));
        }
        let width = rows[0].len();
        if width == 0 {
            return Err(Error::validation("weights", "layer has zero outputs"));
        }
        let mut data = Vec::with_capacity(rows.len() * width);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::validation(
                    format!("weights row {r}"),
                    format!("expected {width} entries, got {}", row.len()),
                ));
            }
            if let Some(c) = row.iter().position(|w| !w.is_finite()) {
                return Err(Error::validation(
                    format!("weights[{r}][{c}]"),
                    "non-finite weight",
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Weights {
            fan_in: rows.len() - 1,
            width,
            data,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bias(&self, node: usize) -> f64 {
        self.data[node]
    }

    /// Weight of the edge from predecessor `from` (0-based) to `node`.
    pub fn weight(&self, from: usize, node: usize) -> f64 {
        self.data[(from + 1) * self.width + node]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.width).map(|c| c.to_vec()).collect()
    }

    /// Affine pre-activation of `node` for predecessor values `prev`.
    pub fn affine(&self, prev: &[f64], node: usize) -> f64 {
        let mut acc = self.bias(node);
        for (j, &v) in prev.iter().enumerate() {
            acc += self.weight(j, node) * v;
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    kind: LayerKind,
    weights: Option<Weights>,
    /// 0-based predecessor indices per pool output.
    pool_groups: Vec<Vec<usize>>,
}

impl Layer {
    pub fn dense(kind: LayerKind, weights: Weights) -> Self {
        Layer {
            kind,
            weights: Some(weights),
            pool_groups: Vec::new(),
        }
    }

    /// Pool groups are given with 0-based predecessor indices.
    pub fn max_pool(groups: Vec<Vec<usize>>) -> Self {
        Layer {
            kind: LayerKind::MaxPool,
            weights: None,
            pool_groups: groups,
        }
    }

    pub fn softmax() -> Self {
        Layer {
            kind: LayerKind::Softmax,
            weights: None,
            pool_groups: Vec::new(),
        }
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn weights(&self) -> Option<&Weights> {
        self.weights.as_ref()
    }

    pub fn pool_groups(&self) -> &[Vec<usize>] {
        &self.pool_groups
    }

    fn output_dim(&self, fan_in: usize) -> usize {
        match self.kind {
            LayerKind::MaxPool => self.pool_groups.len(),
            LayerKind::Softmax => fan_in,
            _ => self.weights.as_ref().map_or(0, Weights::width),
        }
    }
}

/// A validated feed-forward network over a bounded input box.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_bounds: Vec<(f64, f64)>,
    layers: Vec<Layer>,
    dims: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    input_dim: usize,
    input_bounds: Vec<[f64; 2]>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pool_groups: Option<Vec<Vec<usize>>>,
}

impl Network {
    pub fn new(input_bounds: Vec<(f64, f64)>, layers: Vec<Layer>) -> Result<Self> {
        if input_bounds.is_empty() {
            return Err(Error::validation("input_dim", "must be positive"));
        }
        for (i, &(lo, hi)) in input_bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::validation(
                    format!("input_bounds[{i}]"),
                    "bounds must be finite",
                ));
            }
            if lo > hi {
                return Err(Error::validation(
                    format!("input_bounds[{i}]"),
                    format!("lower {lo} exceeds upper {hi}"),
                ));
            }
        }
        if layers.is_empty() {
            return Err(Error::validation("layers", "network has no layers"));
        }
        let mut dims = vec![input_bounds.len()];
        for (idx, layer) in layers.iter().enumerate() {
            let l = idx + 1;
            let loc = format!("layer {l}");
            let fan_in = dims[idx];
            match layer.kind {
                k if k.is_dense() => {
                    let w = layer
                        .weights
                        .as_ref()
                        .ok_or_else(|| Error::validation(&loc, "dense layer without weights"))?;
                    if w.fan_in() != fan_in {
                        return Err(Error::validation(
                            &loc,
                            format!(
                                "input dimension {} does not match preceding output dimension {fan_in}",
                                w.fan_in()
                            ),
                        ));
                    }
                    if !layer.pool_groups.is_empty() {
                        return Err(Error::validation(&loc, "dense layer with pool_groups"));
                    }
                }
                LayerKind::MaxPool => {
                    if layer.weights.is_some() {
                        return Err(Error::validation(&loc, "max_pool layer carries weights"));
                    }
                    let mut seen = vec![false; fan_in];
                    for (g, group) in layer.pool_groups.iter().enumerate() {
                        if group.len() != 2 && group.len() != 4 {
                            return Err(Error::validation(
                                format!("{loc} pool group {}", g + 1),
                                format!("group size must be 2 or 4, got {}", group.len()),
                            ));
                        }
                        for &j in group {
                            if j >= fan_in || seen[j] {
                                return Err(Error::validation(
                                    format!("{loc} pool group {}", g + 1),
                                    format!("index {} is out of range or repeated", j + 1),
                                ));
                            }
                            seen[j] = true;
                        }
                    }
                    if seen.iter().any(|s| !s) {
                        return Err(Error::validation(
                            &loc,
                            "pool groups do not cover every predecessor node",
                        ));
                    }
                }
                LayerKind::Softmax => {
                    if layer.weights.is_some() || !layer.pool_groups.is_empty() {
                        return Err(Error::validation(&loc, "softmax layer carries parameters"));
                    }
                    if l != layers.len() {
                        return Err(Error::validation(&loc, "softmax is only allowed as the final layer"));
                    }
                }
                _ => unreachable!(),
            }
            dims.push(layer.output_dim(fan_in));
        }
        Ok(Network {
            input_bounds,
            layers,
            dims,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if file.input_dim != file.input_bounds.len() {
            return Err(Error::validation(
                "input_bounds",
                format!(
                    "input_dim is {} but {} bounds were given",
                    file.input_dim,
                    file.input_bounds.len()
                ),
            ));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (idx, lf) in file.layers.into_iter().enumerate() {
            let loc = format!("layer {}", idx + 1);
            let layer = if lf.kind.is_dense() {
                let rows = lf
                    .weights
                    .ok_or_else(|| Error::validation(&loc, "dense layer without weights"))?;
                let w = Weights::from_rows(&rows).map_err(|e| match e {
                    Error::Validation { location, message } => {
                        Error::validation(format!("{loc} {location}"), message)
                    }
                    other => other,
                })?;
                if lf.pool_groups.is_some() {
                    return Err(Error::validation(&loc, "dense layer with pool_groups"));
                }
                Layer::dense(lf.kind, w)
            } else {
                if lf.weights.is_some() {
                    return Err(Error::validation(&loc, format!("{} layer carries weights", lf.kind.as_str())));
                }
                match lf.kind {
                    LayerKind::MaxPool => {
                        let groups = lf
                            .pool_groups
                            .ok_or_else(|| Error::validation(&loc, "max_pool without pool_groups"))?;
                        let mut zero_based = Vec::with_capacity(groups.len());
                        for g in groups {
                            if g.contains(&0) {
                                return Err(Error::validation(&loc, "pool indices are 1-based"));
                            }
                            zero_based.push(g.into_iter().map(|j| j - 1).collect());
                        }
                        Layer::max_pool(zero_based)
                    }
                    _ => {
                        if lf.pool_groups.is_some() {
                            return Err(Error::validation(&loc, "softmax layer with pool_groups"));
                        }
                        Layer::softmax()
                    }
                }
            };
            layers.push(layer);
        }
        let bounds = file.input_bounds.iter().map(|b| (b[0], b[1])).collect();
        Network::new(bounds, layers)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let file = NetworkFile {
            input_dim: self.input_dim(),
            input_bounds: self.input_bounds.iter().map(|&(l, h)| [l, h]).collect(),
            layers: self
                .layers
                .iter()
                .map(|layer| LayerFile {
                    kind: layer.kind,
                    weights: layer.weights.as_ref().map(Weights::rows),
                    pool_groups: (layer.kind == LayerKind::MaxPool).then(|| {
                        layer
                            .pool_groups
                            .iter()
                            .map(|g| g.iter().map(|j| j + 1).collect())
                            .collect()
                    }),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serialization cannot fail")
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn input_bounds(&self) -> &[(f64, f64)] {
        &self.input_bounds
    }

    /// Same weights over a different input box.
    pub fn with_input_bounds(&self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: bounds.len(),
            });
        }
        Network::new(bounds, self.layers.clone())
    }

    /// Number of layers `L` (the input layer is not counted).
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Layer `l` for `1 <= l <= L`.
    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l - 1]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Output dimension of layer `l`; `dim(0)` is the input dimension.
    pub fn dim(&self, l: usize) -> usize {
        self.dims[l]
    }

    pub fn ends_in_softmax(&self) -> bool {
        self.layers.last().map(Layer::kind) == Some(LayerKind::Softmax)
    }

    /// Layer whose outputs are compared between classes: `L - 1` when the
    /// network ends in softmax, `L` otherwise.
    pub fn score_layer(&self) -> usize {
        if self.ends_in_softmax() {
            self.num_layers() - 1
        } else {
            self.num_layers()
        }
    }

    pub fn num_classes(&self) -> usize {
        self.dim(self.score_layer())
    }

    pub fn contains_input(&self, input: &[f64], tol: f64) -> bool {
        input.len() == self.input_dim()
            && input
                .iter()
                .zip(&self.input_bounds)
                .all(|(&v, &(lo, hi))| v >= lo - tol && v <= hi + tol)
    }

    pub fn has_atan(&self) -> bool {
        self.layers.iter().any(|l| l.kind == LayerKind::AtanDense)
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        let mut intermediates = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(input.to_vec());
        intermediates.push(None);
        for layer in &self.layers {
            let prev = outputs.last().expect("input layer present");
            let (im, x) = eval_layer(layer, prev);
            intermediates.push(im);
            outputs.push(x);
        }
        Ok(ForwardTrace {
            outputs,
            intermediates,
        })
    }

    /// Forward evaluation that also rejects inputs outside the declared box.
    pub fn forward_in_domain(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        for (index, (&value, &(lo, hi))) in input.iter().zip(&self.input_bounds).enumerate() {
            if value < lo || value > hi {
                return Err(Error::OutOfDomain {
                    index,
                    value,
                    lo,
                    hi,
                });
            }
        }
        self.forward(input)
    }

    /// Class scores (the outputs of [`Network::score_layer`]).
    pub fn scores(&self, input: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward(input)?;
        Ok(trace.outputs[self.score_layer()].clone())
    }

    fn check_class(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.num_classes() {
            return Err(Error::Query(format!(
                "class index {m} outside 1..={}",
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Whether `input` classifies to class `m` (1-based) with confidence
    /// ratio `alpha`, decided on the pre-softmax scores.
    pub fn strongly_classifies(&self, input: &[f64], m: usize, alpha: f64) -> Result<bool> {
        if !self.ends_in_softmax() {
            return Err(Error::Query("network does not end in softmax".into()));
        }
        self.check_class(m)?;
        if !(alpha >= 1.0) {
            return Err(Error::Query(format!("alpha must be >= 1, got {alpha}")));
        }
        let scores = self.scores(input)?;
        Ok(scores_strongly_classify(&scores, m, alpha))
    }

    /// `min_{j != m} (s_m - s_j)` over the class scores; `+inf` for one class.
    pub fn class_margin(&self, input: &[f64], m: usize) -> Result<f64> {
        self.check_class(m)?;
        let scores = self.scores(input)?;
        Ok(score_margin(&scores, m))
    }

    /// Number of competitor classes `j != m` with `s_j >= s_m - tol`.
    pub fn competitors_at_or_above(&self, input: &[f64], m: usize, tol: f64) -> Result<usize> {
        self.check_class(m)?;
        let scores = self.scores(input)?;
        let sm = scores[m - 1];
        Ok(scores
            .iter()
            .enumerate()
            .filter(|&(j, &s)| j != m - 1 && s >= sm - tol)
            .count())
    }
}

fn eval_layer(layer: &Layer, prev: &[f64]) -> (Option<Vec<f64>>, Vec<f64>) {
    match layer.kind {
        LayerKind::MaxPool => {
            let x = layer
                .pool_groups
                .iter()
                .map(|g| pool_max(g.iter().map(|&j| prev[j])))
                .collect();
            (None, x)
        }
        LayerKind::Softmax => (None, softmax(prev)),
        kind => {
            let w = layer.weights.as_ref().expect("validated dense layer");
            let im: Vec<f64> = (0..w.width()).map(|i| w.affine(prev, i)).collect();
            let x = im
                .iter()
                .map(|&v| match kind {
                    LayerKind::ReluDense => v.max(0.0),
                    LayerKind::AtanDense => v.atan(),
                    _ => v,
                })
                .collect();
            (Some(im), x)
        }
    }
}

/// Pairwise maximum; four-element groups reduce as `max(max(a,b), max(c,d))`.
fn pool_max(mut vals: impl Iterator<Item = f64>) -> f64 {
    let a = vals.next().expect("non-empty pool group");
    let b = vals.next().expect("pool group of size >= 2");
    match (vals.next(), vals.next()) {
        (Some(c), Some(d)) => a.max(b).max(c.max(d)),
        _ => a.max(b),
    }
}

/// `e^{z_i} / sum_j e^{z_j}`, shifted by the maximum for stability.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Log-domain strong classification test on pre-softmax scores:
/// `s_m >= ln(alpha) + s_j` for every `j != m` (class `m` is 1-based).
pub fn scores_strongly_classify(scores: &[f64], m: usize, alpha: f64) -> bool {
    let ln_alpha = alpha.ln();
    let sm = scores[m - 1];
    scores
        .iter()
        .enumerate()
        .all(|(j, &s)| j == m - 1 || sm >= ln_alpha + s)
}

pub fn score_margin(scores: &[f64], m: usize) -> f64 {
    let sm = scores[m - 1];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != m - 1)
        .map(|(_, &s)| sm - s)
        .fold(f64::INFINITY, f64::min)
}

/// Every intermediate (`im`) and output (`x`) value of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `outputs[0]` is the input vector, `outputs[l]` the outputs of layer `l`.
    pub outputs: Vec<Vec<f64>>,
    /// Pre-activations of dense layers; `None` for the input, pool and softmax layers.
    pub intermediates: Vec<Option<Vec<f64>>>,
}

impl ForwardTrace {
    pub fn x(&self, l: usize, i: usize) -> f64 {
        self.outputs[l][i]
    }

    pub fn im(&self, l: usize, i: usize) -> Option<f64> {
        self.intermediates[l].as_ref().map(|v| v[i])
    }

    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("trace has an input layer")
    }
}
