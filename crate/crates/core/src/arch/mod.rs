//! Declarative network descriptions, the two builders, symbolic shape
//! tracing, and runtime instantiation.

mod denseunet;
mod network;
mod unet;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, Padding};

pub use denseunet::{build_denseunet, DenseBlockSpec};
pub use network::Network;
pub use unet::build_unet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Unet,
    Denseunet,
}

impl ModelKind {
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Unet => "U-Net",
            ModelKind::Denseunet => "DenseUNet",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Unet => "unet",
            ModelKind::Denseunet => "denseunet",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a layer reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerRef {
    Input,
    Layer(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum LayerKind {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
    },
    Deconv {
        filters: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    },
    MaxPool {
        window: usize,
        stride: usize,
        padding: Padding,
    },
    AvgPool {
        window: usize,
        stride: usize,
        padding: Padding,
    },
    Upsample {
        factor: usize,
    },
    Concat,
    BatchNorm,
    Activation {
        function: Activation,
    },
    Dropout {
        rate: f64,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Deconv { .. } => "deconv",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::Upsample { .. } => "upsample",
            LayerKind::Concat => "concat",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Activation { .. } => "activation",
            LayerKind::Dropout { .. } => "dropout",
        }
    }

    fn arity(&self) -> usize {
        match self {
            LayerKind::Concat => 2,
            _ => 1,
        }
    }

    /// Learnable scalars given the input channel count.
    pub fn parameter_count(&self, in_channels: usize) -> usize {
        match *self {
            LayerKind::Conv {
                filters, kernel, bias, ..
            }
            | LayerKind::Deconv {
                filters, kernel, bias, ..
            } => kernel * kernel * in_channels * filters + if bias { filters } else { 0 },
            LayerKind::BatchNorm => 2 * in_channels,
            _ => 0,
        }
    }

    /// Output H×W×C from the input shapes.
    pub fn output_shape(&self, inputs: &[[usize; 3]]) -> std::result::Result<[usize; 3], String> {
        if inputs.len() != self.arity() {
            return Err(format!("expects {} inputs, got {}", self.arity(), inputs.len()));
        }
        let [h, w, c] = inputs[0];
        let windowed = |k: usize, s: usize, p: Padding, what: &str| -> std::result::Result<(usize, usize), String> {
            if k == 0 || s == 0 {
                return Err(format!("{what} window and stride must be positive"));
            }
            match p {
                Padding::Same => Ok((h.div_ceil(s), w.div_ceil(s))),
                Padding::Valid if k <= h && k <= w => Ok(((h - k) / s + 1, (w - k) / s + 1)),
                Padding::Valid => Err(format!("{k}×{k} {what} window exceeds {h}×{w} input")),
            }
        };
        match *self {
            LayerKind::Conv {
                filters,
                kernel,
                stride,
                padding,
                ..
            } => {
                if filters == 0 {
                    return Err("conv needs at least one filter".into());
                }
                let (oh, ow) = windowed(kernel, stride, padding, "conv")?;
                Ok([oh, ow, filters])
            }
            LayerKind::Deconv {
                filters,
                kernel,
                stride,
                ..
            } => {
                if filters == 0 || kernel == 0 || stride == 0 {
                    return Err("deconv sizes must be positive".into());
                }
                Ok([h * stride, w * stride, filters])
            }
            LayerKind::MaxPool { window, stride, padding } | LayerKind::AvgPool { window, stride, padding } => {
                if window > h || window > w {
                    return Err(format!("{window}×{window} pool window exceeds {h}×{w} input"));
                }
                let (oh, ow) = windowed(window, stride, padding, "pool")?;
                Ok([oh, ow, c])
            }
            LayerKind::Upsample { factor } => {
                if factor == 0 {
                    return Err("upsample factor must be positive".into());
                }
                Ok([h * factor, w * factor, c])
            }
            LayerKind::Concat => {
                let [h2, w2, c2] = inputs[1];
                if (h, w) != (h2, w2) {
                    return Err(format!("cannot concat {h}×{w} with {h2}×{w2}"));
                }
                Ok([h, w, c + c2])
            }
            LayerKind::BatchNorm | LayerKind::Activation { .. } => Ok([h, w, c]),
            LayerKind::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(format!("dropout rate {rate} outside [0, 1)"));
                }
                Ok([h, w, c])
            }
        }
    }
}

/// A row of the architecture overview table that a layer closes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: Vec<LayerRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: ModelKind,
    pub layers: Vec<LayerSpec>,
    pub input_shape: [usize; 3],
    pub output_shape: [usize; 3],
    pub scale: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_rate: Option<usize>,
}

/// Knobs shared by both builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchOptions {
    pub scale: usize,
    /// Input height and width; `512/scale` square when absent.
    pub input_hw: Option<(usize, usize)>,
    pub in_channels: usize,
    /// DenseUNet only; `32/scale` when absent.
    pub growth_rate: Option<usize>,
    pub dropout_rate: f64,
}

impl ArchOptions {
    pub fn new(scale: usize) -> Self {
        Self {
            scale,
            input_hw: None,
            in_channels: 3,
            growth_rate: None,
            dropout_rate: 0.5,
        }
    }

    pub(crate) fn validate(&self) -> Result<(usize, usize)> {
        if ![1, 2, 4, 8].contains(&self.scale) {
            return Err(Error::config(format!("scale must be 1, 2, 4 or 8, got {}", self.scale)));
        }
        let (h, w) = self.input_hw.unwrap_or((512 / self.scale, 512 / self.scale));
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::config(format!("input {h}×{w} must be positive multiples of 16")));
        }
        if self.in_channels == 0 {
            return Err(Error::config("input needs at least one channel"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok((h, w))
    }

    pub(crate) fn channels(&self, full: usize) -> usize {
        (full / self.scale).max(1)
    }
}

pub fn build(model: ModelKind, options: &ArchOptions) -> Result<NetworkSpec> {
    match model {
        ModelKind::Unet => unet::build(options),
        ModelKind::Denseunet => denseunet::build(options),
    }
}

/// Incremental builder: each `push` returns the new layer's index.
pub(crate) struct SpecBuilder {
    layers: Vec<LayerSpec>,
}

impl SpecBuilder {
    pub(crate) fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, kind: LayerKind, inputs: Vec<LayerRef>) -> LayerRef {
        self.layers.push(LayerSpec {
            name: name.into(),
            kind,
            inputs,
            row: None,
        });
        LayerRef::Layer(self.layers.len() - 1)
    }

    pub(crate) fn label(&mut self, at: LayerRef, label: &str, description: &str) {
        if let LayerRef::Layer(i) = at {
            self.layers[i].row = Some(TableRow {
                label: label.into(),
                description: description.into(),
            });
        }
    }

    pub(crate) fn finish(
        self,
        name: ModelKind,
        input_shape: [usize; 3],
        scale: usize,
        growth_rate: Option<usize>,
    ) -> Result<NetworkSpec> {
        let mut spec = NetworkSpec {
            name,
            layers: self.layers,
            input_shape,
            output_shape: input_shape,
            scale,
            growth_rate,
        };
        let trace = shape_trace(&spec)?;
        spec.output_shape = trace.last().map_or(input_shape, |t| t.shape);
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub name: String,
    pub kind: String,
    pub shape: [usize; 3],
    pub parameters: usize,
}

/// Checks the DAG invariants: inputs reference earlier layers with the
/// right arity, and every layer except the last is consumed.
pub fn validate(spec: &NetworkSpec) -> Result<()> {
    let n = spec.layers.len();
    let mut consumed = vec![false; n];
    for (i, layer) in spec.layers.iter().enumerate() {
        if layer.inputs.len() != layer.kind.arity() {
            return Err(Error::shape(format!(
                "layer {:?}: {} expects {} inputs, got {}",
                layer.name,
                layer.kind.name(),
                layer.kind.arity(),
                layer.inputs.len()
            )));
        }
        for r in &layer.inputs {
            if let LayerRef::Layer(j) = *r {
                if j >= i {
                    return Err(Error::shape(format!(
                        "layer {:?} references layer {j}, which is not earlier",
                        layer.name
                    )));
                }
                consumed[j] = true;
            }
        }
    }
    if let Some(i) = consumed[..n.saturating_sub(1)].iter().position(|c| !c) {
        return Err(Error::shape(format!(
            "layer {:?} is a second output; the network must have exactly one",
            spec.layers[i].name
        )));
    }
    Ok(())
}

/// Propagates shapes symbolically. An empty spec traces to nothing and its
/// output is the input.
pub fn shape_trace(spec: &NetworkSpec) -> Result<Vec<TraceEntry>> {
    validate(spec)?;
    let mut shapes: Vec<[usize; 3]> = Vec::with_capacity(spec.layers.len());
    let mut trace = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        let ins: Vec<[usize; 3]> = layer
            .inputs
            .iter()
            .map(|r| match *r {
                LayerRef::Input => spec.input_shape,
                LayerRef::Layer(j) => shapes[j],
            })
            .collect();
        let shape = layer
            .kind
            .output_shape(&ins)
            .map_err(|e| Error::shape(format!("layer {:?}: {e}", layer.name)))?;
        shapes.push(shape);
        trace.push(TraceEntry {
            name: layer.name.clone(),
            kind: layer.kind.name().to_string(),
            shape,
            parameters: layer.kind.parameter_count(ins[0][2]),
        });
    }
    Ok(trace)
}

pub fn output_shape(spec: &NetworkSpec) -> Result<[usize; 3]> {
    Ok(shape_trace(spec)?.last().map_or(spec.input_shape, |t| t.shape))
}

pub fn parameter_count(spec: &NetworkSpec) -> Result<usize> {
    Ok(shape_trace(spec)?.iter().map(|t| t.parameters).sum())
}

/// Layer totals by kind, e.g. `conv → 15`.
pub fn layer_counts(spec: &NetworkSpec) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for l in &spec.layers {
        *counts.entry(l.kind.name().to_string()).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub label: String,
    pub feature_size: String,
    pub description: String,
}

pub fn feature_size(shape: [usize; 3]) -> String {
    format!("{}×{}", shape[0], shape[1])
}

/// The overview table: the input row, then one row per labelled layer.
pub fn table(spec: &NetworkSpec) -> Result<Vec<TableEntry>> {
    let trace = shape_trace(spec)?;
    let mut rows = vec![TableEntry {
        label: "Input".into(),
        feature_size: feature_size(spec.input_shape),
        description: "-".into(),
    }];
    for (layer, t) in spec.layers.iter().zip(&trace) {
        if let Some(row) = &layer.row {
            rows.push(TableEntry {
                label: row.label.clone(),
                feature_size: feature_size(t.shape),
                description: row.description.clone(),
            });
        }
    }
    Ok(rows)
}

/// Everything `trace` reports, serializable as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub model: ModelKind,
    pub scale: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_rate: Option<usize>,
    pub input_shape: [usize; 3],
    pub output_shape: [usize; 3],
    pub parameter_count: usize,
    pub layer_counts: BTreeMap<String, usize>,
    pub table: Vec<TableEntry>,
    pub layers: Vec<TraceEntry>,
}

impl TraceReport {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        let layers = shape_trace(spec)?;
        Ok(Self {
            model: spec.name,
            scale: spec.scale,
            growth_rate: spec.growth_rate,
            input_shape: spec.input_shape,
            output_shape: spec.output_shape,
            parameter_count: layers.iter().map(|t| t.parameters).sum(),
            layer_counts: layer_counts(spec),
            table: table(spec)?,
            layers,
        })
    }

    /// The overview table as aligned text, header line first.
    pub fn table_text(&self) -> String {
        let header = ["Layers", "Feature Size", self.model.display_name()];
        let w0 = self.table.iter().map(|r| r.label.chars().count()).chain([header[0].len()]).max().unwrap_or(0);
        let w1 = self
            .table
            .iter()
            .map(|r| r.feature_size.chars().count())
            .chain([header[1].len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let mut line = |a: &str, b: &str, c: &str| {
            let line = format!("{}  {}  {c}", pad(a, w0), pad(b, w1));
            out.push_str(line.trim_end());
            out.push('\n');
        };
        line(header[0], header[1], header[2]);
        for r in &self.table {
            line(&r.label, &r.feature_size, &r.description);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = self.table_text();
        out.push('\n');
        let w0 = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "{}  {:<10}  {:<14}  {:>10}", pad("layer", w0), "kind", "shape", "params");
        for l in &self.layers {
            let shape = format!("{}×{}×{}", l.shape[0], l.shape[1], l.shape[2]);
            let _ = writeln!(
                out,
                "{}  {:<10}  {}  {:>10}",
                pad(&l.name, w0),
                l.kind,
                pad(&shape, 14),
                l.parameters
            );
        }
        out.push('\n');
        let [ih, iw, ic] = self.input_shape;
        let [oh, ow, oc] = self.output_shape;
        let _ = writeln!(out, "input       {ih}×{iw}×{ic}");
        let _ = writeln!(out, "output      {oh}×{ow}×{oc}");
        let _ = writeln!(out, "parameters  {}", self.parameter_count);
        let counts: Vec<String> = self.layer_counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "layers      {} ({})", self.layers.len(), counts.join(", "));
        out
    }
}

/// Left-aligns by character count; `format!` width counts bytes for `×`.
fn pad(s: &str, width: usize) -> String {
    let n = s.chars().count();
    format!("{s}{}", " ".repeat(width.saturating_sub(n)))
}
