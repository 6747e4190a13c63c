//! Quantized DNN workload description and the golden integer oracle.
//!
//! A [`NetworkSpec`] is an ordered list of layers over a `(rows, cols,
//! channels)` input. Every layer reads the output of the previous layer
//! unless `input_source` names an earlier one; `ResidualAdd` additionally
//! reads `skip_source`. Construction validates the whole chain, so any
//! `NetworkSpec` in hand is shape-consistent.

mod parse;
mod reference;

pub use parse::{parse_network, parse_network_file, write_network, WeightEncoding};
pub use reference::{
    avg_pool_multiplier, reference_conv, reference_fc, reference_inference, reference_pool,
    reference_residual, reference_trace, requantize, AVG_POOL_SHIFT,
};

use serde::{Deserialize, Serialize};

use crate::error::{NetError, Violation};
use crate::tensor::FmapShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Fc,
    MaxPool,
    AvgPool,
    ResidualAdd,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Fc => "fc",
            LayerKind::MaxPool => "max_pool",
            LayerKind::AvgPool => "avg_pool",
            LayerKind::ResidualAdd => "residual_add",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "conv" => LayerKind::Conv,
            "fc" => LayerKind::Fc,
            "max_pool" => LayerKind::MaxPool,
            "avg_pool" => LayerKind::AvgPool,
            "residual_add" => LayerKind::ResidualAdd,
            _ => return None,
        })
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Fc)
    }

    pub fn is_pool(&self) -> bool {
        matches!(self, LayerKind::MaxPool | LayerKind::AvgPool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

/// How a layer's weights were produced; kept so documents round-trip compactly.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum WeightProvenance {
    #[default]
    Inline,
    Seeded { seed: u64, range: i16 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: Option<String>,
    pub kind: LayerKind,
    /// Conv kernel size `K`.
    pub kernel: usize,
    /// `C` for conv, `C_in` for FC.
    pub in_channels: usize,
    /// `M` for conv, `C_out` for FC.
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub activation: Activation,
    pub skip_source: Option<usize>,
    pub input_source: Option<usize>,
    /// Conv: `K,K,C,M` row-major. FC: `C_in,C_out` row-major.
    pub weights: Vec<i16>,
    pub requant_shift: u32,
    pub provenance: WeightProvenance,
}

impl LayerSpec {
    fn blank(kind: LayerKind) -> Self {
        Self {
            name: None,
            kind,
            kernel: 1,
            in_channels: 1,
            out_channels: 1,
            stride: 1,
            padding: 0,
            pool_kernel: 1,
            pool_stride: 1,
            activation: Activation::None,
            skip_source: None,
            input_source: None,
            weights: Vec::new(),
            requant_shift: 0,
            provenance: WeightProvenance::Inline,
        }
    }

    pub fn conv(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: usize,
        weights: Vec<i16>,
    ) -> Self {
        Self {
            kernel,
            in_channels,
            out_channels,
            stride,
            padding,
            weights,
            ..Self::blank(LayerKind::Conv)
        }
    }

    pub fn fc(in_channels: usize, out_channels: usize, weights: Vec<i16>) -> Self {
        Self {
            in_channels,
            out_channels,
            weights,
            ..Self::blank(LayerKind::Fc)
        }
    }

    pub fn max_pool(pool_kernel: usize, pool_stride: usize) -> Self {
        Self {
            pool_kernel,
            pool_stride,
            ..Self::blank(LayerKind::MaxPool)
        }
    }

    pub fn avg_pool(pool_kernel: usize, pool_stride: usize) -> Self {
        Self {
            pool_kernel,
            pool_stride,
            ..Self::blank(LayerKind::AvgPool)
        }
    }

    pub fn residual_add(skip_source: usize) -> Self {
        Self {
            skip_source: Some(skip_source),
            ..Self::blank(LayerKind::ResidualAdd)
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_shift(mut self, shift: u32) -> Self {
        self.requant_shift = shift;
        self
    }

    pub fn with_input_source(mut self, source: usize) -> Self {
        self.input_source = Some(source);
        self
    }

    /// Fills the weights from a seeded uniform draw in `[-range, range]`.
    pub fn seeded(mut self, seed: u64, range: i16) -> Self {
        self.weights = parse::seeded_weights(seed, range, self.weight_len());
        self.provenance = WeightProvenance::Seeded { seed, range };
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    /// Expected weight element count for this layer.
    pub fn weight_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.kernel * self.kernel * self.in_channels * self.out_channels,
            LayerKind::Fc => self.in_channels * self.out_channels,
            _ => 0,
        }
    }

    /// Conv weight at kernel pixel `(kr, kc)`, input channel `c`, output channel `m`.
    #[inline]
    pub fn conv_weight(&self, kr: usize, kc: usize, c: usize, m: usize) -> i16 {
        self.weights[((kr * self.kernel + kc) * self.in_channels + c) * self.out_channels + m]
    }

    /// Number of products summed into one accumulator.
    pub fn reduction_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.kernel * self.kernel * self.in_channels,
            LayerKind::Fc => self.in_channels,
            LayerKind::AvgPool | LayerKind::MaxPool => self.pool_kernel * self.pool_kernel,
            LayerKind::ResidualAdd => 2,
        }
    }

    pub fn label(&self, index: usize) -> String {
        match &self.name {
            Some(n) => format!("{index} ({n})"),
            None => format!("{index} ({})", self.kind.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionSpec {
    pub weight_bits: u32,
    pub activation_bits: u32,
    pub accumulator_bits: u32,
}

impl Default for PrecisionSpec {
    fn default() -> Self {
        Self {
            weight_bits: 8,
            activation_bits: 8,
            accumulator_bits: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: Option<String>,
    pub input_shape: FmapShape,
    pub precision: PrecisionSpec,
    layers: Vec<LayerSpec>,
    shapes: Vec<FmapShape>,
}

impl NetworkSpec {
    /// Validates the layer chain and returns every violation found.
    pub fn new(
        input_shape: FmapShape,
        precision: PrecisionSpec,
        layers: Vec<LayerSpec>,
    ) -> Result<Self, NetError> {
        let shapes = validate(input_shape, &precision, &layers).map_err(NetError::Invalid)?;
        Ok(Self {
            name: None,
            input_shape,
            precision,
            layers,
            shapes,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Output shape of layer `i`.
    pub fn output_shape(&self, i: usize) -> FmapShape {
        self.shapes[i]
    }

    pub fn output_shapes(&self) -> &[FmapShape] {
        &self.shapes
    }

    /// Shape consumed by layer `i` on its main input.
    pub fn input_shape_of(&self, i: usize) -> FmapShape {
        match self.input_index(i) {
            Some(src) => self.shapes[src],
            None => self.input_shape,
        }
    }

    /// Producer of layer `i`'s main input; `None` is the network input.
    pub fn input_index(&self, i: usize) -> Option<usize> {
        self.layers[i]
            .input_source
            .or(if i == 0 { None } else { Some(i - 1) })
    }

    /// Shape of the network output.
    pub fn final_shape(&self) -> FmapShape {
        self.shapes.last().copied().unwrap_or(self.input_shape)
    }

    /// Multiply-accumulate count of one inference over conv and FC layers.
    pub fn mac_count(&self) -> u64 {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| match l.kind {
                LayerKind::Conv => {
                    let o = self.shapes[i];
                    (o.pixels() * l.kernel * l.kernel * l.in_channels * l.out_channels) as u64
                }
                LayerKind::Fc => (l.in_channels * l.out_channels) as u64,
                _ => 0,
            })
            .sum()
    }
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

fn validate(
    input: FmapShape,
    precision: &PrecisionSpec,
    layers: &[LayerSpec],
) -> Result<Vec<FmapShape>, Vec<Violation>> {
    let mut errs = Vec::new();
    let mut err = |layer: Option<usize>, message: String| errs.push(Violation { layer, message });

    for (field, bits) in [
        ("weight_bits", precision.weight_bits),
        ("activation_bits", precision.activation_bits),
    ] {
        if !(1..=16).contains(&bits) {
            err(None, format!("precision.{field} = {bits} outside 1..=16"));
        }
    }
    if precision.accumulator_bits > 63 {
        err(
            None,
            format!(
                "precision.accumulator_bits = {} exceeds 63",
                precision.accumulator_bits
            ),
        );
    }
    if input.rows == 0 || input.cols == 0 || input.channels == 0 {
        err(None, format!("input shape {input} has a zero dimension"));
    }

    let wrange = if (1..=16).contains(&precision.weight_bits) {
        crate::tensor::signed_range(precision.weight_bits)
    } else {
        (i16::MIN as i64, i16::MAX as i64)
    };

    let mut shapes: Vec<FmapShape> = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let label = l.label(i);
        let src = l.input_source.or(if i == 0 { None } else { Some(i - 1) });
        if let Some(s) = l.input_source {
            if s >= i {
                err(Some(i), format!("input_source {s} does not precede layer {label}"));
                shapes.push(FmapShape::new(1, 1, 1));
                continue;
            }
        }
        let (in_shape, in_label) = match src {
            Some(s) => (shapes[s], layers[s].label(s)),
            None => (input, "input".to_string()),
        };

        let mut out = in_shape;
        match l.kind {
            LayerKind::Conv => {
                if l.kernel == 0 {
                    err(Some(i), "kernel must be >= 1".into());
                }
                if l.stride == 0 {
                    err(Some(i), "stride must be >= 1".into());
                }
                if l.in_channels == 0 || l.out_channels == 0 {
                    err(Some(i), "in_channels and out_channels must be >= 1".into());
                }
                if l.in_channels != in_shape.channels {
                    err(
                        Some(i),
                        format!(
                            "in_channels {} of layer {label} does not match {} output channels of layer {in_label}",
                            l.in_channels, in_shape.channels
                        ),
                    );
                }
                if l.kernel > 0 && l.stride > 0 {
                    let pr = in_shape.rows + 2 * l.padding;
                    let pc = in_shape.cols + 2 * l.padding;
                    if pr < l.kernel || pc < l.kernel {
                        err(Some(i), format!("kernel {} exceeds padded input {pr}x{pc}", l.kernel));
                    } else {
                        out = FmapShape::new(
                            (pr - l.kernel) / l.stride + 1,
                            (pc - l.kernel) / l.stride + 1,
                            l.out_channels,
                        );
                    }
                }
            }
            LayerKind::Fc => {
                if l.in_channels == 0 || l.out_channels == 0 {
                    err(Some(i), "in_channels and out_channels must be >= 1".into());
                }
                if l.in_channels != in_shape.elements() {
                    err(
                        Some(i),
                        format!(
                            "in_channels {} of layer {label} does not match {} flattened outputs of layer {in_label}",
                            l.in_channels,
                            in_shape.elements()
                        ),
                    );
                }
                out = FmapShape::new(1, 1, l.out_channels);
            }
            LayerKind::MaxPool | LayerKind::AvgPool => {
                if l.pool_kernel == 0 {
                    err(Some(i), "pool_kernel must be >= 1".into());
                }
                if l.pool_stride == 0 {
                    err(Some(i), "pool_stride must be >= 1".into());
                }
                if l.pool_kernel > 0 && l.pool_stride > 0 {
                    if l.pool_kernel > in_shape.rows || l.pool_kernel > in_shape.cols {
                        err(
                            Some(i),
                            format!("pool window {} exceeds input {in_shape}", l.pool_kernel),
                        );
                    } else {
                        out = FmapShape::new(
                            (in_shape.rows - l.pool_kernel) / l.pool_stride + 1,
                            (in_shape.cols - l.pool_kernel) / l.pool_stride + 1,
                            in_shape.channels,
                        );
                    }
                }
            }
            LayerKind::ResidualAdd => match l.skip_source {
                None => err(Some(i), "residual_add requires skip_source".into()),
                Some(s) if s >= i => {
                    err(Some(i), format!("skip_source {s} does not precede layer {label}"))
                }
                Some(s) if shapes[s] != in_shape => err(
                    Some(i),
                    format!(
                        "skip_source layer {} shape {} differs from main input {in_shape}",
                        layers[s].label(s),
                        shapes[s]
                    ),
                ),
                Some(_) => {}
            },
        }
        if l.kind != LayerKind::ResidualAdd && l.skip_source.is_some() {
            err(Some(i), format!("skip_source only allowed on residual_add, not {}", l.kind.as_str()));
        }
        if l.kind.has_weights() {
            if l.weights.len() != l.weight_len() {
                err(
                    Some(i),
                    format!(
                        "weights have {} elements, expected {}",
                        l.weights.len(),
                        l.weight_len()
                    ),
                );
            }
            if let Some(w) = l
                .weights
                .iter()
                .find(|&&w| !(wrange.0..=wrange.1).contains(&(w as i64)))
            {
                err(
                    Some(i),
                    format!("weight {w} outside {}-bit range", precision.weight_bits),
                );
            }
        } else if !l.weights.is_empty() {
            err(Some(i), format!("{} layers carry no weights", l.kind.as_str()));
        }
        let acc_need = precision.weight_bits + precision.activation_bits + ceil_log2(l.reduction_len());
        if l.kind.has_weights() && acc_need > precision.accumulator_bits {
            err(
                Some(i),
                format!(
                    "accumulator_bits {} < {} required for reduction length {}",
                    precision.accumulator_bits,
                    acc_need,
                    l.reduction_len()
                ),
            );
        }
        if l.requant_shift > 62 {
            err(Some(i), format!("requant_shift {} too large", l.requant_shift));
        }
        shapes.push(out);
    }
    if errs.is_empty() {
        Ok(shapes)
    } else {
        Err(errs)
    }
}
