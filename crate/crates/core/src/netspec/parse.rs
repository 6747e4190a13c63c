//! TOML network documents.
//!
//! ```toml
//! name = "toy"
//! [input]
//! shape = [8, 8, 4]        # rows, cols, channels
//! [precision]              # optional, defaults 8/8/32
//! weight_bits = 8
//! [[layers]]
//! kind = "conv"
//! kernel = 3
//! in_channels = 4
//! out_channels = 4
//! stride = 1
//! padding = 1
//! activation = "relu"
//! requant_shift = 6
//! weights = { hex = "01ff..." }   # or { file = "w.bin" } or { seed = 7, range = 127 }
//! ```
//!
//! Weight bytes are little-endian two's complement, one byte per weight
//! when `weight_bits <= 8` and two otherwise, ordered `K,K,C,M` for conv
//! and `C_in,C_out` for FC.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, LayerKind, LayerSpec, NetworkSpec, PrecisionSpec, WeightProvenance};
use crate::error::{NetError, Violation};
use crate::tensor::FmapShape;

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    input: InputDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    precision: Option<PrecisionDoc>,
    #[serde(default)]
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct InputDoc {
    shape: [usize; 3],
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct PrecisionDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_bits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation_bits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    accumulator_bits: Option<u32>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pool_kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pool_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    skip_source: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_source: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    requant_shift: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<WeightsDoc>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct WeightsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    range: Option<i16>,
}

/// Deterministic uniform weights in `[-range, range]`.
pub(crate) fn seeded_weights(seed: u64, range: i16, n: usize) -> Vec<i16> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-range..=range)).collect()
}

fn decode_bytes(bytes: &[u8], wide: bool) -> Vec<i16> {
    if wide {
        bytes
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]))
            .collect()
    } else {
        bytes.iter().map(|&b| b as i8 as i16).collect()
    }
}

fn encode_bytes(weights: &[i16], wide: bool) -> Vec<u8> {
    if wide {
        weights.iter().flat_map(|w| w.to_le_bytes()).collect()
    } else {
        weights.iter().map(|&w| w as i8 as u8).collect()
    }
}

/// Parses a network document. Sidecar weight files resolve against `base_dir`.
pub fn parse_network(text: &str, base_dir: Option<&Path>) -> Result<NetworkSpec, NetError> {
    if text.trim().is_empty() {
        return Err(NetError::Malformed("empty document".into()));
    }
    let doc: NetworkDoc = toml::from_str(text).map_err(|e| NetError::Malformed(e.to_string()))?;
    let pd = doc.precision.unwrap_or(PrecisionDoc {
        weight_bits: None,
        activation_bits: None,
        accumulator_bits: None,
    });
    let def = PrecisionSpec::default();
    let precision = PrecisionSpec {
        weight_bits: pd.weight_bits.unwrap_or(def.weight_bits),
        activation_bits: pd.activation_bits.unwrap_or(def.activation_bits),
        accumulator_bits: pd.accumulator_bits.unwrap_or(def.accumulator_bits),
    };
    let wide = precision.weight_bits > 8;
    let mut violations = Vec::new();
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, ld) in doc.layers.into_iter().enumerate() {
        let kind = LayerKind::parse(&ld.kind).ok_or_else(|| NetError::UnsupportedKind {
            layer: i,
            kind: ld.kind.clone(),
        })?;
        let activation = match ld.activation.as_deref() {
            None | Some("none") => Activation::None,
            Some("relu") => Activation::Relu,
            Some(other) => {
                violations.push(Violation {
                    layer: Some(i),
                    message: format!("unknown activation `{other}`"),
                });
                Activation::None
            }
        };
        let mut l = LayerSpec {
            name: ld.name,
            kind,
            kernel: ld.kernel.unwrap_or(1),
            in_channels: ld.in_channels.unwrap_or(1),
            out_channels: ld.out_channels.unwrap_or(1),
            stride: ld.stride.unwrap_or(1),
            padding: ld.padding.unwrap_or(0),
            pool_kernel: ld.pool_kernel.unwrap_or(1),
            pool_stride: ld.pool_stride.unwrap_or(1),
            activation,
            skip_source: ld.skip_source,
            input_source: ld.input_source,
            weights: Vec::new(),
            requant_shift: ld.requant_shift.unwrap_or(0),
            provenance: WeightProvenance::Inline,
        };
        if kind.has_weights() {
            for (field, v) in [("kernel", ld.kernel), ("in_channels", ld.in_channels), ("out_channels", ld.out_channels)] {
                if v.is_none() && (field != "kernel" || kind == LayerKind::Conv) {
                    violations.push(Violation {
                        layer: Some(i),
                        message: format!("missing field `{field}`"),
                    });
                }
            }
        }
        if kind.is_pool() && ld.pool_kernel.is_none() {
            violations.push(Violation {
                layer: Some(i),
                message: "missing field `pool_kernel`".into(),
            });
        }
        match ld.weights {
            Some(WeightsDoc { hex: Some(h), file: None, seed: None, range: None }) => {
                let bytes = hex::decode(h.trim())
                    .map_err(|e| NetError::Malformed(format!("layer {i}: weights.hex: {e}")))?;
                l.weights = decode_bytes(&bytes, wide);
            }
            Some(WeightsDoc { hex: None, file: Some(f), seed: None, range: None }) => {
                let path = match base_dir {
                    Some(d) => d.join(&f),
                    None => Path::new(&f).to_path_buf(),
                };
                let bytes = std::fs::read(&path).map_err(|source| NetError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                l.weights = decode_bytes(&bytes, wide);
            }
            Some(WeightsDoc { hex: None, file: None, seed: Some(seed), range }) => {
                let max = ((1i32 << (precision.weight_bits.clamp(1, 16) - 1)) - 1) as i16;
                let range = range.unwrap_or(max);
                l.weights = seeded_weights(seed, range, l.weight_len());
                l.provenance = WeightProvenance::Seeded { seed, range };
            }
            Some(_) => {
                return Err(NetError::Malformed(format!(
                    "layer {i}: weights needs exactly one of hex, file, or seed"
                )))
            }
            None => {}
        }
        layers.push(l);
    }
    if !violations.is_empty() {
        return Err(NetError::Invalid(violations));
    }
    let [r, c, ch] = doc.input.shape;
    let net = NetworkSpec::new(FmapShape::new(r, c, ch), precision, layers)?;
    Ok(match doc.name {
        Some(n) => net.with_name(n),
        None => net,
    })
}

pub fn parse_network_file(path: &Path) -> Result<NetworkSpec, NetError> {
    let text = std::fs::read_to_string(path).map_err(|source| NetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_network(&text, path.parent())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightEncoding {
    /// Seeded layers stay seeded, everything else is inline hex.
    Compact,
    Hex,
}

pub fn write_network(net: &NetworkSpec, encoding: WeightEncoding) -> String {
    let p = net.precision;
    let wide = p.weight_bits > 8;
    let layers = net
        .layers()
        .iter()
        .map(|l| {
            let w = l.kind == LayerKind::Fc || l.kind == LayerKind::Conv;
            let conv = l.kind == LayerKind::Conv;
            let pool = l.kind.is_pool();
            let weights = if !w {
                None
            } else {
                Some(match (&l.provenance, encoding) {
                    (WeightProvenance::Seeded { seed, range }, WeightEncoding::Compact) => WeightsDoc {
                        hex: None,
                        file: None,
                        seed: Some(*seed),
                        range: Some(*range),
                    },
                    _ => WeightsDoc {
                        hex: Some(hex::encode(encode_bytes(&l.weights, wide))),
                        file: None,
                        seed: None,
                        range: None,
                    },
                })
            };
            LayerDoc {
                kind: l.kind.as_str().to_string(),
                name: l.name.clone(),
                kernel: conv.then_some(l.kernel),
                in_channels: w.then_some(l.in_channels),
                out_channels: w.then_some(l.out_channels),
                stride: conv.then_some(l.stride),
                padding: conv.then_some(l.padding),
                pool_kernel: pool.then_some(l.pool_kernel),
                pool_stride: pool.then_some(l.pool_stride),
                activation: (l.activation == Activation::Relu).then(|| "relu".to_string()),
                skip_source: l.skip_source,
                input_source: l.input_source,
                requant_shift: (l.requant_shift != 0).then_some(l.requant_shift),
                weights,
            }
        })
        .collect();
    let doc = NetworkDoc {
        name: net.name.clone(),
        input: InputDoc {
            shape: [net.input_shape.rows, net.input_shape.cols, net.input_shape.channels],
        },
        precision: Some(PrecisionDoc {
            weight_bits: Some(p.weight_bits),
            activation_bits: Some(p.activation_bits),
            accumulator_bits: Some(p.accumulator_bits),
        }),
        layers,
    };
    toml::to_string(&doc).expect("network document serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
name = "toy"
[input]
shape = [32, 32, 3]
[[layers]]
kind = "conv"
kernel = 3
in_channels = 3
out_channels = 64
stride = 1
padding = 1
activation = "relu"
requant_shift = 7
weights = { seed = 3 }
"#;

    #[test]
    fn parses_single_conv() {
        let net = parse_network(TOY, None).unwrap();
        assert_eq!(net.layers().len(), 1);
        assert_eq!(net.output_shape(0), FmapShape::new(32, 32, 64));
        assert_eq!(net.layers()[0].weights.len(), 3 * 3 * 3 * 64);
        assert!(net.layers()[0].weights.iter().all(|w| (-127..=127).contains(w)));
    }

    #[test]
    fn empty_document_is_error() {
        assert!(matches!(parse_network("", None), Err(NetError::Malformed(_))));
        assert!(matches!(parse_network("   \n", None), Err(NetError::Malformed(_))));
    }

    #[test]
    fn unknown_kind_rejected() {
        let doc = "[input]\nshape=[4,4,1]\n[[layers]]\nkind = \"lstm\"\n";
        assert!(matches!(
            parse_network(doc, None),
            Err(NetError::UnsupportedKind { layer: 0, .. })
        ));
    }

    #[test]
    fn stride_zero_names_field() {
        let doc = TOY.replace("stride = 1", "stride = 0");
        let err = parse_network(&doc, None).unwrap_err().to_string();
        assert!(err.contains("stride"), "{err}");
    }

    #[test]
    fn hex_and_file_weights_agree() {
        let dir = std::env::temp_dir().join(format!("domino-parse-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let w: Vec<i16> = vec![1, -1, 127, -128];
        std::fs::write(dir.join("w.bin"), encode_bytes(&w, false)).unwrap();
        let base = "[input]\nshape=[1,1,2]\n[[layers]]\nkind=\"fc\"\nin_channels=2\nout_channels=2\n";
        let a = parse_network(&format!("{base}weights={{file=\"w.bin\"}}\n"), Some(&dir)).unwrap();
        let b = parse_network(&format!("{base}weights={{hex=\"01ff7f80\"}}\n"), None).unwrap();
        assert_eq!(a.layers()[0].weights, w);
        assert_eq!(b.layers()[0].weights, w);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn write_then_parse_is_lossless() {
        let net = parse_network(TOY, None).unwrap();
        for enc in [WeightEncoding::Compact, WeightEncoding::Hex] {
            let text = write_network(&net, enc);
            let back = parse_network(&text, None).unwrap();
            assert_eq!(back.layers()[0].weights, net.layers()[0].weights);
            assert_eq!(back.output_shapes(), net.output_shapes());
        }
    }
}
