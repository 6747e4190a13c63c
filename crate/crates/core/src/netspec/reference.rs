//! Golden integer inference. Direct loops, no matrix conversion.

use super::{Activation, LayerKind, LayerSpec, NetworkSpec, PrecisionSpec};
use crate::error::{NetError, ShapeError};
use crate::tensor::{saturate, signed_range, FmapShape, Tensor};

/// Fixed-point shift used by the average-pool reciprocal.
pub const AVG_POOL_SHIFT: u32 = 16;

/// Reciprocal of the pooling window area in `AVG_POOL_SHIFT` fixed point.
pub fn avg_pool_multiplier(pool_kernel: usize) -> i64 {
    let area = (pool_kernel * pool_kernel) as i64;
    ((1i64 << AVG_POOL_SHIFT) + area / 2) / area
}

/// Activation, then arithmetic right shift (floor) and saturation.
#[inline]
pub fn requantize(acc: i64, shift: u32, activation: Activation, bits: u32) -> i32 {
    let v = match activation {
        Activation::Relu => acc.max(0),
        Activation::None => acc,
    };
    saturate(v >> shift, bits)
}

fn check_acc(layer: usize, value: i64, bits: u32) -> Result<(), NetError> {
    let (lo, hi) = signed_range(bits);
    if value < lo || value > hi {
        Err(NetError::AccumulatorOverflow { layer, value, bits })
    } else {
        Ok(())
    }
}

fn expect_shape(ifm: &Tensor, expected: FmapShape, layer: usize) -> Result<(), NetError> {
    let actual = ifm.fmap_shape();
    if ifm.dims().len() != 3 || actual != expected {
        return Err(NetError::Shape {
            layer,
            source: ShapeError::Mismatch {
                expected: expected.to_string(),
                actual: format!("{:?}", ifm.dims()),
            },
        });
    }
    Ok(())
}

fn conv_out_shape(s: FmapShape, l: &LayerSpec) -> FmapShape {
    FmapShape::new(
        (s.rows + 2 * l.padding - l.kernel) / l.stride + 1,
        (s.cols + 2 * l.padding - l.kernel) / l.stride + 1,
        l.out_channels,
    )
}

/// Pre-activation accumulators of a convolution.
pub(crate) fn conv_accumulate(ifm: &Tensor, l: &LayerSpec) -> (FmapShape, Vec<i64>) {
    let s = ifm.fmap_shape();
    let o = conv_out_shape(s, l);
    let x = ifm.data();
    let mut acc = vec![0i64; o.elements()];
    let p = l.padding as isize;
    for or in 0..o.rows {
        for oc in 0..o.cols {
            let out = &mut acc[o.index(or, oc, 0)..o.index(or, oc, 0) + o.channels];
            for kr in 0..l.kernel {
                let ir = (or * l.stride + kr) as isize - p;
                if ir < 0 || ir >= s.rows as isize {
                    continue;
                }
                for kc in 0..l.kernel {
                    let ic = (oc * l.stride + kc) as isize - p;
                    if ic < 0 || ic >= s.cols as isize {
                        continue;
                    }
                    let base = s.index(ir as usize, ic as usize, 0);
                    for c in 0..s.channels {
                        let xv = x[base + c] as i64;
                        if xv == 0 {
                            continue;
                        }
                        let wrow = ((kr * l.kernel + kc) * l.in_channels + c) * l.out_channels;
                        for (m, a) in out.iter_mut().enumerate() {
                            *a += xv * l.weights[wrow + m] as i64;
                        }
                    }
                }
            }
        }
    }
    (o, acc)
}

pub fn reference_conv(
    ifm: &Tensor,
    layer: &LayerSpec,
    precision: &PrecisionSpec,
) -> Result<Tensor, NetError> {
    conv_indexed(ifm, layer, precision, 0)
}

fn conv_indexed(
    ifm: &Tensor,
    l: &LayerSpec,
    precision: &PrecisionSpec,
    index: usize,
) -> Result<Tensor, NetError> {
    if l.kind != LayerKind::Conv {
        return Err(NetError::Unsupported {
            layer: index,
            message: format!("reference_conv called on {}", l.kind.as_str()),
        });
    }
    let s = ifm.fmap_shape();
    if ifm.dims().len() != 3 || s.channels != l.in_channels {
        return Err(NetError::Shape {
            layer: index,
            source: ShapeError::Mismatch {
                expected: format!("*x*x{}", l.in_channels),
                actual: format!("{:?}", ifm.dims()),
            },
        });
    }
    if s.rows + 2 * l.padding < l.kernel || s.cols + 2 * l.padding < l.kernel {
        return Err(NetError::Shape {
            layer: index,
            source: ShapeError::Mismatch {
                expected: format!("at least {0}x{0} padded", l.kernel),
                actual: s.to_string(),
            },
        });
    }
    let (o, acc) = conv_accumulate(ifm, l);
    let mut out = Vec::with_capacity(acc.len());
    for a in acc {
        check_acc(index, a, precision.accumulator_bits)?;
        out.push(requantize(a, l.requant_shift, l.activation, precision.activation_bits));
    }
    Ok(Tensor::fmap(o, out)?)
}

pub fn reference_fc(
    x: &Tensor,
    layer: &LayerSpec,
    precision: &PrecisionSpec,
) -> Result<Tensor, NetError> {
    fc_indexed(x, layer, precision, 0)
}

fn fc_indexed(
    x: &Tensor,
    l: &LayerSpec,
    precision: &PrecisionSpec,
    index: usize,
) -> Result<Tensor, NetError> {
    if l.kind != LayerKind::Fc {
        return Err(NetError::Unsupported {
            layer: index,
            message: format!("reference_fc called on {}", l.kind.as_str()),
        });
    }
    if x.len() != l.in_channels {
        return Err(NetError::Shape {
            layer: index,
            source: ShapeError::Mismatch {
                expected: format!("{} elements", l.in_channels),
                actual: format!("{}", x.len()),
            },
        });
    }
    let mut acc = vec![0i64; l.out_channels];
    for (c, &xv) in x.data().iter().enumerate() {
        if xv == 0 {
            continue;
        }
        let row = &l.weights[c * l.out_channels..(c + 1) * l.out_channels];
        for (a, &w) in acc.iter_mut().zip(row) {
            *a += xv as i64 * w as i64;
        }
    }
    let mut out = Vec::with_capacity(acc.len());
    for a in acc {
        check_acc(index, a, precision.accumulator_bits)?;
        out.push(requantize(a, l.requant_shift, l.activation, precision.activation_bits));
    }
    Ok(Tensor::new(vec![1, 1, l.out_channels], out)?)
}

pub fn reference_pool(
    ifm: &Tensor,
    layer: &LayerSpec,
    precision: &PrecisionSpec,
) -> Result<Tensor, NetError> {
    pool_indexed(ifm, layer, precision, 0)
}

fn pool_indexed(
    ifm: &Tensor,
    l: &LayerSpec,
    precision: &PrecisionSpec,
    index: usize,
) -> Result<Tensor, NetError> {
    if !l.kind.is_pool() {
        return Err(NetError::Unsupported {
            layer: index,
            message: format!("reference_pool called on {}", l.kind.as_str()),
        });
    }
    let s = ifm.fmap_shape();
    if l.pool_kernel > s.rows || l.pool_kernel > s.cols {
        return Err(NetError::Shape {
            layer: index,
            source: ShapeError::Mismatch {
                expected: format!("at least {0}x{0}", l.pool_kernel),
                actual: s.to_string(),
            },
        });
    }
    let o = FmapShape::new(
        (s.rows - l.pool_kernel) / l.pool_stride + 1,
        (s.cols - l.pool_kernel) / l.pool_stride + 1,
        s.channels,
    );
    let x = ifm.data();
    let mul = avg_pool_multiplier(l.pool_kernel);
    let mut out = Vec::with_capacity(o.elements());
    for or in 0..o.rows {
        for oc in 0..o.cols {
            for ch in 0..s.channels {
                let window = (0..l.pool_kernel).flat_map(|dr| {
                    (0..l.pool_kernel).map(move |dc| {
                        x[s.index(or * l.pool_stride + dr, oc * l.pool_stride + dc, ch)] as i64
                    })
                });
                let v = match l.kind {
                    LayerKind::MaxPool => window.max().unwrap_or(0),
                    _ => (window.sum::<i64>() * mul) >> AVG_POOL_SHIFT,
                };
                out.push(requantize(v, 0, l.activation, precision.activation_bits));
            }
        }
    }
    Ok(Tensor::fmap(o, out)?)
}

/// Saturating element-wise addition followed by the layer activation.
pub fn reference_residual(
    main: &Tensor,
    skip: &Tensor,
    layer: &LayerSpec,
    precision: &PrecisionSpec,
) -> Result<Tensor, NetError> {
    if main.dims() != skip.dims() {
        return Err(NetError::Shape {
            layer: 0,
            source: ShapeError::Mismatch {
                expected: format!("{:?}", main.dims()),
                actual: format!("{:?}", skip.dims()),
            },
        });
    }
    let bits = precision.activation_bits;
    let out = main
        .data()
        .iter()
        .zip(skip.data())
        .map(|(&a, &b)| {
            let sum = saturate(a as i64 + b as i64, bits);
            requantize(sum as i64, 0, layer.activation, bits)
        })
        .collect();
    Ok(Tensor::new(main.dims().to_vec(), out)?)
}

/// Runs every layer and returns all layer outputs in order.
pub fn reference_trace(net: &NetworkSpec, input: &Tensor) -> Result<Vec<Tensor>, NetError> {
    expect_shape(input, net.input_shape, 0).map_err(|e| match e {
        NetError::Shape { source, .. } => NetError::Shape { layer: 0, source },
        e => e,
    })?;
    let p = &net.precision;
    let mut outs: Vec<Tensor> = Vec::with_capacity(net.layers().len());
    for (i, l) in net.layers().iter().enumerate() {
        let x = match net.input_index(i) {
            Some(s) => &outs[s],
            None => input,
        };
        let y = match l.kind {
            LayerKind::Conv => conv_indexed(x, l, p, i)?,
            LayerKind::Fc => {
                let flat = x.clone().reshaped(vec![x.len()]).map_err(|source| NetError::Shape {
                    layer: i,
                    source,
                })?;
                fc_indexed(&flat, l, p, i)?
            }
            LayerKind::MaxPool | LayerKind::AvgPool => pool_indexed(x, l, p, i)?,
            LayerKind::ResidualAdd => {
                let skip = &outs[l.skip_source.expect("validated")];
                reference_residual(x, skip, l, p).map_err(|e| match e {
                    NetError::Shape { source, .. } => NetError::Shape { layer: i, source },
                    e => e,
                })?
            }
        };
        outs.push(y);
    }
    Ok(outs)
}

pub fn reference_inference(net: &NetworkSpec, input: &Tensor) -> Result<Tensor, NetError> {
    let mut outs = reference_trace(net, input)?;
    Ok(outs.pop().unwrap_or_else(|| input.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::NetworkSpec;

    fn p8() -> PrecisionSpec {
        PrecisionSpec::default()
    }

    #[test]
    fn identity_1x1_conv() {
        let c = 5;
        let mut w = vec![0i16; c * c];
        for i in 0..c {
            w[i * c + i] = 1;
        }
        let l = LayerSpec::conv(1, c, c, 1, 0, w);
        let data: Vec<i32> = (0..4 * 4 * c as i32).map(|v| (v % 200) - 100).collect();
        let x = Tensor::fmap(FmapShape::new(4, 4, c), data).unwrap();
        let y = reference_conv(&x, &l, &p8()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_3x3_counts_nine() {
        let l = LayerSpec::conv(3, 1, 1, 1, 0, vec![1; 9]);
        let x = Tensor::fmap(FmapShape::new(3, 3, 1), vec![1; 9]).unwrap();
        let y = reference_conv(&x, &l, &p8()).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9]);
    }

    #[test]
    fn fc_hand_arithmetic() {
        let l = LayerSpec::fc(2, 2, vec![3, 4, 5, 6]);
        let x = Tensor::new(vec![2], vec![1, 2]).unwrap();
        assert_eq!(reference_fc(&x, &l, &p8()).unwrap().data(), &[13, 16]);
        let id = LayerSpec::fc(3, 3, vec![1, 0, 0, 0, 1, 0, 0, 0, 1]);
        let x = Tensor::new(vec![3], vec![-7, 0, 99]).unwrap();
        assert_eq!(reference_fc(&x, &id, &p8()).unwrap().data(), x.data());
    }

    #[test]
    fn fc_rejects_length_mismatch() {
        let l = LayerSpec::fc(3, 1, vec![1, 1, 1]);
        let x = Tensor::new(vec![2], vec![1, 2]).unwrap();
        assert!(reference_fc(&x, &l, &p8()).is_err());
    }

    #[test]
    fn pool_examples() {
        let x = Tensor::fmap(FmapShape::new(2, 2, 1), vec![1, 2, 3, 4]).unwrap();
        let max = reference_pool(&x, &LayerSpec::max_pool(2, 2), &p8()).unwrap();
        assert_eq!(max.data(), &[4]);
        let avg = reference_pool(&x, &LayerSpec::avg_pool(2, 2), &p8()).unwrap();
        assert_eq!(avg.data(), &[2]);
        assert!(reference_pool(&x, &LayerSpec::max_pool(3, 1), &p8()).is_err());
    }

    #[test]
    fn avg_multiplier_is_exact_for_powers_of_two() {
        assert_eq!(avg_pool_multiplier(2), 1 << 14);
        assert_eq!(avg_pool_multiplier(4), 1 << 12);
        for sum in -2000i64..2000 {
            assert_eq!((sum * avg_pool_multiplier(2)) >> AVG_POOL_SHIFT, sum.div_euclid(4));
        }
    }

    #[test]
    fn requantize_floors_and_saturates() {
        assert_eq!(requantize(-1, 1, Activation::None, 8), -1);
        assert_eq!(requantize(-3, 1, Activation::None, 8), -2);
        assert_eq!(requantize(-3, 1, Activation::Relu, 8), 0);
        assert_eq!(requantize(1000, 2, Activation::None, 8), 127);
        assert_eq!(requantize(-1000, 0, Activation::None, 8), -128);
    }

    #[test]
    fn empty_network_is_identity() {
        let net = NetworkSpec::new(FmapShape::new(2, 2, 1), p8(), vec![]).unwrap();
        let x = Tensor::fmap(FmapShape::new(2, 2, 1), vec![1, -2, 3, 4]).unwrap();
        assert_eq!(reference_inference(&net, &x).unwrap(), x);
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let net = NetworkSpec::new(FmapShape::new(2, 2, 1), p8(), vec![]).unwrap();
        let x = Tensor::fmap(FmapShape::new(2, 3, 1), vec![0; 6]).unwrap();
        assert!(reference_inference(&net, &x).is_err());
    }
}
