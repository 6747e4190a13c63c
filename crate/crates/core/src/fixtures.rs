//! Benchmark networks with seeded weights, plus random toy networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netspec::{Activation, LayerSpec, NetworkSpec, PrecisionSpec};
use crate::tensor::{FmapShape, Tensor};

/// Weight draw range used by the benchmark fixtures.
pub const FIXTURE_WEIGHT_RANGE: i16 = 127;

/// Requantization shift that keeps layer outputs in a useful range for
/// uniform weights: `round(log2(K^2 C) / 2 + 6)`.
pub fn fixture_shift(reduction: usize) -> u32 {
    ((reduction as f64).log2() / 2.0 + 6.0).round() as u32
}

fn conv(k: usize, c: usize, m: usize, s: usize, p: usize, seed: u64, act: Activation) -> LayerSpec {
    LayerSpec::conv(k, c, m, s, p, Vec::new())
        .seeded(seed, FIXTURE_WEIGHT_RANGE)
        .with_activation(act)
        .with_shift(fixture_shift(k * k * c))
}

fn fc(c: usize, m: usize, seed: u64, act: Activation) -> LayerSpec {
    LayerSpec::fc(c, m, Vec::new())
        .seeded(seed, FIXTURE_WEIGHT_RANGE)
        .with_activation(act)
        .with_shift(fixture_shift(c))
}

/// `0` in `cfg` is a 2x2 max pool, anything else a 3x3 "same" conv.
fn vgg(name: &str, cfg: &[usize], size: usize, fcs: &[usize]) -> NetworkSpec {
    let mut layers = Vec::new();
    let mut c = 3;
    let mut spatial = size;
    let mut seed = 1;
    let (mut ci, mut pi) = (0, 0);
    let mut block = 1;
    for &m in cfg {
        if m == 0 {
            pi += 1;
            layers.push(LayerSpec::max_pool(2, 2).with_name(format!("pool{pi}")));
            spatial /= 2;
            block += 1;
            ci = 0;
        } else {
            ci += 1;
            layers.push(conv(3, c, m, 1, 1, seed, Activation::Relu).with_name(format!("conv{block}_{ci}")));
            seed += 1;
            c = m;
        }
    }
    let mut fin = spatial * spatial * c;
    for (i, &out) in fcs.iter().enumerate() {
        let act = if i + 1 == fcs.len() {
            Activation::None
        } else {
            Activation::Relu
        };
        layers.push(fc(fin, out, seed, act).with_name(format!("fc{}", i + 1)));
        seed += 1;
        fin = out;
    }
    NetworkSpec::new(FmapShape::new(size, size, 3), PrecisionSpec::default(), layers)
        .expect("fixture is valid")
        .with_name(name)
}

pub fn vgg11_cifar() -> NetworkSpec {
    let cfg = [64, 0, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0];
    vgg("vgg11-cifar10", &cfg, 32, &[512, 512, 10])
}

pub fn vgg16_imagenet() -> NetworkSpec {
    let cfg = [
        64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0,
    ];
    vgg("vgg16-imagenet", &cfg, 224, &[4096, 4096, 1000])
}

pub fn vgg19_imagenet() -> NetworkSpec {
    let cfg = [
        64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0,
    ];
    vgg("vgg19-imagenet", &cfg, 224, &[4096, 4096, 1000])
}

/// ResNet-18 for 32x32 inputs: 3x3 stem, four stages of two basic blocks,
/// 1x1 projection shortcuts where the shape changes, 4x4 average pool.
pub fn resnet18_cifar() -> NetworkSpec {
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut seed = 1;
    let mut next_seed = || {
        seed += 1;
        seed - 1
    };
    layers.push(conv(3, 3, 64, 1, 1, next_seed(), Activation::Relu).with_name("conv1"));
    let mut c = 64;
    for (stage, &m) in [64, 128, 256, 512].iter().enumerate() {
        for blk in 0..2 {
            let s = if stage > 0 && blk == 0 { 2 } else { 1 };
            let input = layers.len() - 1;
            let tag = format!("layer{}.{blk}", stage + 1);
            layers.push(conv(3, c, m, s, 1, next_seed(), Activation::Relu).with_name(format!("{tag}.conv1")));
            layers.push(conv(3, m, m, 1, 1, next_seed(), Activation::None).with_name(format!("{tag}.conv2")));
            let main = layers.len() - 1;
            if s != 1 || c != m {
                layers.push(
                    conv(1, c, m, s, 0, next_seed(), Activation::None)
                        .with_input_source(input)
                        .with_name(format!("{tag}.shortcut")),
                );
                layers.push(LayerSpec::residual_add(main).with_activation(Activation::Relu).with_name(format!("{tag}.add")));
            } else {
                layers.push(LayerSpec::residual_add(input).with_activation(Activation::Relu).with_name(format!("{tag}.add")));
            }
            c = m;
        }
    }
    layers.push(LayerSpec::avg_pool(4, 4).with_name("avgpool"));
    layers.push(fc(512, 10, next_seed(), Activation::None).with_name("fc"));
    NetworkSpec::new(FmapShape::new(32, 32, 3), PrecisionSpec::default(), layers)
        .expect("fixture is valid")
        .with_name("resnet18-cifar10")
}

/// One 3x3 "same" conv with ReLU on an 8x8x4 input: nine tiles.
pub fn toy_conv() -> NetworkSpec {
    let l = LayerSpec::conv(3, 4, 4, 1, 1, Vec::new())
        .seeded(1, FIXTURE_WEIGHT_RANGE)
        .with_activation(Activation::Relu)
        .with_shift(fixture_shift(36))
        .with_name("conv");
    NetworkSpec::new(FmapShape::new(8, 8, 4), PrecisionSpec::default(), vec![l])
        .expect("fixture is valid")
        .with_name("toy-conv")
}

/// All benchmark fixtures by file stem.
pub fn benchmarks() -> Vec<(&'static str, fn() -> NetworkSpec)> {
    vec![
        ("vgg11_cifar10", vgg11_cifar as fn() -> NetworkSpec),
        ("resnet18_cifar10", resnet18_cifar),
        ("vgg16_imagenet", vgg16_imagenet),
        ("vgg19_imagenet", vgg19_imagenet),
    ]
}

/// Random input activations in `[lo, hi]`.
pub fn random_input(shape: FmapShape, seed: u64, lo: i32, hi: i32) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.elements()).map(|_| rng.gen_range(lo..=hi)).collect();
    Tensor::fmap(shape, data).expect("length matches")
}

/// Random non-negative 8-bit input, the usual post-ReLU image range.
pub fn fixture_input(net: &NetworkSpec, seed: u64) -> Tensor {
    random_input(net.input_shape, seed, 0, 127)
}

/// Small random conv/pool/FC network. Layer shapes always validate.
pub fn random_net(seed: u64) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = rng.gen_range(3..=16);
    let input = FmapShape::new(size, size, rng.gen_range(1..=8));
    let mut shape = input;
    let mut layers = Vec::new();
    let convs = rng.gen_range(1..=3);
    let mut wseed = seed.wrapping_mul(1000);
    for _ in 0..convs {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let p = rng.gen_range(0..=1);
        if shape.rows + 2 * p < k {
            continue;
        }
        let s = rng.gen_range(1..=2);
        let m = rng.gen_range(1..=8);
        let act = if rng.gen_bool(0.7) {
            Activation::Relu
        } else {
            Activation::None
        };
        wseed += 1;
        let l = LayerSpec::conv(k, shape.channels, m, s, p, Vec::new())
            .seeded(wseed, 15)
            .with_activation(act)
            .with_shift(rng.gen_range(0..=4));
        let o = (shape.rows + 2 * p - k) / s + 1;
        shape = FmapShape::new(o, o, m);
        layers.push(l);
        if rng.gen_bool(0.3) {
            // Same-shape conv plus a shortcut around it.
            let skip = layers.len() - 1;
            let (k, p) = if rng.gen_bool(0.5) { (3, 1) } else { (1, 0) };
            wseed += 1;
            layers.push(
                LayerSpec::conv(k, m, m, 1, p, Vec::new())
                    .seeded(wseed, 15)
                    .with_shift(rng.gen_range(0..=4)),
            );
            let act = if rng.gen_bool(0.5) {
                Activation::Relu
            } else {
                Activation::None
            };
            layers.push(LayerSpec::residual_add(skip).with_activation(act));
        }
        if shape.rows >= 2 && rng.gen_bool(0.4) {
            let pool = if rng.gen_bool(0.5) {
                LayerSpec::max_pool(2, 2)
            } else {
                LayerSpec::avg_pool(2, 2)
            };
            layers.push(pool);
            shape = FmapShape::new(shape.rows / 2, shape.cols / 2, m);
        }
    }
    if layers.is_empty() || rng.gen_bool(0.5) {
        wseed += 1;
        let m = rng.gen_range(1..=10);
        layers.push(
            LayerSpec::fc(shape.elements(), m, Vec::new())
                .seeded(wseed, 15)
                .with_shift(rng.gen_range(0..=4)),
        );
    }
    NetworkSpec::new(input, PrecisionSpec::default(), layers)
        .expect("random net is valid")
        .with_name(format!("random-{seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_shapes() {
        assert_eq!(vgg11_cifar().final_shape(), FmapShape::new(1, 1, 10));
        let v19 = vgg19_imagenet();
        assert_eq!(v19.layers().len(), 16 + 5 + 3);
        assert_eq!(v19.final_shape().channels, 1000);
        assert_eq!(vgg16_imagenet().layers().len(), 13 + 5 + 3);
        let r = resnet18_cifar();
        assert_eq!(r.final_shape(), FmapShape::new(1, 1, 10));
        assert_eq!(r.output_shape(r.layers().len() - 2), FmapShape::new(1, 1, 512));
    }

    #[test]
    fn random_nets_validate() {
        for seed in 0..50 {
            let n = random_net(seed);
            assert!(!n.layers().is_empty());
        }
    }
}
