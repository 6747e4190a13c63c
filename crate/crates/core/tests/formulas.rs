use std::collections::HashSet;

use domino::mapper::schedule::gen_pool_schedule;
use domino::mapper::{map_network, tiles_for_conv, tiles_for_fc, ArchConfig, MapOptions, PoolMode, RegionKind};
use domino::netspec::{LayerKind, LayerSpec, NetworkSpec, PrecisionSpec};
use domino::FmapShape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arch(n_c: usize, n_m: usize) -> ArchConfig {
    ArchConfig {
        cim_rows: n_c,
        cim_cols: n_m,
        tiles_per_chip: 16384,
        mesh_cols: 128,
        mesh_rows: 128,
        ..Default::default()
    }
}

/// Tiles needed so every weight lands in exactly one `n_c x n_m` block
/// of a kernel pixel.
fn brute_conv_tiles(k: usize, c: usize, m: usize, n_c: usize, n_m: usize) -> usize {
    let mut blocks = HashSet::new();
    for kr in 0..k {
        for kc in 0..k {
            for ci in 0..c {
                for mi in 0..m {
                    blocks.insert((kr, kc, ci / n_c, mi / n_m));
                }
            }
        }
    }
    blocks.len()
}

fn brute_fc_grid(c: usize, m: usize, n_c: usize, n_m: usize) -> (usize, usize) {
    let rows: HashSet<usize> = (0..c).map(|i| i / n_c).collect();
    let cols: HashSet<usize> = (0..m).map(|i| i / n_m).collect();
    (rows.len(), cols.len())
}

#[test]
fn tile_formulas_match_region_construction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let n_c = [4, 8, 16, 32][rng.gen_range(0..4)];
        let n_m = [4, 8, 16, 32][rng.gen_range(0..4)];
        let a = arch(n_c, n_m);
        let (c, m) = (rng.gen_range(1..=48), rng.gen_range(1..=48));
        if rng.gen_bool(0.7) {
            let k = [1, 3, 5, 7][rng.gen_range(0..4)];
            let size = k + rng.gen_range(0..4);
            let want = brute_conv_tiles(k, c, m, n_c, n_m);
            assert_eq!(tiles_for_conv(k, c, m, n_c, n_m), want, "case {case}");
            let l = LayerSpec::conv(k, c, m, 1, 0, Vec::new()).seeded(case, 7);
            let net = NetworkSpec::new(FmapShape::new(size, size, c), PrecisionSpec::default(), vec![l]).unwrap();
            let d = map_network(&net, &a, &MapOptions::default()).unwrap();
            assert_eq!(d.regions[0].tiles.len(), want, "case {case}");
            let cells: usize = d.tiles.iter().map(|t| t.weights.rows * t.weights.cols).sum();
            assert_eq!(cells, k * k * c * m);
            assert!(d.tiles.iter().all(|t| t.weights.rows <= n_c && t.weights.cols <= n_m));
        } else {
            let want = brute_fc_grid(c, m, n_c, n_m);
            assert_eq!(tiles_for_fc(c, m, n_c, n_m), want, "case {case}");
            let l = LayerSpec::fc(c, m, Vec::new()).seeded(case, 7);
            let net = NetworkSpec::new(FmapShape::new(1, 1, c), PrecisionSpec::default(), vec![l]).unwrap();
            let d = map_network(&net, &a, &MapOptions::default()).unwrap();
            let RegionKind::Fc { rows, cols } = d.regions[0].kind else {
                panic!("FC region")
            };
            assert_eq!((rows, cols), want, "case {case}");
            assert_eq!(d.regions[0].tiles.len(), want.0 * want.1);
        }
    }
}

/// Stride-1 conv schedules repeat every two padded rows, `2(P + W)`, when
/// the padding is narrower than the kernel and a row leaves room for the
/// channel-group carry.
#[test]
fn conv_schedule_period_is_two_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..200 {
        let k = [2, 3, 5][rng.gen_range(0..3)];
        let p = rng.gen_range(0..k.min(3));
        let c: usize = rng.gen_range(1..=12);
        let w = rng.gen_range(k.max(c.div_ceil(4) * k)..=20);
        let l = LayerSpec::conv(k, c, rng.gen_range(1..=8), 1, p, Vec::new()).seeded(case, 7);
        let net = NetworkSpec::new(FmapShape::new(w, w, c), PrecisionSpec::default(), vec![l]).unwrap();
        let d = map_network(&net, &arch(4, 4), &MapOptions::default()).unwrap();
        for t in &d.tiles {
            assert_eq!(t.schedule.period() as usize, 2 * (p + w), "case {case}: K={k} P={p} W={w} C={c}");
        }
    }
}

#[test]
fn pooling_schedule_period_is_twice_the_stride() {
    for s_p in 1..=8 {
        for kind in [LayerKind::MaxPool, LayerKind::AvgPool] {
            assert_eq!(gen_pool_schedule(kind, s_p).unwrap().period() as usize, 2 * s_p);
        }
    }
    // And on the tile that runs a pool behind a conv.
    let layers = vec![LayerSpec::conv(3, 2, 2, 1, 1, Vec::new()).seeded(1, 7), LayerSpec::max_pool(2, 2)];
    let net = NetworkSpec::new(FmapShape::new(8, 8, 2), PrecisionSpec::default(), layers).unwrap();
    let d = map_network(
        &net,
        &arch(4, 4),
        &MapOptions {
            pool_mode: PoolMode::BlockReuse,
        },
    )
    .unwrap();
    let posts: Vec<_> = d.tiles.iter().flat_map(|t| &t.post).filter(|p| p.layer == 1).collect();
    assert_eq!(posts.len(), 1);
    assert_eq!(posts[0].schedule.period(), 4);
}
