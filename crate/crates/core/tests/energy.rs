use domino::energy::{
    account, account_trace, precision_scale, report, Bucket, DesignSummary, EnergyConfig, EnergyLedger, LedgerFile, OpClass, Report,
};
use domino::fabric::{write_trace, EventCategory, EventCounts, FabricEvent};
use domino::mapper::TileCoord;
use domino::EnergyError;
use proptest::prelude::*;

fn counts(chips: usize, cycles: u64, entries: &[(usize, EventCategory, u64)]) -> EventCounts {
    let mut c = EventCounts::new(chips);
    c.cycles = cycles;
    for &(chip, cat, n) in entries {
        c.add(chip, cat, n);
    }
    c
}

const PJ: u128 = 1_000_000;

#[test]
fn defaults_are_the_component_table() {
    let c = EnergyConfig::default();
    assert_eq!(c.rifm_buffer_access, 281.3);
    assert_eq!(c.rifm_control, 10.4);
    assert_eq!(c.adder, 0.02);
    assert_eq!(c.pooling_cmp, 0.0077);
    assert_eq!(c.activation, 0.0009);
    assert_eq!(c.rofm_data_buffer_access, 281.3);
    assert_eq!(c.schedule_fetch, 2.2);
    assert_eq!(c.reg_io, 42.1);
    assert_eq!(c.rofm_control, 28.5);
    assert_eq!(c.inter_chip, 0.55);
    assert_eq!(c.rifm_area_um2, 2227.1);
    assert_eq!(c.rofm_area_um2, 57972.7);
    assert_eq!(c.step_hz, 10e6);
    c.validate().unwrap();
}

#[test]
fn empty_events_price_to_zero() {
    let l = account(&EventCounts::new(3), &EnergyConfig::default()).unwrap();
    assert_eq!(l.total_aj(), 0);
    assert!(l.aj.iter().flatten().all(|&v| v == 0));
}

#[test]
fn one_tile_hop_costs_two_register_transfers() {
    let c = counts(1, 1, &[(0, EventCategory::HopTx, 1), (0, EventCategory::HopRx, 1)]);
    let l = account(&c, &EnergyConfig::default()).unwrap();
    assert_eq!(l.bucket_aj(Bucket::OnChipData), 842 * PJ / 10);
    assert_eq!(l.total_aj(), 842 * PJ / 10);
}

#[test]
fn one_flit_across_chips_costs_per_bit() {
    let c = counts(2, 1, &[(0, EventCategory::InterChipBit, 64)]);
    let l = account(&c, &EnergyConfig::default()).unwrap();
    assert_eq!(l.bucket_aj(Bucket::OffChipData), 352 * PJ / 10);
    assert_eq!(l.bucket_aj(Bucket::OnChipData), 0);
}

#[test]
fn precision_factors() {
    assert_eq!(precision_scale(4, 4, 8, 8, OpClass::Mac), 4.0);
    assert_eq!(precision_scale(16, 16, 8, 8, OpClass::Mac), 0.25);
    assert_eq!(precision_scale(4, 4, 8, 8, OpClass::Other), 2.0);
}

fn design(macs: u64) -> DesignSummary {
    DesignSummary {
        network: "synthetic".into(),
        macs,
        tiles: 10,
        chips: 1,
    }
}

#[test]
fn definitional_report() {
    // 1 TOP of ops and 0.1 J over one second.
    let cfg = EnergyConfig::default();
    let mut l = EnergyLedger::zero(1, cfg.step_hz);
    l.aj[0][EventCategory::PeMac.index()] = 100_000_000_000_000_000;
    l.cycles = 10_000_000;
    let r = report(&l, &design(500_000_000_000), &cfg).unwrap();
    assert!((r.ce_tops_per_w - 10.0).abs() < 1e-9);
    assert!((r.power_w - 0.1).abs() < 1e-12);
    assert_eq!(r.cim_pct, 100.0);
    assert_eq!(r.images_per_s, 1.0);
    assert_eq!(r.images_per_s_per_tile, 0.1);
    let area = 10.0 * (2227.1 + 57972.7) / 1e6;
    assert!((r.area_mm2 - area).abs() < 1e-12);
    assert!((r.tops_per_mm2 - 1.0 / area).abs() < 1e-9);
}

#[test]
fn zero_ledger_reports_zeros() {
    let cfg = EnergyConfig::default();
    let r = report(&EnergyLedger::zero(1, cfg.step_hz), &design(0), &cfg).unwrap();
    assert_eq!((r.energy_j, r.power_w, r.ce_tops_per_w, r.tops_per_mm2), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn degenerate_reports_are_rejected() {
    let cfg = EnergyConfig::default();
    let mut l = EnergyLedger::zero(1, cfg.step_hz);
    l.aj[0][0] = 5;
    assert!(matches!(report(&l, &design(1), &cfg), Err(EnergyError::Degenerate(_))));
    l.cycles = 3;
    let no_area = EnergyConfig {
        rifm_area_um2: 0.0,
        rofm_area_um2: 0.0,
        ..cfg.clone()
    };
    assert!(matches!(report(&l, &design(1), &no_area), Err(EnergyError::Degenerate(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = EnergyConfig {
        adder: -1.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    assert!(account(&EventCounts::new(1), &bad).is_err());
    assert!(EnergyConfig::from_toml("reg_io = \"x\"").is_err());
    assert!(EnergyConfig::from_toml("no_such_field = 1.0").is_err());
    let partial = EnergyConfig::from_toml("pe_mac = 100.0").unwrap();
    assert_eq!(partial.pe_mac, 100.0);
    assert_eq!(partial.reg_io, 42.1);
    let c = EnergyConfig::default();
    assert_eq!(EnergyConfig::from_toml(&c.to_toml()).unwrap(), c);
}

#[test]
fn unknown_trace_category_is_an_error() {
    let ev = vec![FabricEvent {
        cycle: 0,
        tile: TileCoord { x: 0, y: 0, chip: 0 },
        category: EventCategory::Add,
        count: 4,
    }];
    let text = write_trace(&ev);
    let l = account_trace(&text, 1, &EnergyConfig::default()).unwrap();
    assert_eq!(l.total_aj(), 4 * 20_000);
    let bad = text.replace("Add", "Teleport");
    assert!(matches!(account_trace(&bad, 1, &EnergyConfig::default()), Err(EnergyError::UnknownCategory(c)) if c == "Teleport"));
}

#[test]
fn ledger_and_report_files_roundtrip() {
    let cfg = EnergyConfig::default();
    let c = counts(2, 1234, &[(0, EventCategory::PeMac, 1 << 40), (1, EventCategory::HopTx, 77)]);
    let l = account(&c, &cfg).unwrap();
    let f = LedgerFile::new(design(99), cfg.clone(), c.clone(), l);
    assert_eq!(LedgerFile::from_json(&f.to_json()).unwrap(), f);
    let r = report(&f.ledger, &f.design, &cfg).unwrap();
    assert_eq!(Report::from_toml(&r.to_toml()).unwrap(), r);
    assert!(r.to_csv().starts_with("# domino-report v1\nmetric,value\n"));
}

/// Hand-written price table, independent of the pricing code.
fn oracle_pj(cat: EventCategory) -> f64 {
    use EventCategory::*;
    match cat {
        BufRead | BufWrite => 281.3,
        SchedFetch => 2.2,
        RegIo | HopTx | HopRx => 42.1,
        Add => 0.02,
        Cmp | Mul => 0.0077,
        Act => 0.0009,
        PeMac => 655.36,
        InterChipBit => 0.55,
        RifmCtrl => 10.4,
        RofmCtrl => 28.5,
    }
}

fn arb_counts() -> impl Strategy<Value = EventCounts> {
    (1usize..4, 0u64..1000, proptest::collection::vec((0usize..4, 0usize..14, 0u64..1_000_000), 0..40)).prop_map(
        |(chips, cycles, v)| {
            let e: Vec<_> = v.into_iter().map(|(c, k, n)| (c % chips, EventCategory::ALL[k], n)).collect();
            counts(chips, cycles, &e)
        },
    )
}

proptest! {
    #[test]
    fn ledger_conserves_energy(c in arb_counts()) {
        let l = account(&c, &EnergyConfig::default()).unwrap();
        let by_cat: u128 = EventCategory::ALL.iter().map(|k| l.category_aj(*k)).sum();
        let by_bucket: u128 = Bucket::ALL.iter().map(|b| l.bucket_aj(*b)).sum();
        let by_chip: u128 = (0..l.aj.len()).map(|i| l.chip_aj(i)).sum();
        prop_assert_eq!(by_cat, l.total_aj());
        prop_assert_eq!(by_bucket, l.total_aj());
        prop_assert_eq!(by_chip, l.total_aj());
        let want: f64 = EventCategory::ALL.iter().map(|k| c.total(*k) as f64 * oracle_pj(*k)).sum();
        let got = l.total_aj() as f64 / 1e6;
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0));
    }

    #[test]
    fn more_events_never_cost_less(c in arb_counts(), chip in 0usize..4, k in 0usize..14, n in 0u64..1000) {
        let cfg = EnergyConfig::default();
        let a = account(&c, &cfg).unwrap();
        let mut more = c.clone();
        more.add(chip % c.counts.len(), EventCategory::ALL[k], n);
        let b = account(&more, &cfg).unwrap();
        for bucket in Bucket::ALL {
            prop_assert!(b.bucket_aj(bucket) >= a.bucket_aj(bucket));
        }
    }

    #[test]
    fn doubling_events_doubles_energy(c in arb_counts()) {
        let cfg = EnergyConfig::default();
        let a = account(&c, &cfg).unwrap();
        let mut d = c.clone();
        for row in &mut d.counts {
            for v in row.iter_mut() {
                *v *= 2;
            }
        }
        d.cycles *= 2;
        let b = account(&d, &cfg).unwrap();
        prop_assert_eq!(b.total_aj(), 2 * a.total_aj());
        if let (Some(pa), Some(pb)) = (a.power_w(), b.power_w()) {
            prop_assert!((pa - pb).abs() <= 1e-12 * pa.max(1e-30));
        }
    }

    #[test]
    fn merging_partial_ledgers_is_order_free(a in arb_counts(), b in arb_counts(), c in arb_counts()) {
        let cfg = EnergyConfig::default();
        let [la, lb, lc] = [&a, &b, &c].map(|x| account(x, &cfg).unwrap());
        let mut left = la.clone();
        left.merge(&lb);
        left.merge(&lc);
        let mut right = lc.clone();
        let mut ab = lb.clone();
        ab.merge(&la);
        right.merge(&ab);
        prop_assert_eq!(&left.aj, &right.aj);
        prop_assert_eq!(left.cycles, right.cycles);
        let mut all = a.clone();
        all.merge(&b);
        all.merge(&c);
        prop_assert_eq!(account(&all, &cfg).unwrap().aj, left.aj);
    }

    #[test]
    fn same_precision_scales_by_one(a in 1u32..64, b in 1u32..64) {
        prop_assert_eq!(precision_scale(a, b, a, b, OpClass::Mac), 1.0);
        prop_assert_eq!(precision_scale(a, b, a, b, OpClass::Other), 1.0);
    }
}
