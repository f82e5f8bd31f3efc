use proptest::prelude::*;

use super::*;
use crate::device::{Device, DeviceConfig};

fn profile() -> CostProfile {
    CostProfile {
        n: 1e6,
        fanout: 101.0,
        utilization: 1.0,
        leaf_segments: 1.0,
        pr: 100.0,
        pw: 200.0,
        pr_leaf: 100.0,
        pr_batch: 6.25,
        pw_batch: 12.5,
        rs: 0.5,
        ri: 0.5,
        m: 1000.0,
        o: 16.0,
        bcnt: 5000.0,
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn height_examples() {
    assert!(close(tree_height(1e6, 100.0).unwrap(), 3.0, 1e-12));
    assert_eq!(tree_height(1.0, 100.0).unwrap(), 0.0);
    let h = tree_height(5e5, 100.0).unwrap();
    assert!(close(h, 5e5f64.log10() / 2.0, 1e-12));
    assert!((h - 2.849).abs() < 1e-3);
    assert!(tree_height(0.5, 100.0).is_err());
    assert!(tree_height(10.0, 1.5).is_err());
}

#[test]
fn utility_prefers_larger_node_at_equal_latency() {
    let one = utility_cost(255.0, 100.0);
    let two = utility_cost(511.0, 100.0);
    assert!(two > one);
    assert!(close(one, 255f64.log2() / 100.0, 1e-12));
}

#[test]
fn bplus_examples() {
    let p = profile();
    assert!(close(cost_bplus(&p).unwrap(), 400.0, 1e-12));
    let search_only = CostProfile { rs: 1.0, ri: 0.0, ..p };
    assert!(close(cost_bplus(&search_only).unwrap(), 300.0, 1e-12));
    let insert_only = CostProfile {
        rs: 0.0,
        ri: 1.0,
        n: 5e5,
        ..p
    };
    assert!((cost_bplus(&insert_only).unwrap() - 484.9).abs() < 0.1);
}

#[test]
fn geometry_examples() {
    let g = buffer_geometry(1e8, 100.0, 1e4).unwrap();
    assert!(close(g.eta, 1.0, 1e-12));
    assert_eq!(g.h_nb, 1.0);
    assert!(close(g.cvrg, 1.0, 1e-12));
    assert!(!g.fully_buffered);

    let g = buffer_geometry(1e6, 100.0, 1e4).unwrap();
    assert!(g.eta.abs() < 1e-12);
    assert!(g.fully_buffered);
    assert_eq!(read_term(g.eta, 100.0, ReadTerm::Floor), 0.0);

    let g = buffer_geometry(1e7, 100.0, 1.0).unwrap();
    assert_eq!(g.h_b, 1.0);
    assert_eq!(g.h_nb, (3.5f64 - 1.0).floor());
    assert!(buffer_geometry(1e7, 100.0, 0.5).is_err());
}

#[test]
fn read_term_forms() {
    assert!(close(read_term(1.0, 100.0, ReadTerm::Floor), 1.0, 1e-12));
    assert!(close(read_term(1.0, 100.0, ReadTerm::PrintedCeil), 1.0, 1e-12));
    assert!(close(read_term(1.5, 100.0, ReadTerm::PrintedCeil), 2.9, 1e-12));
    assert!(close(read_term(1.5, 100.0, ReadTerm::Floor), 1.9, 1e-12));
    assert_eq!(read_term(-0.3, 100.0, ReadTerm::Floor), 0.0);
}

#[test]
fn buffered_bplus_exact_eta() {
    let p = CostProfile {
        n: 1e8,
        m: 1e4,
        ..profile()
    };
    assert!(close(cost_bplus_buffered(&p).unwrap(), 100.0 + 0.5 * 200.0, 1e-9));
}

#[test]
fn g_clamps() {
    let p = profile();
    // Root level: O (F-1) = 1600 entries share one node.
    assert!(close(g_of_level(0.0, &p).unwrap(), 1600.0, 1e-9));
    // Deep level: 1600 entries over 10^4 nodes is 0.16, clamped to 1.
    assert_eq!(g_of_level(2.0, &p).unwrap(), 1.0);
    let big = CostProfile { o: 1e6, ..p };
    assert_eq!(g_of_level(0.0, &big).unwrap(), 5000.0);
}

/// Unbuffered search and insert costs written out level by level for integer heights.
fn pio_oracle(p: &CostProfile) -> (f64, f64) {
    let f = (p.fanout - 1.0) * p.utilization;
    let leaves = p.n / (f * p.leaf_segments);
    let h = ((p.n / p.leaf_segments).log10() / f.log10()).round() as i32;
    let entries = p.o * (p.fanout - 1.0);
    let g = |nodes: f64| (entries / nodes).max(1.0).min(p.bcnt);
    let mut insert = 0.0;
    for level in 0..h - 1 {
        insert += p.pr_batch / g(f.powi(level));
    }
    insert += (p.pr_batch + p.pw_batch) / g(leaves);
    (f64::from(h - 1) * p.pr + p.pr_leaf, insert)
}

#[test]
fn pio_matches_oracle() {
    for (n, l, o) in [(1e6, 1.0, 16.0), (1e8, 1.0, 64.0), (4e6, 4.0, 300.0), (1e7, 10.0, 2.0)] {
        let p = CostProfile {
            n,
            leaf_segments: l,
            o,
            pr_leaf: 160.0,
            ..profile()
        };
        let (s, i) = pio_oracle(&p);
        assert!(close(pio_search(&p).unwrap(), s, 1e-9), "search n={n}");
        assert!(close(pio_insert(&p).unwrap(), i, 1e-9), "insert n={n}");
        assert!(close(cost_pio(&p).unwrap(), 0.5 * s + 0.5 * i, 1e-9));
    }
}

#[test]
fn pio_examples() {
    let p = CostProfile {
        rs: 1.0,
        ri: 0.0,
        pr_leaf: 160.0,
        ..profile()
    };
    assert!(close(cost_pio(&p).unwrap(), 360.0, 1e-12));
    // A tiny queue leaves every G at 1.
    let p = CostProfile { o: 1e-6, ..profile() };
    let h = pio_height(&p).unwrap();
    assert!(close(
        pio_insert(&p).unwrap(),
        (h - 1.0) * p.pr_batch + p.pr_batch + p.pw_batch,
        1e-9
    ));
}

#[test]
fn pio_buffered_limits() {
    // All internal levels fit in M - O.
    let p = CostProfile { m: 1e5, ..profile() };
    assert!(pio_eta(&p).unwrap() <= 0.0);
    assert!(close(
        pio_search_buffered(&p, ReadTerm::Floor).unwrap(),
        p.pr_leaf,
        1e-12
    ));
    // Internal nodes fit but the leaves do not: only the leaf is read.
    let p = CostProfile { m: 2e3, ..profile() };
    let eta = pio_eta(&p).unwrap();
    assert!(eta > 0.0 && eta < 1.0);
    assert!(close(
        pio_search_buffered(&p, ReadTerm::Floor).unwrap(),
        p.pr_leaf,
        1e-12
    ));
    // O = 0, L = 1: the B+-tree read term with its leaf read swapped for Pr(L).
    let p = CostProfile {
        o: 0.0,
        n: 3e8,
        m: 2e3,
        pr_leaf: 130.0,
        ..profile()
    };
    let b = CostProfile { rs: 1.0, ri: 0.0, ..p };
    let expect = cost_bplus_buffered(&b).unwrap() - p.pr + p.pr_leaf;
    let eta = pio_eta(&p).unwrap();
    assert!(close(eta, (3e8f64 / 2e3).log10() / 2.0 - 1.0, 1e-12));
    assert!(close(pio_search_buffered(&p, ReadTerm::Floor).unwrap(), expect, 1e-9));
    assert!(pio_eta(&CostProfile { o: 1000.0, ..profile() }).is_err());
}

#[test]
fn calibration_on_emulator() {
    let mut dev = Device::emulated(DeviceConfig::default()).unwrap();
    let lat = calibrate(&mut dev, 64).unwrap();
    assert_eq!(lat.pr, 100.0);
    assert_eq!(lat.pw, 200.0);
    let batch = dev.batch_cost(64, crate::device::IoKind::Read, 1, false) / 64.0;
    assert_eq!(lat.pr_batch, batch);
    assert_eq!(lat.pr_batch, 6.25);
    assert_eq!(lat.pw_batch, 12.5);
    assert_eq!(lat.pr_of(2), 100.0);
    assert_eq!(lat.pr_of(4), 160.0);
    assert_eq!(lat.pr_of(16), 500.0);
    assert_eq!(dev.allocated_pages(), 0);

    let mut dev = Device::emulated(DeviceConfig::default().with_channels(1)).unwrap();
    let lat = calibrate(&mut dev, 64).unwrap();
    assert_eq!(lat.pr_batch, lat.pr);
    assert!(lat.to_string().contains("pr_us = 100.000"));
}

fn tune_input(rs: f64, m: f64, n: f64) -> TuneInput {
    let mut dev = Device::emulated(DeviceConfig::default()).unwrap();
    TuneInput {
        latencies: calibrate(&mut dev, 64).unwrap(),
        page_size: 4096,
        utilization: 0.7,
        n,
        m,
        rs,
        ri: 1.0 - rs,
        bcnt: 5000.0,
    }
}

/// Brute force over the same grids, keeping the first minimum.
fn grid_oracle(input: &TuneInput) -> (u32, u32, u32) {
    let mut all = Vec::new();
    for l in LEAF_GRID {
        let mut o = 1u32;
        while f64::from(o) <= input.m / 2.0 {
            all.push((l, o, cost_pio_buffered(&input.pio_profile(l, o)).unwrap()));
            o *= 2;
        }
    }
    let min = all.iter().map(|t| t.2).fold(f64::INFINITY, f64::min);
    let (l, o, _) = *all.iter().find(|t| t.2 == min).unwrap();
    let sizes: Vec<f64> = NODE_SIZE_GRID
        .iter()
        .map(|&s| cost_bplus_buffered(&input.bplus_profile(s)).unwrap())
        .collect();
    let smin = sizes.iter().cloned().fold(f64::INFINITY, f64::min);
    let s = NODE_SIZE_GRID[sizes.iter().position(|&c| c == smin).unwrap()];
    (l, o, s)
}

#[test]
fn tune_search_only_picks_cheapest_search() {
    let input = tune_input(1.0, 4096.0, 1e7);
    let r = tune(&input).unwrap();
    assert_eq!(r.o_opt, 1);
    let best = LEAF_GRID
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let ca = pio_search_buffered(&input.pio_profile(a, 1), ReadTerm::Floor).unwrap();
            let cb = pio_search_buffered(&input.pio_profile(b, 1), ReadTerm::Floor).unwrap();
            ca.partial_cmp(&cb).unwrap()
        })
        .unwrap();
    assert_eq!(r.l_opt, best);
    assert_eq!((r.l_opt, r.o_opt, r.s_opt), grid_oracle(&input));
}

#[test]
fn tune_insert_only_prefers_large_queue() {
    let r = tune(&tune_input(0.0, 4096.0, 1e8)).unwrap();
    assert!(r.o_opt >= 256, "o_opt = {}", r.o_opt);
    let small = r.grid.iter().find(|t| t.0 == r.l_opt && t.1 == 1).unwrap().2;
    assert!(r.pio_cost < small);
}

#[test]
fn tune_degenerate_and_infeasible() {
    let r = tune(&tune_input(0.5, 64.0, 10.0)).unwrap();
    assert_eq!((r.l_opt, r.o_opt), (1, 1));
    assert!(tune(&tune_input(0.5, 1.0, 1e6)).is_err());
    let text = r.to_string();
    assert!(text.starts_with("l_opt = 1\no_opt = 1\n"));
}

fn arb_profile() -> impl Strategy<Value = CostProfile> {
    (
        (1e3f64..1e9, 10.0f64..600.0, 0.5f64..1.0, 1u32..17),
        (1.0f64..1e5, 0.0f64..1.0, 50.0f64..500.0, 1.0f64..20_000.0),
    )
        .prop_map(|((n, fanout, u, l), (m, rs, pr, bcnt))| CostProfile {
            n,
            fanout: fanout.floor(),
            utilization: u,
            leaf_segments: f64::from(l),
            pr,
            pw: 2.0 * pr,
            pr_leaf: pr * (1.0 + f64::from(l) / 4.0),
            pr_batch: pr / 16.0,
            pw_batch: pr / 8.0,
            rs,
            ri: 1.0 - rs,
            m: m + 2.0,
            o: ((m + 2.0) / 3.0).floor().max(1.0),
            bcnt,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn dual_formula_agreement(p in arb_profile()) {
        let a = cost_bplus_buffered(&p).unwrap();
        let b = cost_bplus_buffered_geometry(&p).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12), "{a} vs {b}");
    }

    #[test]
    fn g_within_bounds(p in arb_profile(), level in 0.0f64..8.0) {
        let g = g_of_level(level, &p).unwrap();
        prop_assert!((1.0..=p.bcnt.max(1.0)).contains(&g));
    }

    #[test]
    fn buffering_never_costs_more(p in arb_profile()) {
        prop_assert!(pio_insert_buffered(&p).unwrap() <= pio_insert(&p).unwrap() + 1e-9);
        prop_assert!(cost_bplus_buffered(&p).unwrap() <= cost_bplus(&p).unwrap() + 1e-9);
    }

    #[test]
    fn bplus_buffered_non_increasing_in_m(p in arb_profile(), k in 1.0f64..100.0) {
        let more = CostProfile { m: p.m * k, ..p };
        prop_assert!(cost_bplus_buffered(&more).unwrap() <= cost_bplus_buffered(&p).unwrap() + 1e-9);
    }

    #[test]
    fn pio_insert_non_increasing_in_o(p in arb_profile(), k in 1.0f64..100.0) {
        let more = CostProfile { o: p.o * k, ..p };
        prop_assert!(pio_insert(&more).unwrap() <= pio_insert(&p).unwrap() + 1e-9);
    }

    #[test]
    fn tune_matches_grid_oracle(rs in 0.0f64..1.0, m in 2.0f64..20_000.0, n in 10.0f64..1e9, u in 0.5f64..1.0) {
        let input = TuneInput { utilization: u, ..tune_input(rs, m, n) };
        let r = tune(&input).unwrap();
        prop_assume!(n >= input.pio_profile(1, 1).f_eff());
        prop_assert_eq!((r.l_opt, r.o_opt, r.s_opt), grid_oracle(&input));
    }
}

#[test]
fn latency_report_round_trip() {
    let mut dev = Device::emulated(DeviceConfig::default()).unwrap();
    let lat = calibrate(&mut dev, 64).unwrap();
    let text = format!("# device\n{lat}");
    let back: Latencies = text.parse().unwrap();
    assert_eq!(back, lat);
    assert!("pr_us = 1\n".parse::<Latencies>().is_err());
}
