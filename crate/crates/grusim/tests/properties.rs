//! Property tests over the crate's stated invariants.

#![allow(clippy::needless_range_loop)]

use grusim::arch::ArchConfig;
use grusim::gru::{
    generate_params, gru_step, gru_step_detailed, ActivationMode, GruDims, GruParams, GruState, Matrix,
};
use grusim::lut::{build_lut, ActivationLut, LutKind};
use grusim::plan::{plan_column_wise, plan_row_wise, MappingPlan, MatrixTag, Span, Strategy as PlanStrategy};
use proptest::prelude::*;

fn small_state(hidden: usize) -> impl Strategy<Value = GruState> {
    prop::collection::vec(-1.0f64..1.0, hidden).prop_map(|h| GruState { h })
}

fn small_params(dims: GruDims) -> impl Strategy<Value = GruParams> {
    let w = dims.hidden * dims.input;
    let u = dims.hidden * dims.hidden;
    (
        prop::collection::vec(-0.5f64..0.5, w),
        prop::collection::vec(-0.5f64..0.5, w),
        prop::collection::vec(-0.5f64..0.5, w),
        prop::collection::vec(-0.5f64..0.5, u),
        prop::collection::vec(-0.5f64..0.5, u),
        prop::collection::vec(-0.5f64..0.5, u),
        prop::collection::vec(-0.5f64..0.5, dims.hidden),
        prop::collection::vec(-0.5f64..0.5, dims.hidden),
        prop::collection::vec(-0.5f64..0.5, dims.hidden),
    )
        .prop_map(move |(wz, wr, wh, uz, ur, uh, bz, br, bh)| GruParams {
            wz: Matrix::from_vec(dims.hidden, dims.input, wz).unwrap(),
            wr: Matrix::from_vec(dims.hidden, dims.input, wr).unwrap(),
            wh: Matrix::from_vec(dims.hidden, dims.input, wh).unwrap(),
            uz: Matrix::from_vec(dims.hidden, dims.hidden, uz).unwrap(),
            ur: Matrix::from_vec(dims.hidden, dims.hidden, ur).unwrap(),
            uh: Matrix::from_vec(dims.hidden, dims.hidden, uh).unwrap(),
            bz,
            br,
            bh,
        })
}

proptest! {
    /// Zero weights halve the state elementwise, whatever the state is.
    #[test]
    fn zero_params_halve_any_state(h in small_state(5), x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let p = GruParams::zeros(GruDims { input: 3, hidden: 5 });
        let next = gru_step(&p, &h, &x, ActivationMode::Exact).unwrap();
        for (a, b) in next.h.iter().zip(h.h.iter()) {
            prop_assert_eq!(*a, 0.5 * *b);
        }
    }

    /// Update/reset gates stay in (0,1), the candidate in (-1,1), and the
    /// output is a per-element convex combination of h_prev and candidate.
    #[test]
    fn gate_ranges_and_convexity(
        p in small_params(GruDims { input: 4, hidden: 3 }),
        h in small_state(3),
        x in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let d = gru_step_detailed(&p, &h, &x, ActivationMode::Exact).unwrap();
        for v in d.update.iter().chain(d.reset.iter()) {
            prop_assert!(*v > 0.0 && *v < 1.0);
        }
        for v in &d.candidate {
            prop_assert!(*v > -1.0 && *v < 1.0);
        }
        for i in 0..3 {
            let lo = h.h[i].min(d.candidate[i]);
            let hi = h.h[i].max(d.candidate[i]);
            prop_assert!(d.next.h[i] >= lo - 1e-12 && d.next.h[i] <= hi + 1e-12);
        }
    }

    /// Lookup tables of monotone functions evaluate monotonically and clamp
    /// outside the domain.
    #[test]
    fn lut_monotone_and_total(
        kind in prop::sample::select(vec![LutKind::Sigmoid, LutKind::Tanh]),
        n in 2usize..200,
        lo in -10.0f64..-0.5,
        hi in 0.5f64..10.0,
        xs in prop::collection::vec(-20.0f64..20.0, 2..20),
    ) {
        let lut = build_lut(kind, (lo, hi), n).unwrap();
        let mut pairs: Vec<(f64, f64)> = xs.iter().map(|&x| (x, lut.eval(x))).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            prop_assert!(w[1].1 >= w[0].1, "non-monotone at {} -> {}", w[0].0, w[1].0);
        }
        prop_assert_eq!(lut.eval(-1e6), lut.entries[0]);
        prop_assert_eq!(lut.eval(1e6), *lut.entries.last().unwrap());
    }

    /// One LUT-mode step deviates from the exact step by at most
    /// n_gates * Lip * B per element, with B the scanned table error bound
    /// and Lip the instance factor 1 + max_row_abs_sum(Uh) / 3 (reset-gate
    /// error propagated through the candidate).
    #[test]
    fn lut_step_deviation_bound(
        p in small_params(GruDims { input: 3, hidden: 4 }),
        h in small_state(4),
        x in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let sig = ActivationLut::default_for(LutKind::Sigmoid);
        let tanh = ActivationLut::default_for(LutKind::Tanh);
        let scan = |lut: &ActivationLut| -> f64 {
            (0..20_000)
                .map(|i| {
                    let v = -8.0 + 16.0 * (i as f64 / 19_999.0);
                    (lut.eval(v) - lut.kind.exact(v)).abs()
                })
                .fold(0.0, f64::max)
        };
        let b = scan(&sig).max(scan(&tanh));
        let lip = 1.0
            + (0..4)
                .map(|r| p.uh.row(r).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max)
                / 3.0;
        let exact = gru_step(&p, &h, &x, ActivationMode::Exact).unwrap();
        let lut = gru_step(
            &p,
            &h,
            &x,
            ActivationMode::Lut { sigmoid: &sig, tanh: &tanh },
        )
        .unwrap();
        for (a, b_val) in exact.h.iter().zip(lut.h.iter()) {
            prop_assert!((a - b_val).abs() <= 3.0 * lip * b, "deviation {} > bound {}", (a - b_val).abs(), 3.0 * lip * b);
        }
    }

    /// Row-wise plans partition every matrix's rows exactly once and never
    /// use more tiles when row reuse grows.
    #[test]
    fn row_plan_partition_and_monotonicity(
        input in 1usize..32,
        hidden in 1usize..33,
        hybrid in any::<bool>(),
    ) {
        let cfg = ArchConfig::default();
        let mut prev_tiles = usize::MAX;
        for reuse in 1..=4usize {
            let plan = plan_row_wise(input, hidden, reuse, hybrid, &cfg).unwrap();
            for tag in MatrixTag::ALL {
                let mut covered = vec![false; hidden];
                for a in plan.assignments_for(tag) {
                    if let Span::Rows { start, end } = a.span {
                        for r in start..end {
                            prop_assert!(!covered[r]);
                            covered[r] = true;
                        }
                    }
                }
                prop_assert!(covered.iter().all(|&c| c));
            }
            let tiles = plan.assignments.len() + plan.overhead_tiles.len();
            prop_assert_eq!(
                tiles,
                6 * hidden.div_ceil(reuse) + if hybrid { 0 } else { 2 }
            );
            prop_assert!(tiles <= prev_tiles);
            prev_tiles = tiles;
            for tile in plan.assignments.iter().filter(|a| a.matrix.is_recurrent()).map(|a| a.tile) {
                let n = plan.merge_wiring.iter().filter(|g| g.sources.contains(&tile)).count();
                prop_assert_eq!(n, 1);
            }
        }
    }

    /// Plan serialization round-trips losslessly for all strategies.
    #[test]
    fn plan_serialization_round_trip(
        input in 1usize..48,
        hidden in 1usize..33,
        which in 0usize..3,
    ) {
        let cfg = ArchConfig::default();
        let plan = match which {
            0 => plan_row_wise(input, hidden, 1 + input % 3, false, &cfg).unwrap(),
            1 => plan_row_wise(input, hidden, 1 + input % 3, true, &cfg).unwrap(),
            _ => plan_column_wise(input, hidden, &cfg).unwrap(),
        };
        let back = MappingPlan::from_json(&plan.to_json()).unwrap();
        prop_assert_eq!(plan, back);
    }
}

// Simulation properties are expensive per case; cap the case count.
proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    /// For feasible dimensions up to 64 x 32, every strategy's simulated
    /// trajectory tracks the double-precision reference within 1e-4
    /// relative (1e-6 absolute floor) per element for T <= 10 steps.
    #[test]
    fn simulated_trajectories_track_reference(
        seed in 0u64..10_000,
        input in 1usize..65,
        hidden in 1usize..33,
        which in 0usize..3,
        steps in 1u64..11,
    ) {
        let cfg = ArchConfig::default();
        let cost = grusim::arch::CostModel::default();
        let dims = GruDims { input, hidden };
        let params = generate_params(seed, dims);
        let h0 = grusim::gru::generate_state(seed ^ 1, hidden);
        let inputs = grusim::gru::generate_inputs(seed ^ 2, input, steps as usize);
        let plan = match which {
            0 => plan_row_wise(input, hidden, 1, false, &cfg).unwrap(),
            1 => plan_row_wise(input, hidden, 1, true, &cfg).unwrap(),
            _ => plan_column_wise(input, hidden, &cfg).unwrap(),
        };
        let graph = grusim::graph::build_graph(&plan, &params, &h0, &cfg, &cost, grusim::graph::SimActivation::Exact).unwrap();
        let result = grusim::sim::simulate(&graph, &inputs, steps, seed).unwrap();
        prop_assert_eq!(result.strategy, match which {
            0 => PlanStrategy::RowWiseAie,
            1 => PlanStrategy::RowWiseHybrid,
            _ => PlanStrategy::ColumnWiseCascade,
        });

        let mut h = h0.clone();
        for (t, x) in inputs.iter().enumerate() {
            h = gru_step(&params, &h, x, ActivationMode::Exact).unwrap();
            for (i, (s, r)) in result.h_out[t].iter().zip(h.h.iter()).enumerate() {
                let err = (*s as f64 - r).abs();
                prop_assert!(
                    err <= 1e-6 + 1e-4 * r.abs(),
                    "step {} element {}: sim {} ref {} err {:.3e}", t, i, s, r, err
                );
            }
        }
    }
}
