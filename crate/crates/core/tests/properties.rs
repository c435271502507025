use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;

use sdkf::block::{
    inner_product_tree, mat_add, matvec_blocked, matvec_transposed, memory_footprint, outer,
    sdkf_step_blocked, BlockedMatrix, BlockedVector, Precision,
};
use sdkf::grid::{
    build_admittance, build_branch_admittance, build_measurement_matrix, build_selector,
    check_observability, dims, dims_from_counts, synthetic_feeder, BusId, FeederSpec,
    FeederTopology, MeasurementMatrix, Phasor,
};
use sdkf::kalman::{
    dkf_update_gain_form, predict, sdkf_update, sdkf_update_ordered, update, FilterState,
    SequentialForm, UpdateVariant,
};
use sdkf::loadflow::{nodal_currents, solve_loadflow, LoadFlowOptions};
use sdkf::noise::{add_polar_noise, polar_to_rect_variance, NoiseSource, StreamDomain};
use sdkf::testbench::{
    generate_stimuli, random_instance, run_golden, Quantiles, Scenario, ScenarioConfig,
};

fn feeder(buses: usize, phases: usize, fanout: usize, b: f64) -> FeederSpec {
    FeederSpec {
        buses,
        phases,
        topology: if fanout == 1 {
            FeederTopology::Chain
        } else {
            FeederTopology::Tree { fanout }
        },
        b,
        ..FeederSpec::default()
    }
}

fn rel_diff(a: &FilterState, b: &FilterState) -> f64 {
    let dx = (&a.x - &b.x).amax() / b.x.amax().max(f64::MIN_POSITIVE);
    let dp = (&a.p - &b.p).amax() / b.p.amax().max(f64::MIN_POSITIVE);
    dx.max(dp)
}

fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut s = NoiseSource::new(seed).stream(StreamDomain::Instance, 0);
    DMatrix::from_fn(rows, cols, |_, _| 2.0 * s.uniform() - 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn admittance_is_symmetric(buses in 2usize..20, three in any::<bool>(), fanout in 1usize..4, b in 0.0f64..1e-4) {
        let net = synthetic_feeder(&feeder(buses, if three { 3 } else { 1 }, fanout, b)).unwrap();
        let y = build_admittance(&net).unwrap().y;
        let asym = (0..y.nrows())
            .flat_map(|i| (0..y.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| (y[(i, j)] - y[(j, i)]).norm())
            .fold(0.0, f64::max);
        prop_assert!(asym <= 1e-12);
    }

    #[test]
    fn branch_admittance_rows_sum_to_zero(buses in 2usize..20, three in any::<bool>(), fanout in 1usize..4) {
        let net = synthetic_feeder(&feeder(buses, if three { 3 } else { 1 }, fanout, 0.0)).unwrap();
        let y = build_branch_admittance(&net).unwrap().y;
        let scale = y.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for row in y.row_iter() {
            let sum: Phasor = row.iter().sum();
            prop_assert!(sum.norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn rank_survives_row_permutation(buses in 2usize..10, pmu_mask in any::<u16>(), seed in any::<u64>()) {
        let net = synthetic_feeder(&feeder(buses, 3, 2, 2e-5)).unwrap();
        let pmus: Vec<BusId> = (1..=buses as BusId).filter(|b| pmu_mask & (1 << (b - 1)) != 0).collect();
        prop_assume!(!pmus.is_empty());
        let y = build_admittance(&net).unwrap();
        let h = build_measurement_matrix(&build_selector(&net, &pmus).unwrap(), &y).unwrap();
        let rows = h.h.nrows();
        let mut order: Vec<usize> = (0..rows).collect();
        let mut s = NoiseSource::new(seed).stream(StreamDomain::Instance, 1);
        for i in (1..rows).rev() {
            let j = (s.uniform() * (i + 1) as f64) as usize;
            order.swap(i, j.min(i));
        }
        let permuted = MeasurementMatrix { h: DMatrix::from_fn(rows, h.h.ncols(), |i, j| h.h[(order[i], j)]) };
        prop_assert_eq!(check_observability(&h).rank, check_observability(&permuted).rank);
    }

    #[test]
    fn loadflow_balances_injections(buses in 2usize..12, fanout in 1usize..4, seed in any::<u64>()) {
        let net = synthetic_feeder(&feeder(buses, 3, fanout, 2e-5)).unwrap();
        let y = build_admittance(&net).unwrap();
        let mut s = NoiseSource::new(seed).stream(StreamDomain::Instance, 2);
        let slack = net.slack_nodes();
        let inj = DVector::from_fn(net.node_count(), |i, _| {
            if slack.contains(&i) { Complex::new(0.0, 0.0) } else { Complex::new(-0.08 * s.uniform(), -0.03 * s.uniform()) }
        });
        let opts = LoadFlowOptions::default();
        let sol = solve_loadflow(&net, &y, &inj, &opts).unwrap();
        let tol = 10.0 * opts.tolerance;
        // the load flow holds the slack voltage, so the Norton term is not part of its balance
        let branch = build_branch_admittance(&net).unwrap();
        let current = nodal_currents(&branch, &sol.v).unwrap();
        for i in (0..net.node_count()).filter(|i| !slack.contains(i)) {
            let i_inj = (inj[i] / sol.v[i]).conj();
            prop_assert!((current[i] - i_inj).norm() <= tol);
            prop_assert!((sol.v[i] * current[i].conj() - inj[i]).norm() <= tol);
        }
    }

    #[test]
    fn lighter_load_raises_every_voltage(buses in 2usize..12, fanout in 1usize..4, scale in 0.1f64..0.9) {
        let net = synthetic_feeder(&feeder(buses, 1, fanout, 0.0)).unwrap();
        let y = build_admittance(&net).unwrap();
        let slack = net.slack_nodes();
        let load = |f: f64| DVector::from_fn(net.node_count(), |i, _| {
            if slack.contains(&i) { Complex::new(0.0, 0.0) } else { Complex::new(-0.05 * f, -0.015 * f) }
        });
        let opts = LoadFlowOptions::default();
        let heavy = solve_loadflow(&net, &y, &load(1.0), &opts).unwrap();
        let light = solve_loadflow(&net, &y, &load(scale), &opts).unwrap();
        for i in 0..net.node_count() {
            prop_assert!(light.v[i].norm() >= heavy.v[i].norm() - 1e-12);
        }
    }

    #[test]
    fn rectangular_variances_rotate(delta in -4.0f64..4.0, sm in 1e-5f64..1e-2, sp in 0.0f64..1e-2, mag in 0.1f64..2.0) {
        let (r0, _) = polar_to_rect_variance(mag, delta, sm, sp);
        let (_, i90) = polar_to_rect_variance(mag, delta + std::f64::consts::FRAC_PI_2, sm, sp);
        prop_assert!((r0 - i90).abs() <= 1e-12 * r0.max(i90) + 1e-30);
        let (r, i) = polar_to_rect_variance(mag, delta, sm, 0.0);
        prop_assert!((r + i - sm * sm).abs() <= 1e-12 * sm * sm);
    }

    #[test]
    fn polar_noise_is_reproducible(seed in any::<u64>(), first in 0u64..1_000_000) {
        let x: Vec<Phasor> = (0..6).map(|i| Complex::from_polar(1.0, -0.7 * i as f64)).collect();
        let a = add_polar_noise(&x, 1e-3, 1.5e-3, &NoiseSource::new(seed), first);
        let b = add_polar_noise(&x, 1e-3, 1.5e-3, &NoiseSource::new(seed), first);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sequential_matches_batch_in_any_order(s in 1usize..16, d in 1usize..24, index in any::<u64>(), rot in 0usize..24) {
        let inst = random_instance(s, d, 7, index).unwrap();
        let (batch, _) = dkf_update_gain_form(&inst.prior, &inst.frame).unwrap();
        for form in [SequentialForm::A, SequentialForm::B] {
            let (seq, _) = sdkf_update(&inst.prior, &inst.frame, form).unwrap();
            prop_assert!(rel_diff(&seq, &batch) <= 1e-8);
            let order: Vec<usize> = (0..d).map(|i| (i + rot) % d).rev().collect();
            let (perm, _) = sdkf_update_ordered(&inst.prior, &inst.frame, form, &order).unwrap();
            prop_assert!(rel_diff(&perm, &batch) <= 1e-8);
        }
    }

    #[test]
    fn updates_never_raise_marginal_variance(s in 1usize..16, d in 1usize..24, index in any::<u64>()) {
        let inst = random_instance(s, d, 8, index).unwrap();
        for variant in UpdateVariant::ALL {
            let post = update(&inst.prior, &inst.frame, variant).unwrap();
            for i in 0..s {
                prop_assert!(post.p[(i, i)] <= inst.prior.p[(i, i)] + 1e-12);
            }
        }
    }

    #[test]
    fn blocked_primitives_match_dense(rows in 1usize..64, cols in 1usize..64, pi in 0usize..4, seed in any::<u64>()) {
        let p = [1, 2, 4, 8][pi];
        let a = uniform_matrix(rows, cols, seed);
        let b = uniform_matrix(rows, cols, seed ^ 1);
        let v = uniform_matrix(cols, 1, seed ^ 2).column(0).into_owned();
        let w = uniform_matrix(rows, 1, seed ^ 3).column(0).into_owned();
        let close = |x: &DMatrix<f64>, y: &DMatrix<f64>| (x - y).amax() <= 1e-12 * y.amax().max(1.0);

        let ab = BlockedMatrix::<f64>::from_f64(&a, p).unwrap();
        let bb = BlockedMatrix::<f64>::from_f64(&b, p).unwrap();
        let vb = BlockedVector::<f64>::from_f64(&v, p).unwrap();
        let wb = BlockedVector::<f64>::from_f64(&w, p).unwrap();

        prop_assert!(close(&mat_add(&ab, &bb).unwrap().to_f64(), &(&a + &b)));
        let mv = matvec_blocked(&ab, &vb).unwrap().to_f64();
        prop_assert!(close(&DMatrix::from_column_slice(rows, 1, mv.as_slice()), &DMatrix::from_column_slice(rows, 1, (&a * &v).as_slice())));
        let mtv = matvec_transposed(&ab, &wb).unwrap().to_f64();
        let dense_t = a.transpose() * &w;
        prop_assert!(close(&DMatrix::from_column_slice(cols, 1, mtv.as_slice()), &DMatrix::from_column_slice(cols, 1, dense_t.as_slice())));
        prop_assert!(close(&outer(&wb, &vb).unwrap().to_f64(), &(&w * v.transpose())));
        let dot = inner_product_tree(v.as_slice(), v.as_slice(), p).unwrap();
        prop_assert!((dot - v.dot(&v)).abs() <= 1e-12 * v.dot(&v).max(1.0));
    }

    #[test]
    fn blocked_binary64_matches_reference_filter(s in 1usize..24, d in 1usize..24, pi in 0usize..4, index in any::<u64>()) {
        let p = [1, 2, 4, 8][pi];
        let inst = random_instance(s, d, 9, index).unwrap();
        let start = inst.posterior_before();
        let blocked = sdkf_step_blocked(&start, &inst.q, &inst.frame, p, Precision::Binary64).unwrap();
        let prior = predict(&start, &inst.q).unwrap();
        let (reference, _) = sdkf_update(&prior, &inst.frame, SequentialForm::A).unwrap();
        prop_assert!(rel_diff(&blocked, &reference) <= 1e-10);
    }

    #[test]
    fn quantiles_ignore_sample_order(samples in prop::collection::vec(-1e3f64..1e3, 1..60), seed in any::<u64>()) {
        let mut shuffled = samples.clone();
        let mut s = NoiseSource::new(seed).stream(StreamDomain::Instance, 3);
        for i in (1..shuffled.len()).rev() {
            let j = ((s.uniform() * (i + 1) as f64) as usize).min(i);
            shuffled.swap(i, j);
        }
        prop_assert_eq!(Quantiles::of(&samples).unwrap(), Quantiles::of(&shuffled).unwrap());
    }
}

#[test]
fn voltage_rows_of_full_placement_are_identity() {
    for phases in [1, 3] {
        let net = synthetic_feeder(&feeder(7, phases, 2, 2e-5)).unwrap();
        let all: Vec<BusId> = net.buses().to_vec();
        let h = build_measurement_matrix(
            &build_selector(&net, &all).unwrap(),
            &build_admittance(&net).unwrap(),
        )
        .unwrap()
        .h;
        let s = h.ncols();
        assert_eq!(h.rows(0, s), DMatrix::<f64>::identity(s, s));
    }
}

#[test]
fn dimension_formulas_hold_exhaustively() {
    for phases in [1, 3] {
        for buses in 1..=64usize {
            let net = synthetic_feeder(&feeder(buses, phases, 1, 2e-5)).unwrap();
            let y = build_admittance(&net).unwrap();
            for m in 0..=buses {
                let pmus: Vec<BusId> = net.buses()[..m].to_vec();
                let (s, d) = dims(&net, &pmus);
                assert_eq!((s, d), dims_from_counts(buses, phases, m));
                if m > 0 {
                    let h = build_measurement_matrix(&build_selector(&net, &pmus).unwrap(), &y)
                        .unwrap();
                    assert_eq!(h.h.shape(), (d, s));
                }
            }
        }
    }
}

#[test]
fn loadflow_is_bit_deterministic() {
    let net = synthetic_feeder(&FeederSpec::default()).unwrap();
    let y = build_admittance(&net).unwrap();
    let slack = net.slack_nodes();
    let inj = DVector::from_fn(net.node_count(), |i, _| {
        if slack.contains(&i) {
            Complex::new(0.0, 0.0)
        } else {
            Complex::new(-0.04, -0.01 * (i % 3) as f64)
        }
    });
    let a = solve_loadflow(&net, &y, &inj, &LoadFlowOptions::default()).unwrap();
    let b = solve_loadflow(&net, &y, &inj, &LoadFlowOptions::default()).unwrap();
    assert_eq!(a.v, b.v);
}

#[test]
fn spd_is_kept_over_long_chains() {
    for variant in UpdateVariant::ALL {
        let inst = random_instance(10, 14, 3, 0).unwrap();
        let mut s = NoiseSource::new(3).stream(StreamDomain::Instance, 4);
        let mut state = update(&inst.prior, &inst.frame, variant).unwrap();
        for _ in 0..1000 {
            let z = DVector::from_fn(14, |_, _| 2.0 * s.uniform() - 1.0);
            let frame =
                sdkf::kalman::MeasurementFrame::new(z, inst.frame.h.clone(), inst.frame.r.clone())
                    .unwrap();
            state = update(&predict(&state, &inst.q).unwrap(), &frame, variant).unwrap();
            assert!(
                nalgebra::SymmetricEigen::new(state.p.clone())
                    .eigenvalues
                    .min()
                    > 0.0
            );
            assert!(state.asymmetry() < 1e-8);
        }
    }
}

#[test]
fn binary32_gap_stays_small_on_random_instances() {
    let mut gaps = Vec::new();
    for index in 0..100u64 {
        let s = 2 + (index as usize * 11) % 47;
        let inst = random_instance(s, s, 10, index).unwrap();
        let start = inst.posterior_before();
        let lo = sdkf_step_blocked(&start, &inst.q, &inst.frame, 4, Precision::Binary32).unwrap();
        let (hi, _) = sdkf_update(
            &predict(&start, &inst.q).unwrap(),
            &inst.frame,
            SequentialForm::A,
        )
        .unwrap();
        gaps.push((&lo.x - &hi.x).amax());
    }
    let q = Quantiles::of(&gaps).unwrap();
    assert!(q.max <= 1e-5, "max gap {}", q.max);
    assert!(q.median <= 1e-6, "median gap {}", q.median);
}

#[test]
fn memory_footprint_follows_its_formula() {
    for p in [1usize, 2, 4, 8] {
        for s in 1..=40usize {
            for d in 1..=40usize {
                let sp = (p * s.div_ceil(p)) as u64;
                let d64 = d as u64;
                let expected = sp + d64 + d64 * sp + d64 + 3 * sp + sp * sp + 2;
                assert_eq!(memory_footprint(s, d, p, None).unwrap().words, expected);
            }
        }
    }
}

#[test]
fn noiseless_static_truth_converges_monotonically() {
    let mut cfg = ScenarioConfig {
        horizon: 60,
        pmu: Some((2..=13).collect()),
        ..ScenarioConfig::default()
    };
    cfg.noise.e_rho = 0.0;
    cfg.noise.e_phi = 0.0;
    cfg.profile.step_std = 0.0;
    let stimuli = generate_stimuli(&Scenario::build(&cfg).unwrap()).unwrap();
    let gm = run_golden(&stimuli).unwrap();
    let errors: Vec<f64> = gm
        .states
        .iter()
        .zip(&stimuli.truth)
        .map(|(x, t)| (x - t).amax())
        .collect();
    for k in 10..errors.len() - 1 {
        assert!(
            errors[k + 1] <= errors[k] * (1.0 + 1e-9) + 1e-13,
            "step {k}: {} -> {}",
            errors[k],
            errors[k + 1]
        );
    }
}
