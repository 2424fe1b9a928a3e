use std::f64::consts::PI;

use num_rational::Rational64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use weylrg::cli::RunConfig;
use weylrg::cutoff::smooth_cutoff;
use weylrg::grassmann::{
    bbf_evaluate, enumerate_anchored_trees, gram_hadamard_audit, random_instance, truncated_expectation_oracle,
    wick_expectation, wick_expectation_algebra, Cluster, CovarianceMatrix, Field, Sign, SignCalibration,
};
use weylrg::lattice_model::{build_params, classify_phase, dispersion, weyl_points, HoppingParams, Offset, PhaseLabel};
use weylrg::multiscale::{crossover_scale, scale_support, CutoffSpec};
use weylrg::propagator::{free_propagator, inverse_propagator, schwinger_time_domain, Displacement, GridSpec, Momentum4};
use weylrg::rg_flow::{run_flow, FlowSettings, InteractionSpec};
use weylrg::spinor::Spinor2x2;
use weylrg::trees::{
    count_labeled_trees, enumerate_assignments, enumerate_trees, structural_identities_check, tree_bound,
    with_endpoint_kinds, EndpointSet, PowerCounting,
};

fn params() -> impl Strategy<Value = HoppingParams> {
    (0.5f64..2.0, 0.2f64..1.0, 1.0f64..3.0, -0.45f64..0.45, -0.1f64..0.1)
        .prop_filter_map("outside the model window", |(t, tp, tq, r, u)| build_params(t, tp, tq, Offset::R(r), u).ok())
}

fn momentum() -> impl Strategy<Value = Momentum4> {
    (-20.0f64..20.0, -PI..PI, -PI..PI, -PI..PI).prop_map(|(a, b, c, d)| Momentum4::new(a, b, c, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inverse_times_propagator_is_identity(p in params(), kk in momentum()) {
        prop_assume!(kk.k0.abs() > 1e-3);
        let a = inverse_propagator(kk, &p);
        let g = free_propagator(kk, &p).unwrap();
        prop_assert!((a * g - Spinor2x2::identity()).max_abs() < 1e-12);
        let lam = dispersion(kk.k, &p);
        let det = a.det();
        prop_assert!((det.re + kk.k0 * kk.k0 + lam * lam).abs() < 1e-12 * (1.0 + kk.k0 * kk.k0));
        prop_assert!(det.im.abs() < 1e-12 * (1.0 + kk.k0 * kk.k0));
    }

    #[test]
    fn phase_matches_weyl_points(p in params()) {
        let phase = classify_phase(&p);
        let w = weyl_points(&p);
        prop_assert_eq!(phase == PhaseLabel::Insulator, w.is_none());
        if let Some(w) = w.filter(|w| !w.degenerate) {
            prop_assert!(dispersion([0.0, 0.0, w.p_f], &p) < 1e-12);
            prop_assert!(dispersion([0.0, 0.0, -w.p_f], &p) < 1e-12);
            prop_assert!((w.p_f.cos() - (1.0 - p.r())).abs() < 1e-12);
        }
        // the gap in the insulating phase is t_perp |r|, reached at k = 0
        if phase == PhaseLabel::Insulator {
            prop_assert!((dispersion([0.0; 3], &p) - p.t_perp * p.r().abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn cutoff_bounded_and_monotone(a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (x, y) = (smooth_cutoff(lo), smooth_cutoff(hi));
        prop_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
        prop_assert!(x >= y);
    }

    #[test]
    fn bands_are_nonnegative_and_local(p in params(), e in 1e-9f64..4.0) {
        let c = CutoffSpec::for_params(&p);
        let hs = crossover_scale(&p, &c);
        prop_assume!(hs > i32::MIN);
        let mut nonzero = 0;
        let mut total = scale_support(e, hs - 30, hs, &c).chi;
        for h in (hs - 29)..=1 {
            let s = scale_support(e, h, hs, &c);
            prop_assert!(s.band >= -1e-15, "negative band at h = {}", h);
            if s.band > 0.0 {
                nonzero += 1;
            }
            total += s.band;
        }
        prop_assert!(nonzero <= 2);
        prop_assert!((total - scale_support(e, 1, hs, &c).chi).abs() < 1e-12);
    }

    #[test]
    fn crossover_scale_monotone_in_r(r1 in 1e-6f64..0.45, r2 in 1e-6f64..0.45) {
        let p1 = build_params(1.0, 0.5, 2.0, Offset::R(r1.min(r2)), 0.0).unwrap();
        let p2 = build_params(1.0, 0.5, 2.0, Offset::R(r1.max(r2)), 0.0).unwrap();
        let c = CutoffSpec::for_params(&p1);
        let (h1, h2) = (crossover_scale(&p1, &c), crossover_scale(&p2, &c));
        prop_assert!(h1 <= h2 && h2 <= 0);
    }

    #[test]
    fn schwinger_function_is_antiperiodic(x0 in 0.05f64..3.9, x in 0i64..4, y in 0i64..4, z in 0i64..4) {
        let p = build_params(1.0, 0.5, 2.0, Offset::R(0.5), 0.0).unwrap();
        let grid = GridSpec::new(4, 4.0, 8).unwrap();
        let a = schwinger_time_domain(Displacement::new(x0, [x, y, z]), &grid, &p).unwrap();
        let b = schwinger_time_domain(Displacement::new(x0 - 4.0, [x, y, z]), &grid, &p).unwrap();
        prop_assert!((a + b).max_abs() < 1e-12);
    }

    #[test]
    fn interaction_is_even_positive_and_peaked(q in prop::array::uniform3(-PI..PI), kappa in 0.3f64..3.0) {
        let v = InteractionSpec::new(kappa).unwrap();
        let x = v.v_hat(q);
        prop_assert!(x > 0.0);
        prop_assert!((x - v.v_hat([-q[0], -q[1], -q[2]])).abs() < 1e-12 * x);
        prop_assert!(x <= v.v_hat_0() * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wick_paths_agree_exactly(
        picks in prop::collection::vec((0usize..4, any::<bool>()), 0..8),
        seed in 0i64..1000,
    ) {
        let entries = (0..16).map(|i| Rational64::new((i * 7 + seed) % 13 - 6, 1 + (i + seed) % 4)).collect();
        let cov = CovarianceMatrix::new(4, entries).unwrap();
        let c = Cluster::new(picks.into_iter().map(|(s, m)| if m { Field::minus(s) } else { Field::plus(s) }).collect());
        prop_assert_eq!(wick_expectation(&c, &cov), wick_expectation_algebra(&c, &cov).unwrap());
    }

    #[test]
    fn interpolation_matches_cumulant(seed in any::<u64>(), s in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (clusters, cov) = random_instance(&mut rng, s, 6, 10).unwrap();
        let cal = SignCalibration::calibrate().unwrap();
        let a = bbf_evaluate(&clusters, &cov, &cal).unwrap();
        let b = truncated_expectation_oracle(&clusters, &cov).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
    }

    #[test]
    fn anchored_trees_span(seed in any::<u64>(), s in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (clusters, _) = random_instance(&mut rng, s, 6, 10).unwrap();
        let trees = enumerate_anchored_trees(&clusters).unwrap();
        for t in &trees {
            prop_assert!(t.is_spanning_tree(s));
        }
        if s == 2 {
            let n = |i: usize, e: Sign| clusters[i].count(e);
            let want = n(0, Sign::Minus) * n(1, Sign::Plus) + n(1, Sign::Minus) * n(0, Sign::Plus);
            prop_assert_eq!(trees.len(), want);
        }
    }

    #[test]
    fn gram_hadamard_holds(
        f in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 5), 1..5),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<Vec<f64>> = f.iter().map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        prop_assert!(gram_hadamard_audit(&f, &g).unwrap().holds);
    }
}

#[test]
fn cumulant_vanishes_for_disconnected_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for _ in 0..200 {
        let (clusters, cov) = random_instance(&mut rng, 2, 6, 8).unwrap();
        let sites_of = |c: &Cluster| c.fields.iter().map(|f| f.site).collect::<Vec<_>>();
        let (a, b) = (sites_of(&clusters[0]), sites_of(&clusters[1]));
        if a.iter().any(|s| b.contains(s)) {
            continue;
        }
        // cut every covariance entry between the two clusters' sites
        let mut e = cov.entries.clone();
        for &x in &a {
            for &y in &b {
                e[x * cov.n + y] = 0.0;
                e[y * cov.n + x] = 0.0;
            }
        }
        let cut = CovarianceMatrix::new(cov.n, e).unwrap();
        assert!(truncated_expectation_oracle(&clusters, &cut).unwrap().abs() < 1e-14);
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} disjoint instances drawn");
}

#[test]
fn tree_counts_and_identities() {
    for n in 1..=3 {
        for h in [-1, -3] {
            let trees = enumerate_trees(n, h).unwrap();
            assert_eq!(trees.len() as u128, count_labeled_trees(n, h).unwrap());
            for tree in &trees {
                for labeled in with_endpoint_kinds(tree, EndpointSet::WithCounterterms) {
                    for l in [2, 4] {
                        for a in enumerate_assignments(&labeled, l).unwrap() {
                            assert!(structural_identities_check(&labeled, &a).unwrap().all_hold());
                            let b = tree_bound(&labeled, &a, &PowerCounting::lattice()).unwrap();
                            assert_eq!(b.velocity, Rational64::from_integer(0));
                            assert_eq!(b.total, b.dimensional + b.vertices + b.endpoints);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn free_flow_keeps_couplings_per_regime() {
    let p = build_params(1.0, 0.5, 2.0, Offset::R(0.5), 0.0).unwrap();
    let inter = InteractionSpec::from_params(&p).unwrap();
    let t = run_flow(&p, &inter, 0.0, -4, &FlowSettings::with_l(8)).unwrap();
    let v30 = weyl_points(&p).unwrap().v30;
    for s in &t.steps {
        let c = s.couplings;
        assert_eq!((c.z, c.v, c.nu), (1.0, 1.0, 0.0));
        let v3 = if c.h >= 0 { p.t_perp } else { v30 };
        assert!((c.v3 - v3).abs() < 1e-12, "h = {}: {}", c.h, c.v3);
        assert_eq!(s.beta.magnitude, 0.0);
    }
}

#[test]
fn config_round_trips() {
    let cfg = RunConfig::from_json(r#"{"model": {"t": 1.0, "t_perp": 0.5, "t_prime": 2.0, "r": 0.5}, "flow": {"U": 0.05}}"#)
        .unwrap();
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
}
