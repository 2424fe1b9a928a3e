//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::time::Instant;

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weylrg::cli::{run, Cli, Command};
use weylrg::grassmann::{bbf_evaluate, gram_hadamard_audit, random_instance, truncated_expectation_oracle, SignCalibration};
use weylrg::lattice_model::{build_params, weyl_points, HoppingParams, Offset};
use weylrg::multiscale::{
    crossover_scale, decay_audit, relativistic_split_r2, single_scale_propagator_r2, Couplings, CutoffSpec, Regime,
    ZoomGrid,
};
use weylrg::propagator::{
    inverse_propagator, regularized_propagator_table, schwinger_limits, schwinger_time_domain, Displacement, GridSpec,
    Momentum4, SumMethod,
};
use weylrg::rg_flow::{run_flow, solve_nu, FlowSettings, InteractionSpec};
use weylrg::spinor::Spinor2x2;
use weylrg::trees::{
    enumerate_assignments, enumerate_trees, scale_sum_audit, scaling_dimension, tree_bound, with_endpoint_kinds,
    EndpointSet, PowerCounting,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn params(r: f64, u: f64) -> HoppingParams {
    build_params(1.0, 0.5, 2.0, Offset::R(r), u).unwrap()
}

fn propagator_oracle() -> Outcome {
    let start = Instant::now();
    let p = params(0.5, 0.0);
    let grid = GridSpec::new(4, 8.0, 12).unwrap();
    // (-β, β] on a β/8 lattice plus off-lattice times
    let mut times: Vec<f64> = (-7..=8).map(|j| j as f64).collect();
    times.extend([-6.3, -0.37, 0.37, 2.9, 7.71]);
    let (mut worst, mut worst_at, mut worst_off_grid) = (0.0f64, 0.0, 0.0f64);
    for &x0 in &times {
        let table = regularized_propagator_table(x0, &grid, &p, SumMethod::Direct).unwrap();
        for (idx, sum) in table.iter().enumerate().skip(1) {
            let xbar = [(idx / 16) as i64, ((idx / 4) % 4) as i64, (idx % 4) as i64];
            let closed = schwinger_time_domain(Displacement::new(x0, xbar), &grid, &p).unwrap();
            let gap = (*sum - closed).max_abs();
            if gap > worst {
                worst = gap;
                worst_at = x0;
            }
            if x0 % 8.0 != 0.0 {
                worst_off_grid = worst_off_grid.max(gap);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst <= 1e-5 && secs < 30.0,
        detail: format!(
            "max_abs={worst:.3e} (at x0={worst_at}) tol=1e-5; x0 outside βℤ: {worst_off_grid:.3e}; runtime {secs:.1}s < 30s"
        ),
    }
}

fn equal_time_jump() -> Outcome {
    let p = params(0.5, 0.0);
    let grid = GridSpec::new(4, 8.0, 12).unwrap();
    let (plus, minus) = schwinger_limits([0, 0, 0], &grid, &p).unwrap();
    let err = (plus - minus - Spinor2x2::identity()).max_abs();
    Outcome { pass: err <= 1e-5, detail: format!("|S(0+)-S(0-)-I|={err:.3e} tol=1e-5") }
}

/// Richardson-extrapolated central difference of a Pauli coefficient of `A`.
fn slope(p: &HoppingParams, base: [f64; 3], dir: [f64; 3], component: usize) -> f64 {
    let coef = |s: f64| {
        let k = [base[0] + s * dir[0], base[1] + s * dir[1], base[2] + s * dir[2]];
        inverse_propagator(Momentum4::new(0.0, k[0], k[1], k[2]), p).pauli_coefficients()[component].re
    };
    let d = |h: f64| (coef(h) - coef(-h)) / (2.0 * h);
    let h = 1e-3;
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn weyl_linearization() -> Outcome {
    let p = params(0.5, 0.0);
    let w = weyl_points(&p).unwrap();
    let v30 = p.t_perp * w.p_f.sin();
    let mut worst = 0.0f64;
    for omega in [1.0, -1.0] {
        let base = [0.0, 0.0, omega * w.p_f];
        // k+ = (k1 + k2)/2 moves along (1, 1, 0); k- along (1, -1, 0)
        let v_plus = slope(&p, base, [1.0, 1.0, 0.0], 1).abs();
        let v_minus = slope(&p, base, [1.0, -1.0, 0.0], 2).abs();
        let v3 = slope(&p, base, [0.0, 0.0, 1.0], 3).abs();
        for (got, want) in [(v_plus, p.t), (v_minus, p.t), (v3, v30)] {
            worst = worst.max(((got - want) / want).abs());
        }
    }
    let close = (w.v0 - p.t).abs() < 1e-15 && ((w.v30 - v30) / v30).abs() < 1e-15;
    Outcome { pass: worst <= 1e-6 && close, detail: format!("max relative error {worst:.3e} tol=1e-6 at ±p_F") }
}

fn decay_audits() -> Outcome {
    let zoom = ZoomGrid::default();
    let p1 = params(1e-6, 0.0);
    let c1 = CutoffSpec::for_params(&p1);
    let h1 = crossover_scale(&p1, &c1);
    let r1 = decay_audit(&[-2, -4, -6, -8, -10, -12], h1, &Couplings::lattice_initial(&p1), &p1, &c1, &zoom).unwrap();
    let p2 = params(0.5, 0.0);
    let c2 = CutoffSpec::for_params(&p2);
    let h2 = crossover_scale(&p2, &c2);
    let rel = Couplings::relativistic_initial(&p2);
    let hs2 = [-1, -2, -3, -4, -5];
    let r2 = decay_audit(&hs2, h2, &rel, &p2, &c2, &zoom).unwrap();
    let ratios: Vec<f64> = hs2
        .iter()
        .map(|&h| {
            let (_, rem) = relativistic_split_r2(h, h2, 1, &rel, &p2, &c2, &zoom).unwrap();
            let full = single_scale_propagator_r2(h, h2, 1, &rel, &p2, &c2, &zoom).unwrap();
            rem.sup_norm() / full.sup_norm()
        })
        .collect();
    let shrink: Vec<f64> = ratios.windows(2).map(|w| w[0] / w[1]).collect();
    let ok1 = (r1.sup_exponent - 2.5).abs() <= 0.3 && (r1.width_exponents[2] + 0.5).abs() <= 0.1;
    let ok2 = (r2.sup_exponent - 3.0).abs() <= 0.3;
    let ok3 = shrink.iter().all(|s| (s - 2.0).abs() <= 0.6);
    Outcome {
        pass: ok1 && ok2 && ok3,
        detail: format!(
            "regime1 (h*={h1}) sup {:.4} x3-width {:.4}; regime2 sup {:.4}; remainder shrink per scale {:?}",
            r1.sup_exponent,
            r1.width_exponents[2],
            r2.sup_exponent,
            shrink.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>()
        ),
    }
}

fn power_counting() -> Outcome {
    let mut exact = true;
    for l in (2..=12).step_by(2) {
        let l = l as i64;
        exact &= scaling_dimension(Regime::Lattice, l).unwrap() == Rational64::new(14 - 5 * l, 4);
        exact &= scaling_dimension(Regime::Relativistic, l).unwrap() == Rational64::from_integer(4 - 3 * l / 2);
    }
    let pc = PowerCounting::relativistic(2);
    let (mut checked, mut velocity_ok) = (0usize, true);
    for n in 1..=4 {
        for tree in enumerate_trees(n, -3).unwrap() {
            for labeled in with_endpoint_kinds(&tree, EndpointSet::WithCounterterms) {
                for l in [2i64, 4, 6] {
                    for a in enumerate_assignments(&labeled, l).unwrap() {
                        checked += 1;
                        velocity_ok &= tree_bound(&labeled, &a, &pc).unwrap().velocity == Rational64::new(l - 2, 2);
                    }
                }
            }
        }
    }
    Outcome {
        pass: exact && velocity_ok && checked > 0,
        detail: format!("dimensions exact: {exact}; velocity exponent l/2-1 on {checked} tree/assignment pairs: {velocity_ok}"),
    }
}

fn scale_sums() -> Outcome {
    let rep = scale_sum_audit(4, 4, &PowerCounting::lattice(), EndpointSet::InteractionOnly, (-6, -8), 1.0).unwrap();
    let pass = rep.c_spread < 2.0 && rep.max_floor_change < 0.01;
    let cs: Vec<String> = rep.rows.iter().map(|r| format!("{:.3}", r.fitted_c)).collect();
    let changes: Vec<String> = rep.rows.iter().map(|r| format!("{:.2}%", 100.0 * r.floor_change)).collect();
    Outcome {
        pass,
        detail: format!(
            "fitted C {cs:?} spread {:.3} (< 2); floor -6 vs -8 change {changes:?} (< 1%)",
            rep.c_spread
        ),
    }
}

fn bbf() -> Outcome {
    let start = Instant::now();
    let cal = SignCalibration::calibrate().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20_261_019);
    let mut worst = 0.0f64;
    let mut count = 0;
    for (s, n) in [(2, 100), (3, 20)] {
        for _ in 0..n {
            let (clusters, cov) = random_instance(&mut rng, s, 6, 10).unwrap();
            let a = bbf_evaluate(&clusters, &cov, &cal).unwrap();
            let b = truncated_expectation_oracle(&clusters, &cov).unwrap();
            worst = worst.max((a - b).abs());
            count += 1;
        }
    }
    let mut holds = 0;
    for _ in 0..200 {
        let mut draw = || (0..4).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect::<Vec<Vec<f64>>>();
        let (f, g) = (draw(), draw());
        holds += gram_hadamard_audit(&f, &g).unwrap().holds as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst <= 1e-10 && holds == 200 && secs < 60.0,
        detail: format!("{count} instances max |bbf-oracle|={worst:.3e} tol=1e-10; Gram {holds}/200; runtime {secs:.1}s < 60s"),
    }
}

fn counterterm() -> Outcome {
    let settings = FlowSettings::with_l(16);
    let cell = 2.0 * PI / 16.0;
    let mut pass = true;
    let mut parts = Vec::new();
    for u in [0.05, -0.05] {
        let p = params(0.5, u);
        let inter = InteractionSpec::from_params(&p).unwrap();
        let (nu, solved) = solve_nu(&p, &inter, -8, &settings).unwrap();
        let pf = solved.p_f.unwrap();
        let [m_plus, m_minus] = solved.dressed_minimizers();
        let drift = (m_plus - pf).abs().max((m_minus + pf).abs());
        let bare = solved.with_nu(0.0);
        let separation = bare.final_couplings().nu.abs() / solved.final_couplings().nu.abs();
        pass &= drift <= cell && separation >= 10.0;
        parts.push(format!("U={u:+}: nu={nu:.4e} minimizer offset {drift:.3} (cell {cell:.3}) nu_h separation {separation:.2e}"));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn r_uniformity() -> Outcome {
    let settings = FlowSettings::with_l(16);
    let mut betas = Vec::new();
    for r in [0.5, 0.05, 0.005] {
        let p = params(r, 0.05);
        let inter = InteractionSpec::from_params(&p).unwrap();
        betas.push(run_flow(&p, &inter, 0.0, -8, &settings).unwrap().max_beta_magnitude());
    }
    let max = betas.iter().cloned().fold(f64::MIN, f64::max);
    let min = betas.iter().cloned().fold(f64::MAX, f64::min);
    let ratio = max / min;
    Outcome {
        pass: ratio < 4.0 && min > 0.0,
        detail: format!("max beta over r=0.5,0.05,0.005: {:?}; ratio {ratio:.3} (< 4)", betas.iter().map(|b| format!("{b:.3e}")).collect::<Vec<_>>()),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        r#"{"model": {"t": 1.0, "t_perp": 0.5, "t_prime": 2.0, "r": 0.5},
            "flow": {"U": 0.05, "h_min": -3, "L": 8},
            "bbf": {"instances_s2": 10, "instances_s3": 3, "gram_audits": 10},
            "trees": {"n_max": 3}}"#,
    )
    .unwrap();
    let mut identical = true;
    let mut files = 0;
    for command in [Command::Flow, Command::SolveNu, Command::BbfVerify, Command::Trees, Command::Weyl] {
        let outs: Vec<_> = [1, 3]
            .iter()
            .enumerate()
            .map(|(i, &threads)| {
                let out = dir.path().join(format!("{}-{i}", command.name()));
                let cli = Cli { command, config: Some(config.clone()), out: Some(out.clone()), threads, seed: Some(7) };
                run(&cli).unwrap();
                out
            })
            .collect();
        for entry in fs::read_dir(&outs[0]).unwrap() {
            let name = entry.unwrap().file_name();
            if name == "timings.json" {
                continue;
            }
            files += 1;
            identical &= fs::read(outs[0].join(&name)).unwrap() == fs::read(outs[1].join(&name)).unwrap();
        }
    }
    Outcome { pass: identical && files > 0, detail: format!("{files} output files byte-identical across repeated runs: {identical}") }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("propagator oracle equivalence", propagator_oracle),
        ("equal-time jump", equal_time_jump),
        ("Weyl linearization", weyl_linearization),
        ("decay-bound audits", decay_audits),
        ("power counting", power_counting),
        ("scale-sum convergence", scale_sums),
        ("BBF correctness", bbf),
        ("counterterm fixed point", counterterm),
        ("r-uniformity", r_uniformity),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {:>2}. {name}: {} ({:.1}s)", i + 1, o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: {} of 10 criteria fail: {failed:?}", failed.len());
        std::process::exit(1);
    }
}
