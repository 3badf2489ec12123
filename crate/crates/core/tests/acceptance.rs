//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::{Duration, Instant};

use daekron::benchmarks::{
    build_fisher, build_scalar_example, random_stokes_system, scalar_reference_state, FisherConfig,
    FISHER_CASE1_INITIAL, SCALAR_ETA,
};
use daekron::energy::{compute_future_energy, compute_past_energy, hjb_residual_ladder};
use daekron::linalg::solve_riccati_future;
use daekron::monolithic::{
    bordered_side, monolithic_future_energy, rank_identities_check, rank_sum_identity, MonolithicOptions,
};
use daekron::reduction::reduce_system;
use daekron::sim::{compare_table, eval_energy, ic_sweep, simulate_closed_loop, Plant, SimOptions};
use daekron::DVector;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

const SCALAR_VALUES_NEG: [f64; 5] = [0.11583, 0.16522, 0.18064, 0.18302, 0.18245];
const SCALAR_VALUES_POS: [f64; 5] = [0.11583, 0.06644, 0.08186, 0.07948, 0.078907];
const SCALAR_INTEGRALS_NEG: [f64; 5] = [0.21655, 0.18451, 0.18274, 0.18254, 0.18259];
const SCALAR_INTEGRALS_POS: [f64; 5] = [0.082241, 0.079882, 0.079323, 0.079302, 0.079304];

fn scalar_values() -> Outcome {
    let plant = Plant::from_dae(&build_scalar_example()).map_err(err)?;
    let energy = plant.future_energy(SCALAR_ETA, 6).map_err(err)?;
    let mut worst: f64 = 0.0;
    for (xi, table) in [(-1.0, SCALAR_VALUES_NEG), (1.0, SCALAR_VALUES_POS)] {
        let x0 = scalar_reference_state(&plant.reduced, xi);
        for (i, expected) in table.iter().enumerate() {
            let d = i + 1;
            let value = eval_energy(&energy.truncated(d + 1).map_err(err)?, &x0).map_err(err)?;
            let e = (value - expected).abs();
            worst = worst.max(e);
            check(e <= 5e-5, format!("x0={xi}, d={d}: value {value:.6} vs {expected}"))?;
        }
    }
    Ok(format!("max abs error {worst:.2e}"))
}

fn scalar_integrals() -> Outcome {
    let plant = Plant::from_dae(&build_scalar_example()).map_err(err)?;
    let opts = SimOptions::default();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (xi, table) in [(-1.0, SCALAR_INTEGRALS_NEG), (1.0, SCALAR_INTEGRALS_POS)] {
        let x0 = scalar_reference_state(&plant.reduced, xi);
        let rows = compare_table(&plant, SCALAR_ETA, &[1, 2, 3, 4, 5], &x0, &opts).map_err(err)?;
        for (row, expected) in rows.iter().zip(table) {
            let rel = (row.integral - expected).abs() / expected;
            worst = worst.max(rel);
            if row.diverged || rel > 1e-3 {
                failures.push(format!("x0={xi}, d={}: {:.6} vs {expected} ({:.2}%)", row.degree, row.integral, rel * 100.0));
            }
        }
    }
    if failures.is_empty() {
        Ok(format!("max rel error {worst:.2e}"))
    } else {
        Err(format!("max rel error {worst:.2e}; {}", failures.join("; ")))
    }
}

fn riccati_anchor() -> Outcome {
    let red = reduce_system(&build_scalar_example()).map_err(err)?;
    let sol = solve_riccati_future(&red.a_d, &red.b_const, &red.c_d, Some(&red.e_d), SCALAR_ETA).map_err(err)?;
    let expected = (-1.0 + 11f64.sqrt()) / 10.0;
    let e = (sol.w[(0, 0)] - expected).abs();
    check(e <= 1e-12, format!("W₂ = {:.16} vs {expected:.16}", sol.w[(0, 0)]))?;
    Ok(format!("|W₂ − (−1+√11)/10| = {e:.1e}"))
}

fn fisher_case1() -> Outcome {
    let plant = Plant::from_dae(&build_fisher(&FisherConfig::case1())).map_err(err)?;
    let x0 = DVector::from_column_slice(&FISHER_CASE1_INITIAL);
    let opts = SimOptions::default().with_horizon(FisherConfig::HORIZON);
    let rows = compare_table(&plant, FisherConfig::case1().eta, &[1, 2, 3], &x0, &opts).map_err(err)?;
    let summary = rows
        .iter()
        .map(|r| {
            if r.diverged {
                format!("d={}: divergence", r.degree)
            } else {
                format!("d={}: {:.3e}/{:.3e} ({:.2}%)", r.degree, r.value, r.integral, r.rel_err_pct)
            }
        })
        .collect::<Vec<_>>()
        .join(", ");
    check(rows[0].diverged, format!("degree 1 did not diverge; {summary}"))?;
    check(!rows[1].diverged && !rows[2].diverged, format!("degree 2 or 3 diverged; {summary}"))?;
    check(rows[2].rel_err_pct < 5.0, format!("degree-3 error too large; {summary}"))?;
    check(rows[1].rel_err_pct > 30.0, format!("degree-2 error too small; {summary}"))?;
    Ok(summary)
}

fn fisher_case2() -> Outcome {
    let cfg = FisherConfig::case2();
    let plant = Plant::from_dae(&build_fisher(&cfg)).map_err(err)?;
    let opts = SimOptions::default().with_horizon(FisherConfig::HORIZON);
    let s = ic_sweep(&plant, cfg.eta, &[1, 2, 3], 1000, 2.0, 2024, &opts).map_err(err)?;
    let summary = s
        .degrees
        .iter()
        .map(|d| format!("d={}: unstable {}/1000, mean {:.2}%", d.degree, d.unstable, d.mean_rel_err_pct))
        .collect::<Vec<_>>()
        .join(", ");
    let m: Vec<f64> = s.degrees.iter().map(|d| d.mean_rel_err_pct).collect();
    check(s.degrees[2].stable >= 998, format!("degree 3 unstable too often; {summary}"))?;
    check(m[0] > m[1] && m[1] > m[2], format!("averages not decreasing; {summary}"))?;
    for (got, reference) in m.iter().zip([43.24, 19.30, 5.60]) {
        check(
            *got >= reference / 2.0 && *got <= reference * 2.0,
            format!("average {got:.2}% not within a factor 2 of {reference}%; {summary}"),
        )?;
    }
    Ok(summary)
}

fn monolithic_equivalence() -> Outcome {
    let mut systems = vec![("scalar".to_string(), build_scalar_example())];
    for i in 0..24u64 {
        let n1 = 3 + (i as usize % 6);
        let n2 = 1 + (i as usize / 6) % 2;
        systems.push((format!("random n₁={n1} n₂={n2} seed={i}"), random_stokes_system(n1, n2, 1 + (i as usize % 2), 1, 100 + i)));
    }
    let eta = 0.5;
    let mut worst: f64 = 0.0;
    for (name, sys) in &systems {
        let eta = if name == "scalar" { SCALAR_ETA } else { eta };
        let (n1, n2, _, _) = sys.dims();
        let mono = monolithic_future_energy(sys, eta, 4, &MonolithicOptions::default()).map_err(|e| format!("{name}: {e}"))?;
        let reduced = compute_future_energy(&reduce_system(sys).map_err(err)?, eta, 4).map_err(err)?;
        for k in 2..=4 {
            let a = mono.energy.coeff(k);
            let b = reduced.coeff(k);
            let rel = (a - b).norm() / b.norm().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            check(rel <= 1e-8, format!("{name}, order {k}: relative difference {rel:.2e}"))?;
        }
        for sol in &mono.solves {
            let k = sol.w_hat.len().ilog(n1) as usize;
            let expected = bordered_side(n1, n2, k);
            check(sol.rank == Some(expected), format!("{name}, order {k}: rank {:?}, expected {expected}", sol.rank))?;
        }
    }
    Ok(format!("{} systems, max rel difference {worst:.2e}", systems.len()))
}

fn lemma_suite() -> Outcome {
    let mut count = 0;
    for n1 in 2..=6 {
        for r2 in 1..n1 {
            for k in 1..=5 {
                let (l, r) = rank_sum_identity(n1, r2, k);
                check(l == r, format!("sum identity n₁={n1} r₂={r2} k={k}: {l} ≠ {r}"))?;
                count += 1;
            }
        }
    }
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n1 in 2..=5 {
        for n2 in 1..=2.min(n1 - 1) {
            for k in 1..=3 {
                let rep = rank_identities_check(n1, n2, k, (n1 * 100 + n2 * 10 + k) as u64).map_err(err)?;
                worst = worst.max(rep.projector_product_error);
                check(rep.holds(), format!("n₁={n1} n₂={n2} k={k}: {rep:?}"))?;
                cases += 1;
            }
        }
    }
    Ok(format!("{count} sum identities, {cases} rank/projector cases, max projector error {worst:.1e}"))
}

fn hjb_order() -> Outcome {
    let eps = [1e-1, 3e-2, 1e-2, 3e-3];
    let cases = [
        ("scalar", build_scalar_example(), SCALAR_ETA),
        ("random 3-state", random_stokes_system(4, 1, 1, 1, 7), 0.5),
    ];
    let mut lines = Vec::new();
    for (name, sys, eta) in cases {
        let red = reduce_system(&sys).map_err(err)?;
        let ode = red.normalized().map_err(err)?;
        for d in 3..=6 {
            let future = compute_future_energy(&red, eta, d).map_err(err)?;
            let rep = hjb_residual_ladder(&future, &ode, &eps, 6, 1).map_err(err)?;
            check(rep.is_bounded(), format!("{name} future d={d}: ratios {:?}", rep.ratios))?;
            let past = compute_past_energy(&red, eta, d).map_err(err)?;
            let rep = hjb_residual_ladder(&past, &ode, &eps, 6, 1).map_err(err)?;
            check(rep.is_bounded(), format!("{name} past d={d}: ratios {:?}", rep.ratios))?;
        }
        lines.push(name);
    }
    Ok(format!("{} at degrees 3–6", lines.join(", ")))
}

fn dae_consistency() -> Outcome {
    let mut worst_c: f64 = 0.0;
    let mut worst_m: f64 = 0.0;
    let mut runs = 0;
    let scalar = Plant::from_dae(&build_scalar_example()).map_err(err)?;
    let fisher = Plant::from_dae(&build_fisher(&FisherConfig::case1())).map_err(err)?;
    let fisher2 = Plant::from_dae(&build_fisher(&FisherConfig::case2())).map_err(err)?;
    let cases = [
        (&scalar, SCALAR_ETA, scalar_reference_state(&scalar.reduced, -1.0), SimOptions::default(), 5),
        (&scalar, SCALAR_ETA, scalar_reference_state(&scalar.reduced, 1.0), SimOptions::default(), 5),
        (
            &fisher,
            FisherConfig::case1().eta,
            DVector::from_column_slice(&FISHER_CASE1_INITIAL),
            SimOptions::default().with_horizon(FisherConfig::HORIZON),
            3,
        ),
        (
            &fisher2,
            FisherConfig::case2().eta,
            DVector::from_fn(15, |i, _| ((i as f64) * 0.7).sin()),
            SimOptions::default().with_horizon(FisherConfig::HORIZON),
            3,
        ),
    ];
    for (plant, eta, x0, opts, dmax) in cases {
        let energy = plant.future_energy(eta, dmax + 1).map_err(err)?;
        for d in 1..=dmax {
            let fb = plant.feedback(&energy, d).map_err(err)?;
            let run = simulate_closed_loop(plant, &fb, &x0, &opts).map_err(err)?;
            if run.diverged() {
                continue;
            }
            runs += 1;
            let c = run.max_constraint_residual.unwrap();
            let m = run.max_momentum_residual.unwrap();
            worst_c = worst_c.max(c);
            worst_m = worst_m.max(m);
            check(c <= 1e-8 && m <= 1e-6, format!("d={d}: constraint {c:.1e}, momentum {m:.1e}"))?;
        }
    }
    Ok(format!("{runs} runs, max constraint {worst_c:.1e}, max momentum {worst_m:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("scalar value column", scalar_values, Duration::from_secs(1)),
        ("scalar integral column", scalar_integrals, Duration::from_secs(10)),
        ("Riccati anchor", riccati_anchor, Duration::MAX),
        ("Fisher case 1", fisher_case1, Duration::from_secs(300)),
        ("Fisher case 2 sweep", fisher_case2, Duration::from_secs(1800)),
        ("monolithic equivalence", monolithic_equivalence, Duration::from_secs(120)),
        ("lemma suite", lemma_suite, Duration::from_secs(60)),
        ("HJB residual order", hjb_order, Duration::MAX),
        ("DAE consistency", dae_consistency, Duration::MAX),
    ];
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > *budget => Err(format!("{msg}; took {:.1}s, budget {}s", elapsed.as_secs_f64(), budget.as_secs())),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS {}: {name} ({msg}; {:.2}s)", i + 1, elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {}: {name} ({msg}; {:.2}s)", i + 1, elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
