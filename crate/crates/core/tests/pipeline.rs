use daekron::benchmarks::{build_scalar_example, random_stokes_system, scalar_reference_state};
use daekron::energy::{compute_energy, EnergyKind};
use daekron::io::{EnergyDocument, SystemDocument};
use daekron::monolithic::{monolithic_future_energy, MonolithicOptions};
use daekron::reduction::reduce_system;
use daekron::sim::{simulate_closed_loop, Plant, SimOptions};

#[test]
fn json_round_trip_preserves_energies() {
    let sys = random_stokes_system(5, 2, 1, 1, 11);
    let doc = SystemDocument::from_system(&sys, "random", Some(0.5));
    let text = serde_json::to_string(&doc).unwrap();
    let back: SystemDocument = serde_json::from_str(&text).unwrap();
    let sys2 = back.to_system().unwrap();

    let w1 = compute_energy(&reduce_system(&sys).unwrap(), EnergyKind::Future, 0.5, 4).unwrap();
    let w2 = compute_energy(&reduce_system(&sys2).unwrap(), EnergyKind::Future, 0.5, 4).unwrap();
    for k in 2..=4 {
        // the loader re-symmetrizes N, which may move the last bit
        let diff = (w1.coeff(k) - w2.coeff(k)).norm();
        assert!(diff <= 1e-12 * w1.coeff(k).norm(), "order {k}: {diff:e}");
    }

    let edoc = EnergyDocument::from_energy(&w1);
    let w3 = serde_json::from_str::<EnergyDocument>(&serde_json::to_string(&edoc).unwrap())
        .unwrap()
        .to_energy()
        .unwrap();
    assert_eq!(w3.coeff(4), w1.coeff(4));
}

#[test]
fn projected_and_monolithic_agree() {
    let sys = random_stokes_system(6, 2, 2, 1, 3);
    let red = reduce_system(&sys).unwrap();
    let w = compute_energy(&red, EnergyKind::Future, 0.5, 4).unwrap();
    let m = monolithic_future_energy(&sys, 0.5, 4, &MonolithicOptions::default()).unwrap().energy;
    for k in 2..=4 {
        let diff = (w.coeff(k) - m.coeff(k)).norm();
        assert!(diff <= 1e-8 * w.coeff(k).norm().max(1.0), "order {k}: {diff:e}");
    }
}

#[test]
fn scalar_closed_loop_stays_on_constraint() {
    let sys = build_scalar_example();
    let plant = Plant::from_dae(&sys).unwrap();
    let w = plant.future_energy(10.0, 4).unwrap();
    let x0 = scalar_reference_state(&plant.reduced, 1.0);
    for degree in 1..=3 {
        let fb = plant.feedback(&w, degree).unwrap();
        let run = simulate_closed_loop(&plant, &fb, &x0, &SimOptions::default()).unwrap();
        assert!(!run.diverged(), "degree {degree}");
        assert!(run.final_state().norm() < 1e-6);
        assert!(run.max_constraint_residual.unwrap() < 1e-10);
        assert!(run.cost.windows(2).all(|c| c[1] >= c[0]));
    }
}
