//! Polynomial feedback laws from future energies and closed-loop simulation.
//!
//! The closed loop is integrated in the reduced coordinates `x_d` with an
//! embedded Dormand–Prince 5(4) pair; the running cost
//! `½(‖C_d x_d‖² + ‖u‖²/η)` is carried as an extra state so that it is
//! integrated to the same accuracy as the trajectory.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::energy::{compute_future_energy, EnergyKind, EnergyPolynomial, QuadraticOde};
use crate::reduction::{recover_algebraic, reduce_system, ReducedOdeSystem, StokesDaeSystem};
use crate::series::{costate_series, feedback_series, PolySeries};
use crate::{Error, Result};

/// `½ Σₖ wₖᵀ x^{⊗k}`.
pub fn eval_energy(poly: &EnergyPolynomial, x: &DVector<f64>) -> Result<f64> {
    if x.len() != poly.n {
        return Err(Error::Dimension(format!("state has length {}, energy expects {}", x.len(), poly.n)));
    }
    Ok(poly.eval(x))
}

/// Polynomial state feedback `u(x) = Σⱼ Kⱼ x^{⊗j}`, `1 ≤ j ≤ d`.
///
/// A feedback of degree `d` is the truncated minimizer of the Hamiltonian
/// built from the value polynomial of degree `d + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialFeedback {
    pub eta: f64,
    series: PolySeries,
}

impl PolynomialFeedback {
    pub fn from_energy(poly: &EnergyPolynomial, ode: &QuadraticOde, degree: usize) -> Result<Self> {
        if poly.kind != EnergyKind::Future {
            return Err(Error::InvalidArgument("feedback laws are built from the future energy".into()));
        }
        if degree == 0 || degree + 1 > poly.degree {
            return Err(Error::InvalidArgument(format!(
                "feedback degree {degree} needs an energy of degree {}, got {}",
                degree + 1,
                poly.degree
            )));
        }
        if poly.n != ode.dim() {
            return Err(Error::Dimension(format!("energy has {} states, system has {}", poly.n, ode.dim())));
        }
        let coeffs: Vec<_> = (2..=degree + 1).map(|k| poly.coeff(k).clone()).collect();
        let p = costate_series(&coeffs, poly.n);
        Ok(PolynomialFeedback { eta: poly.eta, series: feedback_series(ode, &p, poly.eta, degree) })
    }

    /// `u ≡ 0`.
    pub fn open_loop(n: usize, m: usize) -> Self {
        PolynomialFeedback { eta: 0.0, series: PolySeries::zeros(n, m, 0) }
    }

    pub fn degree(&self) -> usize {
        self.series.max_degree()
    }

    pub fn states(&self) -> usize {
        self.series.n
    }

    pub fn inputs(&self) -> usize {
        self.series.rows
    }

    pub fn series(&self) -> &PolySeries {
        &self.series
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.series.eval(x)
    }

    /// `Du(x)[v]`.
    pub fn derivative(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.series.directional_derivative(x, v)
    }
}

/// Feedback of degree `poly.degree − 1` evaluated at `x_d`.
pub fn eval_feedback(poly: &EnergyPolynomial, reduced: &ReducedOdeSystem, x_d: &DVector<f64>) -> Result<DVector<f64>> {
    if x_d.len() != poly.n {
        return Err(Error::Dimension(format!("state has length {}, energy expects {}", x_d.len(), poly.n)));
    }
    let fb = PolynomialFeedback::from_energy(poly, &reduced.normalized()?, poly.degree - 1)?;
    Ok(fb.eval(x_d))
}

/// The reduced dynamics used for simulation, optionally with the original
/// DAE for consistency checks along the trajectory.
#[derive(Debug, Clone)]
pub struct Plant {
    pub reduced: ReducedOdeSystem,
    pub ode: QuadraticOde,
    pub dae: Option<StokesDaeSystem>,
}

impl Plant {
    pub fn from_dae(sys: &StokesDaeSystem) -> Result<Self> {
        let reduced = reduce_system(sys)?;
        let ode = reduced.normalized()?;
        Ok(Plant { reduced, ode, dae: Some(sys.clone()) })
    }

    pub fn from_reduced(reduced: ReducedOdeSystem) -> Result<Self> {
        let ode = reduced.normalized()?;
        Ok(Plant { reduced, ode, dae: None })
    }

    pub fn dim(&self) -> usize {
        self.ode.dim()
    }

    pub fn future_energy(&self, eta: f64, d: usize) -> Result<EnergyPolynomial> {
        compute_future_energy(&self.reduced, eta, d)
    }

    pub fn feedback(&self, energy: &EnergyPolynomial, degree: usize) -> Result<PolynomialFeedback> {
        PolynomialFeedback::from_energy(energy, &self.ode, degree)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub atol: f64,
    pub rtol: f64,
    pub horizon: f64,
    /// Stop once `‖x_d‖` drops below this.
    pub stop_norm: f64,
    /// Flag divergence once `‖x_d‖` exceeds this.
    pub divergence_norm: f64,
    pub max_steps: usize,
    /// Keep every accepted step (otherwise only the endpoints).
    pub record: bool,
    /// Evaluate constraint and momentum residuals of the lifted DAE
    /// solution at every accepted step.
    pub check_dae: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            atol: 1e-10,
            rtol: 1e-8,
            horizon: 50.0,
            stop_norm: 1e-9,
            divergence_norm: 1e3,
            max_steps: 1_000_000,
            record: true,
            check_dae: true,
        }
    }
}

impl SimOptions {
    pub fn with_horizon(self, horizon: f64) -> Self {
        SimOptions { horizon, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// `‖x_d‖` fell below the stopping threshold.
    Converged,
    /// Reached the end of the horizon without meeting either threshold.
    Horizon,
    /// `‖x_d‖` exceeded the divergence threshold.
    Diverged,
    NonFinite,
    /// Step size underflow or step budget exhausted.
    StepFailure,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `x₁ = Θ_r x_d − s u`.
    pub lifted: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    /// Accumulated cost at each time.
    pub cost: Vec<f64>,
    pub termination: Termination,
    pub steps: usize,
    pub rejected: usize,
    /// `max ‖A₁₂ᵀx₁ + B₂u‖` (only with the DAE attached).
    pub max_constraint_residual: Option<f64>,
    /// `max ‖E₁₁ẋ₁ − A₁₁x₁ − A₁₂x₂ − N(x₁⊗x₁) − B₁u‖` after recovering `x₂`.
    pub max_momentum_residual: Option<f64>,
}

impl ClosedLoopRun {
    pub fn diverged(&self) -> bool {
        matches!(self.termination, Termination::Diverged | Termination::NonFinite | Termination::StepFailure)
    }

    pub fn total_cost(&self) -> f64 {
        *self.cost.last().unwrap_or(&0.0)
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("run has at least one point")
    }
}

// Dormand–Prince 5(4); the closed loop is autonomous, so the nodes are not needed
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct ClosedLoop<'a> {
    plant: &'a Plant,
    feedback: &'a PolynomialFeedback,
    control_weight: f64,
}

impl ClosedLoop<'_> {
    /// `(ẋ_d, running cost)` stacked.
    fn rhs(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.plant.dim();
        let x = z.rows(0, n).into_owned();
        let u = self.feedback.eval(&x);
        let f = self.plant.ode.vector_field(&x, &u);
        let y = &self.plant.ode.c * &x;
        let mut out = DVector::zeros(n + 1);
        out.rows_mut(0, n).copy_from(&f);
        out[n] = 0.5 * (y.norm_squared() + self.control_weight * u.norm_squared());
        out
    }

    fn residuals(&self, x: &DVector<f64>) -> (f64, f64) {
        let Some(dae) = &self.plant.dae else {
            return (0.0, 0.0);
        };
        let reduced = &self.plant.reduced;
        let u = self.feedback.eval(x);
        let x1 = reduced.lift_state(x, &u);
        let constraint = dae.constraint_residual(&x1, &u).norm();
        let xd_dot = self.plant.ode.vector_field(x, &u);
        let u_dot = self.feedback.derivative(x, &xd_dot);
        let x1_dot = reduced.lift_derivative(&xd_dot, &u_dot);
        let momentum = match recover_algebraic(dae, &x1, &x1_dot, &u) {
            Ok(x2) => dae.momentum_residual(&x1, &x1_dot, &x2, &u).norm(),
            Err(Error::InconsistentState(r)) => r,
            Err(_) => f64::INFINITY,
        };
        (constraint, momentum)
    }
}

fn error_norm(z: &DVector<f64>, z_new: &DVector<f64>, err: &DVector<f64>, atol: f64, rtol: f64) -> f64 {
    let s: f64 = (0..z.len())
        .map(|i| {
            let sc = atol + rtol * z[i].abs().max(z_new[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (s / z.len() as f64).sqrt()
}

/// Integrates `ẋ_d = f(x_d, u(x_d))` from `x0` with the cost as a
/// quadrature state.
pub fn simulate_closed_loop(
    plant: &Plant,
    feedback: &PolynomialFeedback,
    x0: &DVector<f64>,
    opts: &SimOptions,
) -> Result<ClosedLoopRun> {
    let n = plant.dim();
    if x0.len() != n || feedback.states() != n || feedback.inputs() != plant.ode.inputs() {
        return Err(Error::Dimension(format!(
            "initial state of length {}, plant with {} states and {} inputs, feedback {}→{}",
            x0.len(),
            n,
            plant.ode.inputs(),
            feedback.states(),
            feedback.inputs()
        )));
    }
    if !(opts.horizon >= 0.0 && opts.atol > 0.0 && opts.rtol >= 0.0) {
        return Err(Error::InvalidArgument("horizon and tolerances must be nonnegative".into()));
    }
    let sys = ClosedLoop {
        plant,
        feedback,
        control_weight: if feedback.eta > 0.0 { 1.0 / feedback.eta } else { 0.0 },
    };
    let check = opts.check_dae && plant.dae.is_some();

    let mut run = ClosedLoopRun {
        times: Vec::new(),
        states: Vec::new(),
        lifted: Vec::new(),
        controls: Vec::new(),
        cost: Vec::new(),
        termination: Termination::Horizon,
        steps: 0,
        rejected: 0,
        max_constraint_residual: check.then_some(0.0),
        max_momentum_residual: check.then_some(0.0),
    };
    let push = |run: &mut ClosedLoopRun, t: f64, z: &DVector<f64>| {
        let x = z.rows(0, n).into_owned();
        let u = feedback.eval(&x);
        if check {
            let (c, m) = sys.residuals(&x);
            let mc = run.max_constraint_residual.as_mut().unwrap();
            *mc = mc.max(c);
            let mm = run.max_momentum_residual.as_mut().unwrap();
            *mm = mm.max(m);
        }
        run.lifted.push(plant.reduced.lift_state(&x, &u));
        run.controls.push(u);
        run.states.push(x);
        run.times.push(t);
        run.cost.push(z[n]);
    };

    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(x0);
    let mut t = 0.0;
    push(&mut run, t, &z);

    let state_norm = |z: &DVector<f64>| z.rows(0, n).norm();
    let classify = |z: &DVector<f64>| -> Option<Termination> {
        let r = state_norm(z);
        if !z.iter().all(|v| v.is_finite()) {
            Some(Termination::NonFinite)
        } else if r > opts.divergence_norm {
            Some(Termination::Diverged)
        } else if r < opts.stop_norm {
            Some(Termination::Converged)
        } else {
            None
        }
    };
    if let Some(term) = classify(&z) {
        run.termination = term;
        return Ok(run);
    }

    let mut k = vec![sys.rhs(&z); 7];
    let mut h = {
        let d0 = state_norm(&z);
        let d1 = k[0].rows(0, n).norm();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0.min(opts.horizon.max(f64::MIN_POSITIVE))
    };

    while t < opts.horizon {
        if run.steps + run.rejected >= opts.max_steps {
            run.termination = Termination::StepFailure;
            break;
        }
        h = h.min(opts.horizon - t);
        if h <= 1e-14 * t.abs().max(1.0) {
            run.termination = Termination::StepFailure;
            break;
        }
        for s in 1..7 {
            let mut zs = z.clone();
            for (j, a) in A[s].iter().enumerate().take(s) {
                if *a != 0.0 {
                    zs.axpy(h * a, &k[j], 1.0);
                }
            }
            k[s] = sys.rhs(&zs);
        }
        // stage 7 is evaluated at the fifth-order solution
        let mut z_new = z.clone();
        for (j, a) in A[6].iter().enumerate() {
            if *a != 0.0 {
                z_new.axpy(h * a, &k[j], 1.0);
            }
        }
        let mut err = DVector::zeros(n + 1);
        for (j, e) in E.iter().enumerate() {
            if *e != 0.0 {
                err.axpy(h * e, &k[j], 1.0);
            }
        }
        let en = error_norm(&z, &z_new, &err, opts.atol, opts.rtol);
        if !en.is_finite() {
            run.rejected += 1;
            h *= 0.2;
            continue;
        }
        if en <= 1.0 {
            t += h;
            z = z_new;
            k[0] = k[6].clone();
            run.steps += 1;
            let term = classify(&z);
            if opts.record || term.is_some() || t >= opts.horizon {
                push(&mut run, t, &z);
            } else if check {
                let (c, m) = sys.residuals(&z.rows(0, n).into_owned());
                let mc = run.max_constraint_residual.as_mut().unwrap();
                *mc = mc.max(c);
                let mm = run.max_momentum_residual.as_mut().unwrap();
                *mm = mm.max(m);
            }
            if let Some(term) = term {
                run.termination = term;
                break;
            }
            let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            run.rejected += 1;
            h *= (0.9 * en.powf(-0.2)).clamp(0.2, 1.0);
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    /// Feedback degree `d` (value polynomial of degree `d + 1`).
    pub degree: usize,
    pub value: f64,
    pub integral: f64,
    pub abs_err: f64,
    pub rel_err_pct: f64,
    pub diverged: bool,
}

impl ComparisonRow {
    pub fn new(degree: usize, value: f64, integral: f64, diverged: bool) -> Self {
        let abs_err = (value - integral).abs();
        let rel_err_pct = if integral == 0.0 { if abs_err == 0.0 { 0.0 } else { f64::INFINITY } } else { abs_err / integral.abs() * 100.0 };
        ComparisonRow { degree, value, integral, abs_err, rel_err_pct, diverged }
    }
}

/// Value prediction versus integrated cost for each feedback degree.
pub fn compare_table(
    plant: &Plant,
    eta: f64,
    degrees: &[usize],
    x0: &DVector<f64>,
    opts: &SimOptions,
) -> Result<Vec<ComparisonRow>> {
    let Some(&dmax) = degrees.iter().max() else {
        return Ok(Vec::new());
    };
    let energy = plant.future_energy(eta, dmax + 1)?;
    degrees
        .iter()
        .map(|&d| {
            let fb = plant.feedback(&energy, d)?;
            let value = eval_energy(&energy.truncated(d + 1)?, x0)?;
            let run = simulate_closed_loop(plant, &fb, x0, opts)?;
            Ok(ComparisonRow::new(d, value, run.total_cost(), run.diverged()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepDegree {
    pub degree: usize,
    pub stable: usize,
    pub unstable: usize,
    /// Mean over the stable runs; NaN if there are none.
    pub mean_rel_err_pct: f64,
    pub max_rel_err_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub count: usize,
    pub half_width: f64,
    pub seed: u64,
    pub degrees: Vec<SweepDegree>,
}

/// Samples `count` initial states uniformly from `[−half_width, half_width]ⁿ`
/// and simulates every feedback degree from each.
///
/// Samples are drawn sequentially from the seed and the runs are reduced in
/// sample order, so the summary does not depend on the thread count.
pub fn ic_sweep(
    plant: &Plant,
    eta: f64,
    degrees: &[usize],
    count: usize,
    half_width: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<SweepSummary> {
    if !(half_width > 0.0) {
        return Err(Error::InvalidArgument("sampling box must have positive width".into()));
    }
    let n = plant.dim();
    let mut summary = SweepSummary { count, half_width, seed, degrees: Vec::new() };
    let Some(&dmax) = degrees.iter().max() else {
        return Ok(summary);
    };
    let energy = plant.future_energy(eta, dmax + 1)?;
    let laws = degrees
        .iter()
        .map(|&d| Ok((energy.truncated(d + 1)?, plant.feedback(&energy, d)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<DVector<f64>> = (0..count)
        .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-half_width..=half_width)))
        .collect();
    let sweep_opts = SimOptions { record: false, check_dae: false, ..*opts };
    let results: Vec<Vec<ComparisonRow>> = samples
        .par_iter()
        .map(|x0| {
            laws.iter()
                .zip(degrees)
                .map(|((value_poly, fb), &d)| {
                    let run = simulate_closed_loop(plant, fb, x0, &sweep_opts)?;
                    Ok(ComparisonRow::new(d, value_poly.eval(x0), run.total_cost(), run.diverged()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    for (i, &d) in degrees.iter().enumerate() {
        let mut stable = 0;
        let mut sum = 0.0;
        let mut max = 0.0f64;
        for rows in &results {
            let r = &rows[i];
            if !r.diverged {
                stable += 1;
                sum += r.rel_err_pct;
                max = max.max(r.rel_err_pct);
            }
        }
        summary.degrees.push(SweepDegree {
            degree: d,
            stable,
            unstable: count - stable,
            mean_rel_err_pct: if stable > 0 { sum / stable as f64 } else { f64::NAN },
            max_rel_err_pct: if stable > 0 { max } else { f64::NAN },
        });
    }
    Ok(summary)
}
