//! `daekron` command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use daekron::benchmarks::{build_fisher, build_scalar_example, FisherConfig, SCALAR_ETA};
use daekron::energy::{compute_energy, hjb_residual_ladder, EnergyKind};
use daekron::io::{read_energy, read_system, write_json, EnergyDocument, ReducedDocument, SystemDocument};
use daekron::monolithic::{monolithic_future_energy, rank_identities_check, rank_sum_identity, MonolithicOptions};
use daekron::reduction::{reduce_system, validate_stokes_dae};
use daekron::sim::{compare_table, ic_sweep, simulate_closed_loop, ComparisonRow, Plant, SimOptions};
use daekron::{DVector, EnergyPolynomial, Error, StokesDaeSystem};

#[derive(Parser)]
#[command(name = "daekron", version, about = "Energy functions and polynomial feedback for quadratic Stokes-type DAEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Past,
    Future,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Projected,
    Monolithic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Benchmark {
    Scalar,
    FisherCase1,
    FisherCase2,
}

#[derive(clap::Args, Clone)]
struct SimArgs {
    /// Cost weight (defaults to the value stored in the system file).
    #[arg(long)]
    eta: Option<f64>,
    /// Initial reduced state, comma separated.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "x1")]
    x0: Option<String>,
    /// Initial differential state x₁ (projected onto the constraint space).
    #[arg(long, allow_hyphen_values = true)]
    x1: Option<String>,
    /// Precomputed future energy; computed on the fly when omitted.
    #[arg(long)]
    energy: Option<PathBuf>,
    #[arg(long, default_value_t = 50.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-10)]
    atol: f64,
    #[arg(long, default_value_t = 1e-8)]
    rtol: f64,
    /// Significant digits in CSV output.
    #[arg(long, default_value_t = 6)]
    digits: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a system and write its reduced ODE form.
    Reduce {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compute an energy polynomial.
    Energy {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "future")]
        kind: Kind,
        #[arg(long)]
        eta: Option<f64>,
        /// Highest polynomial order.
        #[arg(long)]
        degree: usize,
        #[arg(long, value_enum, default_value = "projected")]
        method: Method,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Simulate one feedback degree and report predicted versus realized cost.
    Simulate {
        input: PathBuf,
        /// Feedback degree.
        #[arg(long)]
        degree: usize,
        /// Write the trajectory (t, cost, x_d, u) as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Comparison table over several feedback degrees.
    Table {
        input: PathBuf,
        /// Feedback degrees, e.g. `1,2,3` or `1..5`.
        #[arg(long, default_value = "1..5")]
        degrees: String,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Stability and error statistics over random initial states.
    Sweep {
        input: PathBuf,
        #[arg(long, default_value = "1..3")]
        degrees: String,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Half width of the sampling box.
        #[arg(long = "box", default_value_t = 2.0)]
        half_width: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Run the rank and projector identity checks.
    Selfcheck {
        #[arg(long, default_value_t = 5)]
        max_n1: usize,
        #[arg(long, default_value_t = 3)]
        max_k: usize,
    },
    /// Write a built-in benchmark system.
    Export {
        #[arg(value_enum)]
        benchmark: Benchmark,
        /// Element count for the Fisher systems.
        #[arg(long, default_value_t = 16)]
        ne: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Numerical(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn input_err(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

/// `%g`-style formatting with `digits` significant digits.
fn fmt_sig(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}"))
    }
}

fn parse_vector(s: &str) -> CliResult<DVector<f64>> {
    let vals = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| input_err(format!("cannot parse '{t}' as a number"))))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(DVector::from_vec(vals))
}

fn parse_degrees(s: &str) -> CliResult<Vec<usize>> {
    let bad = || input_err(format!("cannot parse degree list '{s}'"));
    let degrees: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if degrees.is_empty() || degrees.contains(&0) {
        return Err(input_err("feedback degrees must be positive"));
    }
    Ok(degrees)
}

fn load(input: &PathBuf) -> CliResult<(StokesDaeSystem, SystemDocument)> {
    let (sys, doc) = read_system(input)?;
    let report = validate_stokes_dae(&sys);
    if !report.is_valid() {
        return Err(input_err(format!("invalid system: {report}")));
    }
    Ok((sys, doc))
}

fn resolve_eta(arg: Option<f64>, doc: &SystemDocument) -> CliResult<f64> {
    let eta = arg.or(doc.eta).ok_or_else(|| input_err("no cost weight: pass --eta or set `eta` in the system file"))?;
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(input_err(format!("cost weight must be nonnegative, got {eta}")));
    }
    Ok(eta)
}

fn write_out(text: &str, output: &Option<PathBuf>) -> CliResult<()> {
    match output {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

struct SimSetup {
    plant: Plant,
    eta: f64,
    x0: DVector<f64>,
    opts: SimOptions,
    energy: Option<EnergyPolynomial>,
}

fn sim_setup(input: &PathBuf, args: &SimArgs, need_x0: bool) -> CliResult<SimSetup> {
    let (sys, doc) = load(input)?;
    let plant = Plant::from_dae(&sys)?;
    let n = plant.dim();
    let energy = match &args.energy {
        Some(p) => {
            let e = read_energy(p)?;
            if e.n != n {
                return Err(input_err(format!("energy has {} states, the reduced system has {n}", e.n)));
            }
            if e.kind != EnergyKind::Future {
                return Err(input_err("feedback laws need a future energy"));
            }
            Some(e)
        }
        None => None,
    };
    let eta = match (&energy, args.eta.or(doc.eta)) {
        (Some(e), None) => e.eta,
        (Some(e), Some(eta)) if eta != e.eta => {
            return Err(input_err(format!("--eta {eta} disagrees with the energy file (η = {})", e.eta)));
        }
        _ => resolve_eta(args.eta, &doc)?,
    };
    let x0 = match (&args.x0, &args.x1) {
        (Some(s), _) => parse_vector(s)?,
        (None, Some(s)) => {
            let x1 = parse_vector(s)?;
            if x1.len() != sys.e11.nrows() {
                return Err(input_err(format!("--x1 has length {}, expected {}", x1.len(), sys.e11.nrows())));
            }
            plant.reduced.projectors.theta_r.transpose() * x1
        }
        (None, None) if need_x0 => return Err(input_err("pass an initial state with --x0 or --x1")),
        (None, None) => DVector::zeros(n),
    };
    if x0.len() != n {
        return Err(input_err(format!("initial state has length {}, the reduced system has {n}", x0.len())));
    }
    let opts = SimOptions { atol: args.atol, rtol: args.rtol, horizon: args.horizon, ..SimOptions::default() };
    Ok(SimSetup { plant, eta, x0, opts, energy })
}

const TABLE_HEADER: &str = "degree,value,integral,abs_err,rel_err_pct";

fn row_csv(r: &ComparisonRow, digits: usize) -> String {
    if r.diverged {
        format!("{},{},divergence,divergence,divergence", r.degree, fmt_sig(r.value, digits))
    } else {
        format!(
            "{},{},{},{},{}",
            r.degree,
            fmt_sig(r.value, digits),
            fmt_sig(r.integral, digits),
            fmt_sig(r.abs_err, digits),
            fmt_sig(r.rel_err_pct, digits)
        )
    }
}

fn table_rows(setup: &SimSetup, degrees: &[usize]) -> CliResult<Vec<ComparisonRow>> {
    match &setup.energy {
        None => Ok(compare_table(&setup.plant, setup.eta, degrees, &setup.x0, &setup.opts)?),
        Some(energy) => degrees
            .iter()
            .map(|&d| {
                let fb = setup.plant.feedback(energy, d)?;
                let value = energy.truncated(d + 1)?.eval(&setup.x0);
                let run = simulate_closed_loop(&setup.plant, &fb, &setup.x0, &setup.opts)?;
                Ok(ComparisonRow::new(d, value, run.total_cost(), run.diverged()))
            })
            .collect(),
    }
}

fn cmd_reduce(input: PathBuf, output: PathBuf) -> CliResult<()> {
    let (sys, _) = read_system(&input)?;
    let report = validate_stokes_dae(&sys);
    if !report.is_valid() {
        return Err(input_err(format!("invalid system: {report}")));
    }
    let red = reduce_system(&sys)?;
    let cond_ed = {
        let sv = red.e_d.clone().svd(false, false).singular_values;
        sv.max() / sv.min()
    };
    eprintln!("system: {report}");
    eprintln!("reduced: {} states, {} inputs, cond(E_d) = {:.3e}", red.dim(), red.inputs(), cond_ed);
    write_json(&output, &ReducedDocument::from_reduced(&red))?;
    Ok(())
}

fn cmd_energy(input: PathBuf, kind: Kind, eta: Option<f64>, degree: usize, method: Method, output: PathBuf) -> CliResult<()> {
    let (sys, doc) = load(&input)?;
    let eta = resolve_eta(eta, &doc)?;
    let kind = match kind {
        Kind::Past => EnergyKind::Past,
        Kind::Future => EnergyKind::Future,
    };
    let red = reduce_system(&sys)?;
    let energy = match method {
        Method::Projected => compute_energy(&red, kind, eta, degree)?,
        Method::Monolithic => {
            if kind == EnergyKind::Past {
                return Err(input_err("the monolithic method computes future energies only"));
            }
            if sys.has_input_constraint() {
                return Err(input_err(
                    "the monolithic method requires B₂ = 0 (the input must not enter the constraint); use --method projected",
                ));
            }
            let run = monolithic_future_energy(&sys, eta, degree, &MonolithicOptions::default())?;
            eprintln!("projected Riccati residual: {:.3e}", run.riccati_residual);
            for s in &run.solves {
                eprintln!(
                    "bordered system of side {}: rank {}, block residual {:.3e}, constraint residual {:.3e}",
                    s.side,
                    s.rank.map_or("not computed".into(), |r| r.to_string()),
                    s.block_residual,
                    s.constraint_residual
                );
            }
            run.energy
        }
    };
    if degree >= 3 {
        let ode = red.normalized()?;
        let rep = hjb_residual_ladder(&energy, &ode, &[1e-1, 3e-2, 1e-2, 3e-3], 4, 0)?;
        let ratios: Vec<String> = rep.ratios.iter().map(|r| format!("{r:.3e}")).collect();
        eprintln!(
            "HJB residual / ε^{}: [{}] ({})",
            degree + 1,
            ratios.join(", "),
            if rep.is_bounded() { "bounded" } else { "NOT bounded" }
        );
    }
    write_json(&output, &EnergyDocument::from_energy(&energy))?;
    Ok(())
}

fn cmd_simulate(input: PathBuf, degree: usize, trajectory: Option<PathBuf>, args: SimArgs) -> CliResult<()> {
    let setup = sim_setup(&input, &args, true)?;
    let energy = match &setup.energy {
        Some(e) => e.clone(),
        None => setup.plant.future_energy(setup.eta, degree + 1)?,
    };
    let fb = setup.plant.feedback(&energy, degree)?;
    let run = simulate_closed_loop(&setup.plant, &fb, &setup.x0, &setup.opts)?;
    let row = ComparisonRow::new(degree, energy.truncated(degree + 1)?.eval(&setup.x0), run.total_cost(), run.diverged());
    eprintln!(
        "{:?} at t = {} after {} steps; max constraint residual {:.2e}, max momentum residual {:.2e}",
        run.termination,
        fmt_sig(run.final_time(), 6),
        run.steps,
        run.max_constraint_residual.unwrap_or(0.0),
        run.max_momentum_residual.unwrap_or(0.0)
    );
    if let Some(path) = trajectory {
        let n = setup.plant.dim();
        let m = setup.plant.ode.inputs();
        let mut s = String::from("t,cost");
        (0..n).for_each(|i| write!(s, ",x{i}").unwrap());
        (0..m).for_each(|i| write!(s, ",u{i}").unwrap());
        s.push('\n');
        for i in 0..run.times.len() {
            write!(s, "{},{}", fmt_sig(run.times[i], args.digits), fmt_sig(run.cost[i], args.digits)).unwrap();
            run.states[i].iter().chain(run.controls[i].iter()).for_each(|v| write!(s, ",{}", fmt_sig(*v, args.digits)).unwrap());
            s.push('\n');
        }
        fs::write(path, s)?;
    }
    write_out(&format!("{TABLE_HEADER}\n{}\n", row_csv(&row, args.digits)), &args.output)
}

fn cmd_table(input: PathBuf, degrees: String, args: SimArgs) -> CliResult<()> {
    let degrees = parse_degrees(&degrees)?;
    let setup = sim_setup(&input, &args, true)?;
    let mut s = format!("{TABLE_HEADER}\n");
    for r in table_rows(&setup, &degrees)? {
        s.push_str(&row_csv(&r, args.digits));
        s.push('\n');
    }
    write_out(&s, &args.output)
}

fn cmd_sweep(input: PathBuf, degrees: String, count: usize, half_width: f64, seed: u64, args: SimArgs) -> CliResult<()> {
    let degrees = parse_degrees(&degrees)?;
    let setup = sim_setup(&input, &args, false)?;
    let mut s = String::from("degree,stable,unstable,mean_rel_err_pct,max_rel_err_pct\n");
    if count > 0 {
        let summary = ic_sweep(&setup.plant, setup.eta, &degrees, count, half_width, seed, &setup.opts)?;
        for d in &summary.degrees {
            writeln!(
                s,
                "{},{},{},{},{}",
                d.degree,
                d.stable,
                d.unstable,
                fmt_sig(d.mean_rel_err_pct, args.digits),
                fmt_sig(d.max_rel_err_pct, args.digits)
            )
            .unwrap();
        }
    }
    write_out(&s, &args.output)
}

fn cmd_selfcheck(max_n1: usize, max_k: usize) -> CliResult<()> {
    let mut failures = 0;
    for n1 in 2..=max_n1 {
        for r2 in 1..n1 {
            for k in 1..=max_k {
                let (l, r) = rank_sum_identity(n1, r2, k);
                if l != r {
                    failures += 1;
                    println!("FAIL sum identity n1={n1} r2={r2} k={k}: {l} != {r}");
                }
            }
        }
    }
    for n1 in 2..=max_n1 {
        for n2 in 1..=2.min(n1 - 1) {
            for k in 1..=max_k {
                let rep = rank_identities_check(n1, n2, k, (n1 * 100 + n2 * 10 + k) as u64)?;
                let status = if rep.holds() { "ok" } else { "FAIL" };
                if !rep.holds() {
                    failures += 1;
                }
                println!(
                    "{status} n1={n1} n2={n2} k={k}: rank {} / {} / expected {}, projector error {:.1e}",
                    rep.rank_full, rep.rank_tilde, rep.expected_rank, rep.projector_product_error
                );
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Numerical(format!("{failures} identity checks failed")));
    }
    println!("all identity checks passed");
    Ok(())
}

fn cmd_export(benchmark: Benchmark, ne: usize, output: PathBuf) -> CliResult<()> {
    if ne < 2 {
        return Err(input_err("need at least two elements"));
    }
    let doc = match benchmark {
        Benchmark::Scalar => SystemDocument::from_system(&build_scalar_example(), "scalar", Some(SCALAR_ETA)),
        Benchmark::FisherCase1 | Benchmark::FisherCase2 => {
            let cfg = match benchmark {
                Benchmark::FisherCase1 => FisherConfig::case1(),
                _ => FisherConfig::case2(),
            };
            let cfg = FisherConfig { ne, ..cfg };
            let name = format!("fisher-ne{}-alpha{}-beta{}", cfg.ne, cfg.alpha, cfg.beta);
            SystemDocument::from_system(&build_fisher(&cfg), &name, Some(cfg.eta))
        }
    };
    write_json(&output, &doc)?;
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("DAEKRON_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| input_err(format!("DAEKRON_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(input_err("DAEKRON_THREADS must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| input_err(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Reduce { input, output } => cmd_reduce(input, output),
        Command::Energy { input, kind, eta, degree, method, output } => cmd_energy(input, kind, eta, degree, method, output),
        Command::Simulate { input, degree, trajectory, sim } => cmd_simulate(input, degree, trajectory, sim),
        Command::Table { input, degrees, sim } => cmd_table(input, degrees, sim),
        Command::Sweep { input, degrees, count, half_width, seed, sim } => cmd_sweep(input, degrees, count, half_width, seed, sim),
        Command::Selfcheck { max_n1, max_k } => cmd_selfcheck(max_n1, max_k),
        Command::Export { benchmark, ne, output } => cmd_export(benchmark, ne, output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
