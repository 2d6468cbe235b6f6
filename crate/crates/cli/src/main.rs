//! `fixsmooth` command-line front end.
//!
//! Exit status: 0 on success, 1 on a numerical or input error (the error
//! name is printed first), 2 on a usage error.

mod config;

use std::fmt::Write as _;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fixsmooth::distributions::{t_abs_sf, t_quantile};
use fixsmooth::expansion::{self, LimitSample};
use fixsmooth::harness::{self, solve_increasing, PowerRow, RateRow, UpsilonRow};
use fixsmooth::kernels::DEFAULT_NODES;
use fixsmooth::statistics::read_series;
use fixsmooth::{
    bootstrap_distribution, default_taper_width, eigensystem, BootStatistic, DifferenceKernel, ErpRow,
    ExpansionEstimate, ExperimentConfig, KernelSpec, Method, ProcessModel, Smoothing, Truncation,
};

use config::Flags;

#[derive(Parser, Debug)]
#[command(name = "fixsmooth", version, about = "Fixed-smoothing tests for the mean of a stationary series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a Gaussian series from --model, one value per line.
    Simulate(Flags),
    /// Test H0: mu = mu0 with the subsampling t (--K) or kernel Wald (--kernel) statistic.
    Test(Flags),
    /// Eigenvalues of a kernel on [0,1]^2.
    Eigs(Flags),
    /// Evaluate one expansion term and its components.
    Expand {
        #[arg(value_enum)]
        op: ExpandOp,
        #[command(flatten)]
        flags: Flags,
    },
    /// Gaussian dependent bootstrap critical values and p-values.
    Bootstrap(Flags),
    /// Upsilon/K surface over K and alpha.
    Upsilon(Flags),
    /// Empirical rejection rates of each critical-value rule.
    Erp(Flags),
    /// Rejection rates under local alternatives mu0 + delta*sigma/sqrt(T).
    Power(Flags),
    /// Doubling-T convergence rate diagnostics.
    Rates(Flags),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ExpandOp {
    Upsilon,
    UpsilonLocal,
    Psi,
    Exact,
    IncreasingK,
    Aleph,
    LimitCdf,
    SmallB,
    SmallBLeading,
}

enum Failure {
    Usage(String),
    Domain(fixsmooth::Error),
}

impl From<fixsmooth::Error> for Failure {
    fn from(e: fixsmooth::Error) -> Self {
        Failure::Domain(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Outcome<()> {
    let (name, op, flags) = match command {
        Command::Simulate(f) => ("simulate", None, f),
        Command::Test(f) => ("test", None, f),
        Command::Eigs(f) => ("eigs", None, f),
        Command::Expand { op, flags } => ("expand", Some(op), flags),
        Command::Bootstrap(f) => ("bootstrap", None, f),
        Command::Upsilon(f) => ("upsilon", None, f),
        Command::Erp(f) => ("erp", None, f),
        Command::Power(f) => ("power", None, f),
        Command::Rates(f) => ("rates", None, f),
    };
    let flags = flags.resolve().map_err(Failure::Usage)?;
    eprint!("# command = {name}\n{}", flags.render());
    match name {
        "simulate" => simulate(&flags),
        "test" => test(&flags),
        "eigs" => eigs(&flags),
        "expand" => expand(op.expect("expand carries an op"), &flags),
        "bootstrap" => bootstrap(&flags),
        "upsilon" => upsilon(&flags),
        "erp" | "power" | "rates" => experiment(name, &flags),
        _ => unreachable!(),
    }
}

fn seed(f: &Flags) -> Outcome<u64> {
    f.seed.map_or_else(|| usage("--seed is required for randomized operations"), Ok)
}

fn one<T: Copy>(values: &[T], flag: &str) -> Outcome<T> {
    match values {
        [v] => Ok(*v),
        [] => usage(format!("--{flag} is required")),
        _ => usage(format!("--{flag} takes a single value here")),
    }
}

fn model(f: &Flags) -> Outcome<ProcessModel> {
    match f.model.as_slice() {
        [m] => Ok(ProcessModel::parse(m)?),
        [] => usage("--model is required"),
        _ => usage("--model takes a single value here"),
    }
}

fn kernel(f: &Flags, b: f64) -> Outcome<KernelSpec> {
    match &f.kernel {
        Some(name) => Ok(KernelSpec::parse(name, b, f.demean)?),
        None => usage("--kernel is required"),
    }
}

fn emit(f: &Flags, text: &str) -> Outcome<()> {
    match &f.out {
        Some(path) => Ok(harness::write_atomic(path, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// The series from --input, or simulated from --model, --T and --seed.
fn series(f: &Flags) -> Outcome<Vec<f64>> {
    if let Some(path) = &f.input {
        let text = std::fs::read_to_string(path).map_err(fixsmooth::Error::from)?;
        return Ok(read_series(&text)?);
    }
    let m = model(f)?;
    let t = one(&f.t, "T")?;
    let s = seed(f)?;
    Ok(m.simulate(t, s)?)
}

fn simulate(f: &Flags) -> Outcome<()> {
    let m = model(f)?;
    let t = one(&f.t, "T")?;
    let s = seed(f)?;
    let x = m.simulate(t, s)?;
    let mut text = String::new();
    for v in x {
        let _ = writeln!(text, "{v}");
    }
    emit(f, &text)
}

fn alphas(f: &Flags) -> Vec<f64> {
    if f.alpha.is_empty() {
        vec![0.05]
    } else {
        f.alpha.clone()
    }
}

fn check_alpha(a: &[f64]) -> Outcome<()> {
    match a.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        Some(a) => usage(format!("--alpha {a} outside (0, 1)")),
        None => Ok(()),
    }
}

fn test(f: &Flags) -> Outcome<()> {
    let a = alphas(f);
    check_alpha(&a)?;
    if !f.k.is_empty() && f.kernel.is_some() {
        return usage("give either --K or --kernel, not both");
    }
    let x = series(f)?;
    let mu0 = f.mu0.unwrap_or(0.0);
    let mut text = String::from("statistic,smoothing,T,alpha,critical_value,p_value,reject\n");
    if !f.k.is_empty() {
        let k = one(&f.k, "K")?;
        let stat = fixsmooth::subsampling_t(&x, k, mu0)?.statistic;
        let p = t_abs_sf(k as f64 - 1.0, stat.abs());
        for a in a {
            let cv = t_quantile(k as f64 - 1.0, 1.0 - a / 2.0);
            let _ = writeln!(text, "{stat},K={k},{},{a},{cv},{p},{}", x.len(), stat.abs() > cv);
        }
    } else {
        let spec = kernel(f, one(&f.b, "b")?)?;
        let stat = fixsmooth::wald_f(&x, &spec, mu0)?.statistic;
        let eig = eigensystem(&spec, f.nodes.unwrap_or(DEFAULT_NODES), Truncation::default())?;
        let sample = LimitSample::draw(&eig.eigenvalues, f.reps.unwrap_or(200_000), seed(f)?)?;
        let p = 1.0 - sample.cdf(stat);
        for a in a {
            let cv = solve_increasing(|y| Ok(sample.cdf(y)), 1.0 - a, 0.0, 1e4, 1e-9)?;
            let label = format!("{}(b={})", spec.label(), spec.b);
            let _ = writeln!(text, "{stat},{label},{},{a},{cv},{p},{}", x.len(), stat > cv);
        }
    }
    emit(f, &text)
}

fn eigs(f: &Flags) -> Outcome<()> {
    let spec = kernel(f, f.b.first().copied().unwrap_or(1.0))?;
    let sys = eigensystem(&spec, f.nodes.unwrap_or(DEFAULT_NODES), Truncation::default())?;
    let mut text = String::from("j,lambda\n");
    for (j, l) in sys.eigenvalues.iter().enumerate() {
        let _ = writeln!(text, "{},{l}", j + 1);
    }
    match &f.out {
        // The full export carries the eigenfunctions on the grid too.
        Some(path) => Ok(harness::write_atomic(path, sys.to_text().as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn estimate_row(params: Vec<(&str, String)>, e: &ExpansionEstimate) -> Vec<(String, String)> {
    let mut row: Vec<(String, String)> = params.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    row.push(("value".into(), e.value.to_string()));
    row.push(("se".into(), e.mc_std_error.to_string()));
    row.push(("reps".into(), e.reps.to_string()));
    row.extend(e.components.iter().map(|(n, v)| (n.clone(), v.to_string())));
    row
}

fn expand(op: ExpandOp, f: &Flags) -> Outcome<()> {
    if f.x.is_empty() {
        return usage("--x is required");
    }
    let reps = f.reps.unwrap_or(200_000);
    let mut rows = Vec::new();
    match op {
        ExpandOp::Upsilon | ExpandOp::UpsilonLocal | ExpandOp::Psi | ExpandOp::Exact | ExpandOp::IncreasingK => {
            if f.k.is_empty() {
                return usage("--K is required");
            }
            let deltas = if op == ExpandOp::UpsilonLocal {
                if f.delta.is_empty() {
                    return usage("--delta is required");
                }
                f.delta.clone()
            } else {
                vec![0.0]
            };
            let needs_model = matches!(op, ExpandOp::Psi | ExpandOp::Exact | ExpandOp::IncreasingK);
            let m = if needs_model { Some((model(f)?, one(&f.t, "T")?)) } else { None };
            let s = if op == ExpandOp::IncreasingK { 0 } else { seed(f)? };
            for &k in &f.k {
                for &x in &f.x {
                    for &d in &deltas {
                        let e = match (op, &m) {
                            (ExpandOp::Upsilon, _) => expansion::upsilon(x, k, reps, s)?,
                            (ExpandOp::UpsilonLocal, _) => expansion::upsilon_local(x, k, d, reps, s)?,
                            (ExpandOp::Psi, Some((m, t))) => expansion::psi(x, k, m, *t, reps, s)?,
                            (ExpandOp::Exact, Some((m, t))) => expansion::exact_coeff_expansion(x, k, m, *t, reps, s)?,
                            (ExpandOp::IncreasingK, Some((m, t))) => expansion::increasing_k_expansion(x, k, m, *t)?,
                            _ => unreachable!(),
                        };
                        let mut params = vec![("x", x.to_string()), ("K", k.to_string())];
                        if op == ExpandOp::UpsilonLocal {
                            params.push(("delta", d.to_string()));
                        }
                        rows.push(estimate_row(params, &e));
                    }
                }
            }
        }
        ExpandOp::Aleph | ExpandOp::LimitCdf => {
            let spec = kernel(f, one(&f.b, "b")?)?;
            let eig = eigensystem(&spec, f.nodes.unwrap_or(DEFAULT_NODES), Truncation::default())?;
            let s = seed(f)?;
            let trunc = f.k.first().copied();
            let m = if op == ExpandOp::Aleph { Some((model(f)?, one(&f.t, "T")?)) } else { None };
            for &x in &f.x {
                let e = match &m {
                    Some((m, t)) => expansion::aleph(x, &eig, m, *t, trunc, reps, s)?,
                    None => expansion::fixed_b_limit_cdf(&eig, x, reps, s)?,
                };
                rows.push(estimate_row(vec![("x", x.to_string())], &e));
            }
        }
        ExpandOp::SmallB | ExpandOp::SmallBLeading => {
            let b = one(&f.b, "b")?;
            let name = f.kernel.as_deref().map_or_else(|| usage("--kernel is required"), Ok)?;
            let k = DifferenceKernel::from_name(name)
                .map_or_else(|| usage(format!("--kernel {name} is not a difference kernel")), Ok)?;
            let (m, t) = (model(f)?, one(&f.t, "T")?);
            for &x in &f.x {
                let e = if op == ExpandOp::SmallB {
                    expansion::small_b_second_order(x, b, t, &m, k)?
                } else {
                    let v = expansion::fix_small_leading(x, b, t, &m, k)?;
                    ExpansionEstimate { value: v, mc_std_error: 0.0, reps: 0, components: Vec::new() }
                };
                rows.push(estimate_row(vec![("x", x.to_string())], &e));
            }
        }
    }
    let mut text = String::new();
    if let Some(first) = rows.first() {
        text.push_str(&first.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(","));
        text.push('\n');
    }
    for row in &rows {
        text.push_str(&row.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join(","));
        text.push('\n');
    }
    emit(f, &text)
}

fn bootstrap(f: &Flags) -> Outcome<()> {
    let a = alphas(f);
    check_alpha(&a)?;
    let statistic = match (f.k.as_slice(), &f.kernel) {
        ([k], None) => BootStatistic::SubsamplingT { k: *k },
        ([], Some(_)) => BootStatistic::Wald { kernel: kernel(f, one(&f.b, "b")?)? },
        _ => return usage("give exactly one of --K or --kernel"),
    };
    let x = series(f)?;
    let s = seed(f)?;
    let l = f.l.unwrap_or_else(|| default_taper_width(x.len()));
    let observed = statistic.compute(&x, f.mu0.unwrap_or(0.0))?;
    let outcome = bootstrap_distribution(&x, &statistic, l, f.reps.unwrap_or(999), s, &a)?;
    let p = outcome.p_value(observed);
    let mut text = String::from("alpha,critical_value,p_value,statistic,reject\n");
    for &(alpha, cv) in &outcome.critical_values {
        let _ = writeln!(text, "{alpha},{cv},{p},{observed},{}", observed.abs() > cv);
    }
    print!("{text}");
    if let Some(path) = &f.out {
        let mut reps = String::from("rep,statistic\n");
        for (i, v) in outcome.statistics.iter().enumerate() {
            let _ = writeln!(reps, "{},{v}", i + 1);
        }
        harness::write_atomic(path, reps.as_bytes())?;
    }
    Ok(())
}

fn upsilon(f: &Flags) -> Outcome<()> {
    let ks = if f.k.is_empty() { (2..=32).collect() } else { f.k.clone() };
    let a = if f.alpha.is_empty() { vec![0.01, 0.05, 0.1] } else { f.alpha.clone() };
    check_alpha(&a)?;
    let rows = harness::run_upsilon_surface(&ks, &a, f.reps.unwrap_or(500_000), seed(f)?)?;
    let mut text = format!("{}\n", UpsilonRow::HEADER);
    for r in &rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    emit(f, &text)
}

fn experiment_config(name: &str, f: &Flags) -> Outcome<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(name, seed(f)?);
    cfg.models = f.model.iter().map(|m| ProcessModel::parse(m)).collect::<fixsmooth::Result<_>>()?;
    cfg.ts = f.t.clone();
    cfg.smoothing = f.k.iter().map(|&k| Smoothing::Groups(k)).collect();
    if f.kernel.is_some() {
        if f.b.is_empty() {
            return usage("--kernel needs at least one --b");
        }
        for &b in &f.b {
            cfg.smoothing.push(Smoothing::Kernel(kernel(f, b)?));
        }
    }
    if !f.alpha.is_empty() {
        cfg.alphas = f.alpha.clone();
    }
    if let Some(r) = f.reps {
        cfg.reps = r;
    }
    if let Some(r) = f.inner_reps {
        cfg.inner_reps = r;
    }
    if let Some(r) = f.expansion_reps {
        cfg.expansion_reps = r;
    }
    if !f.method.is_empty() {
        cfg.methods = f
            .method
            .iter()
            .map(|m| Method::from_id(m).map_or_else(|| usage(format!("unknown method {m:?}")), Ok))
            .collect::<Outcome<_>>()?;
    }
    cfg.taper = f.l;
    cfg.deltas = f.delta.clone();
    cfg.out = f.out.clone();
    if cfg.models.is_empty() || cfg.ts.is_empty() || cfg.smoothing.is_empty() {
        return usage("need --model, --T, and --K or --kernel with --b");
    }
    Ok(cfg)
}

fn experiment(name: &str, f: &Flags) -> Outcome<()> {
    let cfg = experiment_config(name, f)?;
    let (header, lines): (&str, Vec<String>) = match name {
        "erp" => (ErpRow::HEADER, harness::run_erp(&cfg)?.iter().map(ErpRow::csv).collect()),
        "power" => (PowerRow::HEADER, harness::run_power(&cfg)?.iter().map(PowerRow::csv).collect()),
        _ => {
            if cfg.ts.len() < 2 {
                return usage("rates needs at least two --T values");
            }
            (RateRow::HEADER, harness::run_rate_diagnostics(&cfg)?.iter().map(RateRow::csv).collect())
        }
    };
    if cfg.out.is_none() {
        println!("{header}");
        for l in lines {
            println!("{l}");
        }
    }
    Ok(())
}
