//! Shared flags and the `key = value` config file.
//!
//! Config keys are the long flag names without dashes (`T`, `K`, `alpha`,
//! `inner-reps`, ...). A repeatable flag may appear on several lines or take
//! a comma-separated list. Anything given on the command line replaces the
//! file's value for that key.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;

#[derive(Args, Debug, Clone, Default, PartialEq)]
pub struct Flags {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// ar1:RHO[:VAR] | ma1:THETA[:VAR] | arma11:RHO:THETA[:VAR] | iid[:VAR] | custom:PATH (repeatable for grids).
    #[arg(long)]
    pub model: Vec<String>,
    /// Sample size (repeatable for grids).
    #[arg(long = "T")]
    pub t: Vec<usize>,
    /// Number of groups (repeatable for grids).
    #[arg(long = "K")]
    pub k: Vec<usize>,
    /// bartlett | parzen | qs | daniel | tukey | cosine:PATH
    #[arg(long)]
    pub kernel: Option<String>,
    /// Kernel bandwidth as a fraction of T (repeatable for grids).
    #[arg(long)]
    pub b: Vec<f64>,
    /// Use the demeaned kernel.
    #[arg(long)]
    pub demean: bool,
    /// Bootstrap taper width.
    #[arg(long)]
    pub l: Option<usize>,
    /// Monte Carlo replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Bootstrap replications per outer draw in experiments.
    #[arg(long)]
    pub inner_reps: Option<usize>,
    /// Replications behind each Monte Carlo expansion in experiments.
    #[arg(long)]
    pub expansion_reps: Option<usize>,
    /// Master seed; required by every randomized operation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Nominal level (repeatable).
    #[arg(long)]
    pub alpha: Vec<f64>,
    /// Hypothesized mean.
    #[arg(long)]
    pub mu0: Option<f64>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluation point (repeatable).
    #[arg(long)]
    pub x: Vec<f64>,
    /// Local alternative in units of sigma/sqrt(T) (repeatable).
    #[arg(long)]
    pub delta: Vec<f64>,
    /// first_order | second_order | naive | small_b | bootstrap (repeatable).
    #[arg(long)]
    pub method: Vec<String>,
    /// Series file, one value per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Quadrature nodes for kernel eigenproblems.
    #[arg(long)]
    pub nodes: Option<usize>,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("config key {key}: cannot parse {v:?}"))
}

fn list<T: FromStr>(key: &str, v: &str, into: &mut Vec<T>) -> Result<(), String> {
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        into.push(parse(key, part)?);
    }
    Ok(())
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("config key {key}: expected true or false, got {v:?}")),
    }
}

impl Flags {
    /// Parses config file text.
    pub fn from_config_text(text: &str) -> Result<Flags, String> {
        let mut f = Flags::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected `key = value`, got {raw:?}", n + 1))?;
            let (key, v) = (key.trim(), value.trim());
            match key.replace('_', "-").as_str() {
                "model" => f.model.extend(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty())),
                "T" => list(key, v, &mut f.t)?,
                "K" => list(key, v, &mut f.k)?,
                "kernel" => f.kernel = Some(v.to_string()),
                "b" => list(key, v, &mut f.b)?,
                "demean" => f.demean = parse_bool(key, v)?,
                "l" => f.l = Some(parse(key, v)?),
                "reps" => f.reps = Some(parse(key, v)?),
                "inner-reps" => f.inner_reps = Some(parse(key, v)?),
                "expansion-reps" => f.expansion_reps = Some(parse(key, v)?),
                "seed" => f.seed = Some(parse(key, v)?),
                "alpha" => list(key, v, &mut f.alpha)?,
                "mu0" => f.mu0 = Some(parse(key, v)?),
                "out" => f.out = Some(PathBuf::from(v)),
                "x" => list(key, v, &mut f.x)?,
                "delta" => list(key, v, &mut f.delta)?,
                "method" => f.method.extend(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty())),
                "input" => f.input = Some(PathBuf::from(v)),
                "nodes" => f.nodes = Some(parse(key, v)?),
                _ => return Err(format!("config line {}: unknown key {key:?}", n + 1)),
            }
        }
        Ok(f)
    }

    /// Fills every key not given on the command line from `file`.
    pub fn merge(mut self, file: Flags) -> Flags {
        fn vec<T>(cli: &mut Vec<T>, file: Vec<T>) {
            if cli.is_empty() {
                *cli = file;
            }
        }
        fn opt<T>(cli: &mut Option<T>, file: Option<T>) {
            if cli.is_none() {
                *cli = file;
            }
        }
        vec(&mut self.model, file.model);
        vec(&mut self.t, file.t);
        vec(&mut self.k, file.k);
        opt(&mut self.kernel, file.kernel);
        vec(&mut self.b, file.b);
        self.demean |= file.demean;
        opt(&mut self.l, file.l);
        opt(&mut self.reps, file.reps);
        opt(&mut self.inner_reps, file.inner_reps);
        opt(&mut self.expansion_reps, file.expansion_reps);
        opt(&mut self.seed, file.seed);
        vec(&mut self.alpha, file.alpha);
        opt(&mut self.mu0, file.mu0);
        opt(&mut self.out, file.out);
        vec(&mut self.x, file.x);
        vec(&mut self.delta, file.delta);
        vec(&mut self.method, file.method);
        opt(&mut self.input, file.input);
        opt(&mut self.nodes, file.nodes);
        self
    }

    /// Applies `--config` if given.
    pub fn resolve(self) -> Result<Flags, String> {
        match &self.config {
            None => Ok(self),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
                Ok(self.merge(Flags::from_config_text(&text)?))
            }
        }
    }

    /// The resolved settings in config-file syntax.
    pub fn render(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
        }
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let entries: [(&str, Option<String>); 19] = [
            ("model", (!self.model.is_empty()).then(|| join(&self.model))),
            ("T", (!self.t.is_empty()).then(|| join(&self.t))),
            ("K", (!self.k.is_empty()).then(|| join(&self.k))),
            ("kernel", self.kernel.clone()),
            ("b", (!self.b.is_empty()).then(|| join(&self.b))),
            ("demean", Some(self.demean.to_string())),
            ("l", self.l.map(|v| v.to_string())),
            ("reps", self.reps.map(|v| v.to_string())),
            ("inner-reps", self.inner_reps.map(|v| v.to_string())),
            ("expansion-reps", self.expansion_reps.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("alpha", (!self.alpha.is_empty()).then(|| join(&self.alpha))),
            ("mu0", self.mu0.map(|v| v.to_string())),
            ("out", path(&self.out)),
            ("x", (!self.x.is_empty()).then(|| join(&self.x))),
            ("delta", (!self.delta.is_empty()).then(|| join(&self.delta))),
            ("method", (!self.method.is_empty()).then(|| join(&self.method))),
            ("input", path(&self.input)),
            ("nodes", self.nodes.map(|v| v.to_string())),
        ];
        for (k, v) in entries {
            if let Some(v) = v {
                put(k, v);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let text = "model = ar1:0.5\nT = 128, 256\nK = 4\nkernel = qs\nb = 0.1\ndemean = true\nseed = 9\nalpha = 0.01\nalpha = 0.05\nx = 1.5\n";
        let f = Flags::from_config_text(text).unwrap();
        assert_eq!(f.t, vec![128, 256]);
        assert_eq!(f.alpha, vec![0.01, 0.05]);
        assert_eq!(Flags::from_config_text(&f.render()).unwrap(), f);
    }

    #[test]
    fn flags_win_over_file() {
        let cli = Flags { seed: Some(1), alpha: vec![0.1], ..Flags::default() };
        let file = Flags::from_config_text("seed = 2\nalpha = 0.05\nreps = 5000\n").unwrap();
        let m = cli.merge(file);
        assert_eq!(m.seed, Some(1));
        assert_eq!(m.alpha, vec![0.1]);
        assert_eq!(m.reps, Some(5000));
    }

    #[test]
    fn unknown_and_malformed_lines_rejected() {
        assert!(Flags::from_config_text("sed = 3").unwrap_err().contains("unknown key"));
        assert!(Flags::from_config_text("seed 3").is_err());
        assert!(Flags::from_config_text("T = many").is_err());
        assert!(Flags::from_config_text("# comment only\n\n").is_ok());
    }
}
