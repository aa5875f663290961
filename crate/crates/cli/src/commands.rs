use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use mu2fl_core::federated::{self, FederatedConfig, PrivacySpec, RunOptions, RunRecord};
use mu2fl_core::privacy::{self, NoiseSchedule};
use mu2fl_core::problems::{LogisticProblem, MnistProblem, Objective, QuadraticProblem};
use mu2fl_core::verify::{self, VerifyEntry, SUITES};
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig, ProblemSpec};
use crate::Common;

pub const MNIST_ENV: &str = "DP_MU2_MNIST_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] mu2fl_core::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for bad input, 3 for numerical blow-up, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        use mu2fl_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Write { .. } => 1,
            CliError::Core(e) => match e {
                E::NonFinite { .. } => 3,
                E::Io(_) | E::Csv(_) | E::Json(_) | E::Verification(_) => 1,
                _ => 2,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn invalid(message: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Invalid(message.into()))
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(mode) = common.mode {
        cfg.run.mode = mode;
    }
    if let Some(rho) = common.rho {
        cfg.run.rho = Some(rho);
        cfg.run.sigma_sq = None;
    }
    if let Some(m) = common.machines {
        cfg.run.machines = m;
    }
    if let Some(t) = common.horizon {
        cfg.run.horizon = t;
    }
    if !common.deltas.is_empty() {
        cfg.run.deltas = common.deltas.clone();
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CliError::Write {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(mu2fl_core::Error::from)?;
    text.push('\n');
    Ok(text)
}

fn mnist_dir(dir: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(d) = dir {
        return Ok(d.clone());
    }
    match std::env::var_os(MNIST_ENV) {
        Some(d) if !d.is_empty() => Ok(PathBuf::from(d)),
        _ => Err(invalid(format!(
            "mnist problem needs run.problem.dir or {MNIST_ENV} pointing at the IDX files"
        ))),
    }
}

fn privacy_spec(cfg: &ExperimentConfig) -> Result<PrivacySpec> {
    let run = &cfg.run;
    match (run.rho, run.sigma_sq) {
        (Some(_), Some(_)) => Err(invalid("run.rho and run.sigma_sq are mutually exclusive")),
        (Some(rho), None) if rho.is_infinite() && rho > 0.0 => Ok(PrivacySpec::None),
        (Some(rho), None) => Ok(PrivacySpec::Rho { rho }),
        (None, Some(v)) => Ok(PrivacySpec::Schedule {
            schedule: NoiseSchedule::constant(run.mode, run.machines, run.horizon, v)?,
        }),
        (None, None) => Ok(PrivacySpec::None),
    }
}

#[derive(Serialize)]
struct SeedSummary {
    n_seeds: usize,
    seeds: Vec<u64>,
    loss_mean: f64,
    loss_se: f64,
    excess_loss_mean: Option<f64>,
    excess_loss_se: Option<f64>,
    accuracy_mean: Option<f64>,
    bound: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn print_record(record: &RunRecord, dir: &Path) {
    let m = &record.metrics;
    println!(
        "{} {} M={} T={} seed={} eta={:.6e}",
        record.problem,
        record.config.mode.as_str(),
        record.config.machines,
        record.config.horizon,
        record.seed,
        record.eta
    );
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6e}"));
    println!(
        "final loss {:.6e}  excess {}  accuracy {}",
        m.loss,
        opt(m.excess_loss),
        opt(m.accuracy)
    );
    println!("bound {:.6e}", record.bound.value);
    match &record.privacy {
        Some(p) => {
            println!("rho {:.6}  protects {}", p.rho, p.protected);
            println!("  {:>10}  {:>12}", "delta", "epsilon");
            for row in &p.epsilon_at_delta {
                println!("  {:>10.3e}  {:>12.6}", row.delta, row.epsilon);
            }
        }
        None => println!("rho inf (no noise)"),
    }
    println!("wrote {}", dir.display());
}

fn run_problem<P: Objective>(problem: &P, cfg: &ExperimentConfig) -> Result<()> {
    let run = &cfg.run;
    if run.n_seeds == 0 {
        return Err(invalid("run.n_seeds must be at least 1"));
    }
    let privacy = privacy_spec(cfg)?;
    let options = RunOptions {
        parallel: run.parallel,
        record_vectors: false,
        deltas: run.deltas.clone(),
    };
    let echo = serde_json::to_value(cfg).map_err(mu2fl_core::Error::from)?;
    let mut records = Vec::with_capacity(run.n_seeds);
    for k in 0..run.n_seeds {
        let seed = cfg.seed.wrapping_add(k as u64);
        let mut fc = FederatedConfig::new(run.mode, run.machines, run.horizon, privacy.clone(), seed);
        fc.eta = run.eta;
        let record = federated::run(problem, &fc, &options)?;
        let dir = if run.n_seeds == 1 {
            cfg.output_dir.clone()
        } else {
            cfg.output_dir.join(format!("seed_{seed}"))
        };
        federated::write_outputs(&record, &dir, Some(&echo))?;
        print_record(&record, &dir);
        records.push(record);
    }
    if records.len() > 1 {
        let losses: Vec<f64> = records.iter().map(|r| r.metrics.loss).collect();
        let (loss_mean, loss_se) = mean_se(&losses);
        let excess: Option<Vec<f64>> = records.iter().map(|r| r.metrics.excess_loss).collect();
        let (excess_loss_mean, excess_loss_se) = match excess {
            Some(e) => {
                let (m, s) = mean_se(&e);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        let acc: Option<Vec<f64>> = records.iter().map(|r| r.metrics.accuracy).collect();
        let summary = SeedSummary {
            n_seeds: records.len(),
            seeds: records.iter().map(|r| r.seed).collect(),
            loss_mean,
            loss_se,
            excess_loss_mean,
            excess_loss_se,
            accuracy_mean: acc.map(|a| mean_se(&a).0),
            bound: records[0].bound.value,
        };
        let path = cfg.output_dir.join("summary.json");
        write_file(&path, &pretty(&summary)?)?;
        println!(
            "mean loss {:.6e} +- {:.2e} over {} seeds; wrote {}",
            loss_mean,
            loss_se,
            records.len(),
            path.display()
        );
    }
    Ok(())
}

pub fn run(common: &Common) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let m = cfg.run.machines;
    if m == 0 || cfg.run.horizon == 0 {
        return Err(invalid("M and T must be at least 1"));
    }
    match &cfg.run.problem {
        ProblemSpec::Quadratic {
            dim,
            heterogeneity,
            noise_level,
            seed,
        } => run_problem(&QuadraticProblem::new(*dim, m, *heterogeneity, *noise_level, *seed)?, &cfg)?,
        ProblemSpec::Logistic {
            dim,
            heterogeneity,
            seed,
        } => run_problem(&LogisticProblem::new(*dim, m, *heterogeneity, *seed)?, &cfg)?,
        ProblemSpec::Mnist { dir } => run_problem(&MnistProblem::from_dir(mnist_dir(dir)?)?, &cfg)?,
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    passed: bool,
    suites: &'a [String],
    options: &'a verify::SuiteOptions,
    entries: &'a [VerifyEntry],
}

pub fn verify(common: &Common, suites: &[String], inject_bug: bool) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let mut options = cfg.verify.options.clone();
    if let Some(seed) = common.seed {
        options.seed = seed;
    }
    options.inject_bug |= inject_bug;
    let requested = if suites.is_empty() {
        cfg.verify.suites.clone()
    } else {
        suites.to_vec()
    };
    if requested.is_empty() {
        return Err(invalid("no verification suites selected"));
    }
    let mut names: Vec<String> = Vec::new();
    for s in &requested {
        if s == "all" {
            names.extend(SUITES.iter().map(|n| n.to_string()));
        } else if SUITES.contains(&s.as_str()) {
            names.push(s.clone());
        } else {
            return Err(invalid(format!("unknown suite `{s}`; known: all, {}", SUITES.join(", "))));
        }
    }
    let mut seen = std::collections::HashSet::new();
    names.retain(|n| seen.insert(n.clone()));
    let mut entries = Vec::new();
    for name in &names {
        let found = verify::run_suite(name, &options)?;
        for e in &found {
            println!(
                "{} {:<28} margin {:>11.3e}  tol {:.1e}  n={}",
                if e.passed() { "PASS" } else { "FAIL" },
                e.name,
                e.margin,
                e.tolerance,
                e.n_trials
            );
        }
        entries.extend(found);
    }
    let passed = entries.iter().all(VerifyEntry::passed);
    let report = VerifyReport {
        passed,
        suites: &names,
        options: &options,
        entries: &entries,
    };
    let path = cfg.output_dir.join("verify_report.json");
    write_file(&path, &pretty(&report)?)?;
    let failed = entries.iter().filter(|e| !e.passed()).count();
    println!("{} of {} checks passed; wrote {}", entries.len() - failed, entries.len(), path.display());
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn account(common: &Common, s_flag: Option<f64>, sigma_flag: Option<f64>) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let a = &cfg.account;
    let s = s_flag
        .or(a.s)
        .ok_or_else(|| invalid("account needs the increment bound S (--S or account.s)"))?;
    let mode = common.mode.or(a.mode).unwrap_or(cfg.run.mode);
    let machines = common.machines.or(a.machines).unwrap_or(cfg.run.machines);
    let horizon = common.horizon.or(a.horizon).unwrap_or(cfg.run.horizon);
    let deltas = if !common.deltas.is_empty() {
        common.deltas.clone()
    } else {
        a.deltas.clone().unwrap_or_else(|| vec![1e-5])
    };
    let (rho_in, sigma_in) = match (common.rho, sigma_flag) {
        (None, None) => (a.rho, a.sigma_sq),
        flags => flags,
    };
    let (sigma_sq, target) = match (rho_in, sigma_in) {
        (Some(_), Some(_)) => return Err(invalid("give exactly one of rho or sigma_sq, not both")),
        (None, None) => return Err(invalid("give exactly one of rho or sigma_sq")),
        (Some(rho), None) => {
            if rho == 0.0 {
                return Err(invalid("rho = 0 has no finite privacy noise: it needs infinite variance; pick rho > 0"));
            }
            (privacy::calibrated_variance(rho, s, horizon, machines, mode)?, Some(rho))
        }
        (None, Some(v)) => (v, None),
    };
    let schedule = NoiseSchedule::constant(mode, machines, horizon, sigma_sq)?;
    let per_machine = privacy::account(&schedule, s)?;
    let rho = per_machine.iter().cloned().fold(0.0, f64::max);
    println!("mode      {}", mode.as_str());
    println!("protects  {}", mode.protected_object());
    println!("S         {s}");
    println!("M         {machines}");
    println!("T         {horizon}");
    println!("sigma_sq  {sigma_sq:.12e}");
    match target {
        Some(t) => println!("rho       {rho:.12}  (target {t})"),
        None => println!("rho       {rho:.12}"),
    }
    println!("  {:>10}  {:>14}", "delta", "epsilon");
    for &d in &deltas {
        let g = privacy::rdp_to_dp(rho, d)?;
        println!("  {:>10.3e}  {:>14.6}", d, g.epsilon);
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mu2fl_core::privacy::TrustMode;

    #[test]
    fn exit_codes() {
        let e: CliError = mu2fl_core::Error::NonFinite { what: "x", round: 3 }.into();
        assert_eq!(e.exit_code(), 3);
        assert_eq!(invalid("x").exit_code(), 2);
        let e: CliError = mu2fl_core::Error::NoPrivacy.into();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn flags_override_config() {
        let common = Common {
            seed: Some(9),
            mode: Some(TrustMode::Trusted),
            rho: Some(2.0),
            machines: Some(7),
            deltas: vec![1e-3, 1e-6],
            ..Common::default()
        };
        let cfg = load_config(&common).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.run.mode, TrustMode::Trusted);
        assert_eq!(cfg.run.rho, Some(2.0));
        assert_eq!(cfg.run.machines, 7);
        assert_eq!(cfg.run.horizon, 200);
        assert_eq!(cfg.run.deltas, vec![1e-3, 1e-6]);
    }

    #[test]
    fn mean_se_small() {
        assert_eq!(mean_se(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
