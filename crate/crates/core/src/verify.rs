//! Empirical checks of the estimator's sensitivity, decomposition, error
//! decay, pathwise regret inequalities, and convergence against the bound.
//!
//! Inequality checks report a normalized slack `(rhs - lhs) / scale` with
//! `scale = max(|lhs|, |rhs|, 1)`; identity checks report minus the residual.
//! A check passes when its margin is at least `-tolerance`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::estimator::{EstimatorState, Schedule};
use crate::federated::{self, aggregate, FederatedConfig, PrivacySpec, RunOptions};
use crate::geometry::ConvexDomain;
use crate::linalg;
use crate::privacy::{self, TrustMode};
use crate::problems::{Dataset, LogisticProblem, Minimizer, Objective, QuadraticProblem};
use crate::record::RoundVectors;
use crate::seed::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyEntry {
    pub name: String,
    /// The property being checked.
    pub paper_ref: String,
    pub status: Status,
    pub margin: f64,
    pub tolerance: f64,
    pub n_trials: usize,
}

impl VerifyEntry {
    pub fn new(name: &str, property: &str, margin: f64, tolerance: f64, n_trials: usize) -> Self {
        let status = if margin >= -tolerance {
            Status::Pass
        } else {
            Status::Fail
        };
        Self {
            name: name.to_string(),
            paper_ref: property.to_string(),
            status,
            margin,
            tolerance,
            n_trials,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

fn slack(lhs: f64, rhs: f64) -> f64 {
    (rhs - lhs) / lhs.abs().max(rhs.abs()).max(1.0)
}

/// Datasets equal everywhere except round `tau_star`.
#[derive(Debug, Clone)]
pub struct NeighborPair<T> {
    pub base: Dataset<T>,
    pub variant: Dataset<T>,
    pub tau_star: usize,
}

impl<T: Clone + PartialEq> NeighborPair<T> {
    pub fn new(base: Dataset<T>, variant: Dataset<T>, tau_star: usize) -> Result<Self> {
        if base.len() != variant.len() || base.machine != variant.machine {
            return Err(invalid("pair", "datasets differ in length or owner"));
        }
        if tau_star == 0 || tau_star > base.len() {
            return Err(invalid("tau_star", format!("must lie in 1..={}, got {tau_star}", base.len())));
        }
        for (k, (a, b)) in base.samples().iter().zip(variant.samples()).enumerate() {
            if k + 1 != tau_star && a.payload != b.payload {
                return Err(invalid("pair", format!("datasets also differ at round {}", k + 1)));
            }
        }
        Ok(Self {
            base,
            variant,
            tau_star,
        })
    }

    /// Copies `base` and replaces the sample consumed at `tau_star`.
    pub fn replacing(base: Dataset<T>, tau_star: usize, replacement: T) -> Result<Self> {
        let mut variant = base.clone();
        variant.replace(tau_star, replacement)?;
        Self::new(base, variant, tau_star)
    }
}

/// `Delta_t = |q_t(S) - q_t(S')|` for `t = 1..T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityTrace {
    pub tau_star: usize,
    pub deltas: Vec<f64>,
}

/// Anytime averages of random feasible iterates: a valid query sequence
/// `x_1, ..., x_T` with `x_0 = x_1`.
pub fn query_sequence<R: Rng + ?Sized>(domain: &ConvexDomain, horizon: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let dim = domain.dim();
    let spread = domain.diameter();
    let center = domain.center();
    let draw = |rng: &mut R| -> Result<Vec<f64>> {
        let raw: Vec<f64> = center.iter().map(|c| c + rng.random_range(-spread..spread)).collect();
        domain.project(&raw)
    };
    let mut x = draw(rng)?;
    let mut out = Vec::with_capacity(horizon);
    out.push(x.clone());
    for t in 1..horizon {
        let w = draw(rng)?;
        x = crate::estimator::anytime_average(&x, &w, t)?;
        out.push(x.clone());
    }
    debug_assert!(out.iter().all(|x| x.len() == dim));
    Ok(out)
}

fn q_trace<P: Objective>(problem: &P, data: &Dataset<P::Payload>, queries: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut est = EstimatorState::new(problem.dim());
    let mut out = Vec::with_capacity(queries.len());
    for t in 1..=queries.len() {
        let z = data.get(t)?;
        let x_prev = &queries[t.saturating_sub(2)];
        let g = problem.grad(&queries[t - 1], z);
        let g_tilde = problem.grad(x_prev, z);
        out.push(est.advance(&g, &g_tilde)?.to_vec());
    }
    Ok(out)
}

/// Runs the estimator on both datasets of `pair` against the same queries.
pub fn empirical_sensitivity<P: Objective>(
    problem: &P,
    pair: &NeighborPair<P::Payload>,
    queries: &[Vec<f64>],
) -> Result<SensitivityTrace> {
    if queries.len() != pair.base.len() {
        return Err(invalid("queries", format!("need {} queries, got {}", pair.base.len(), queries.len())));
    }
    for x in queries {
        check_dim(problem.dim(), x.len())?;
    }
    let a = q_trace(problem, &pair.base, queries)?;
    let b = q_trace(problem, &pair.variant, queries)?;
    Ok(SensitivityTrace {
        tau_star: pair.tau_star,
        deltas: a.iter().zip(&b).map(|(x, y)| linalg::dist(x, y)).collect(),
    })
}

/// Sensitivity of the machine average when only machine `changed` differs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateSensitivity {
    pub machine: Vec<f64>,
    pub aggregate: Vec<f64>,
    /// Per-round floating-point allowance on `|aggregate - machine / M|`.
    pub rounding: Vec<f64>,
}

pub fn aggregate_sensitivity<P: Objective>(
    problem: &P,
    others: &[Dataset<P::Payload>],
    pair: &NeighborPair<P::Payload>,
    changed: usize,
    queries: &[Vec<f64>],
) -> Result<AggregateSensitivity> {
    let m = others.len();
    if changed >= m {
        return Err(invalid("changed", format!("machine {changed} out of range for M={m}")));
    }
    let traces: Vec<Vec<Vec<f64>>> =
        others.iter().map(|d| q_trace(problem, d, queries)).collect::<Result<_>>()?;
    let base_changed = q_trace(problem, &pair.base, queries)?;
    let variant_changed = q_trace(problem, &pair.variant, queries)?;
    let mut out = AggregateSensitivity {
        machine: Vec::new(),
        aggregate: Vec::new(),
        rounding: Vec::new(),
    };
    for t in 0..queries.len() {
        let mut base: Vec<Vec<f64>> = traces.iter().map(|tr| tr[t].clone()).collect();
        let mut variant = base.clone();
        base[changed] = base_changed[t].clone();
        variant[changed] = variant_changed[t].clone();
        let a = aggregate(&base, m)?;
        let b = aggregate(&variant, m)?;
        let machine = linalg::dist(&base_changed[t], &variant_changed[t]);
        let magnitude: f64 = base.iter().chain(&variant).map(|q| linalg::norm(q)).sum();
        out.machine.push(machine);
        out.aggregate.push(linalg::dist(&a, &b));
        out.rounding
            .push(8.0 * f64::EPSILON * magnitude / m as f64 + 1e-12 * machine / m as f64);
    }
    Ok(out)
}

/// Largest residuals of `q_t - sum s` and `eps_t - sum (s - s_bar)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub max_q_residual: f64,
    /// Absent when the trace has no population increments.
    pub max_eps_residual: Option<f64>,
}

/// Checks both partial-sum identities along a recorded trace. `perturb` adds
/// a constant to every entry of one round's `s`, as a detector sanity hook.
pub fn decomposition_check(vectors: &[RoundVectors], perturb: Option<(usize, f64)>) -> Result<DecompositionReport> {
    if vectors.is_empty() {
        return Err(Error::Verification("trace has no recorded rounds".into()));
    }
    let dim = vectors[0].q.len();
    let mut sum_s = vec![0.0; dim];
    let mut sum_dev = vec![0.0; dim];
    let mut max_q: f64 = 0.0;
    let mut max_eps: Option<f64> = Some(0.0);
    for v in vectors {
        if v.s.len() != dim {
            return Err(Error::Verification(format!("round {} has no increments", v.t)));
        }
        let mut s = v.s.clone();
        if let Some((round, delta)) = perturb {
            if round == v.t {
                s.iter_mut().for_each(|e| *e += delta);
            }
        }
        linalg::axpy(1.0, &s, &mut sum_s);
        for (a, b) in v.q.iter().zip(&sum_s) {
            max_q = max_q.max((a - b).abs());
        }
        max_eps = match (max_eps, &v.s_bar, &v.eps) {
            (Some(worst), Some(sb), Some(eps)) => {
                for ((acc, si), sbi) in sum_dev.iter_mut().zip(&s).zip(sb) {
                    *acc += si - sbi;
                }
                Some(eps.iter().zip(&sum_dev).fold(worst, |w, (a, b)| w.max((a - b).abs())))
            }
            _ => None,
        };
    }
    Ok(DecompositionReport {
        max_q_residual: max_q,
        max_eps_residual: max_eps,
    })
}

/// Monte-Carlo mean and standard error of `|eps_t|^2` for `t = 1..T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorDecay {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub n_seeds: usize,
}

fn seeded(template: &FederatedConfig, k: usize) -> FederatedConfig {
    let mut c = template.clone();
    c.seed = template.seed.wrapping_add(k as u64);
    c
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Runs `n_seeds` copies of `template` (seeds `template.seed + k`) and
/// averages the machine-averaged estimate error per round.
pub fn error_decay_mc<P: Objective>(problem: &P, template: &FederatedConfig, n_seeds: usize) -> Result<ErrorDecay> {
    if n_seeds < 100 {
        return Err(invalid("n_seeds", format!("need at least 100 seeds, got {n_seeds}")));
    }
    let probe = problem.domain().center();
    if problem.population_grad(&probe).is_none() {
        return Err(Error::Unavailable {
            what: "population gradient",
        });
    }
    let runs: Vec<Vec<f64>> = (0..n_seeds)
        .into_par_iter()
        .map(|k| {
            let r = federated::run(problem, &seeded(template, k), &RunOptions::default())?;
            Ok(r.rows.iter().map(|row| row.eps_norm_sq.unwrap_or(f64::NAN)).collect())
        })
        .collect::<Result<_>>()?;
    let horizon = template.horizon;
    let (mut mean, mut se) = (Vec::with_capacity(horizon), Vec::with_capacity(horizon));
    for t in 0..horizon {
        let col: Vec<f64> = runs.iter().map(|r| r[t]).collect();
        let (m, s) = mean_se(&col);
        mean.push(m);
        se.push(s);
    }
    Ok(ErrorDecay { mean, se, n_seeds })
}

/// Monte-Carlo comparison of `E|sum (s - s_bar)|^2` with `sum E|s - s_bar|^2` at `t = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub lhs_mean: f64,
    pub rhs_mean: f64,
    /// Mean and standard error of the paired difference `lhs - rhs`.
    pub diff_mean: f64,
    pub diff_se: f64,
    pub n_seeds: usize,
}

pub fn martingale_check<P: Objective>(problem: &P, template: &FederatedConfig, n_seeds: usize) -> Result<MartingaleReport> {
    if n_seeds < 2 {
        return Err(invalid("n_seeds", "need at least 2 seeds"));
    }
    let opts = RunOptions {
        record_vectors: true,
        ..RunOptions::default()
    };
    let pairs: Vec<(f64, f64)> = (0..n_seeds)
        .into_par_iter()
        .map(|k| {
            let r = federated::run(problem, &seeded(template, k), &opts)?;
            let vs = r.vectors.unwrap_or_default();
            let mut total = vec![0.0; problem.dim()];
            let mut squares = 0.0;
            for v in &vs {
                let sb = v
                    .s_bar
                    .as_ref()
                    .ok_or(Error::Unavailable { what: "population increments" })?;
                let dev = linalg::sub(&v.s, sb);
                squares += linalg::norm_sq(&dev);
                linalg::axpy(1.0, &dev, &mut total);
            }
            Ok((linalg::norm_sq(&total), squares))
        })
        .collect::<Result<_>>()?;
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let (diff_mean, diff_se) = mean_se(&diff);
    Ok(MartingaleReport {
        lhs_mean: mean_se(&lhs).0,
        rhs_mean: mean_se(&rhs).0,
        diff_mean,
        diff_se,
        n_seeds,
    })
}

/// Worst normalized slack of each pathwise inequality along one trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretReport {
    pub anytime: f64,
    pub ogd: f64,
    pub bound_consec: f64,
    pub smoothness_gap: f64,
}

impl RegretReport {
    pub fn worst(&self) -> f64 {
        self.anytime.min(self.ogd).min(self.bound_consec).min(self.smoothness_gap)
    }
}

/// Checks, at every round of `vectors`:
/// `alpha_{1:t}(f(x_t) - f(x*)) <= sum alpha_tau <grad f(x_tau), w_tau - x*>`,
/// `sum <q~_tau, w_{tau+1} - x*> <= D^2/(2 eta) - sum |w_tau - w_{tau+1}|^2 / (2 eta)`,
/// `alpha_{t-1} |x_t - x_{t-1}| <= 2D`, and
/// `|grad f(x_t) - grad f(x*)|^2 <= 2L (f(x_t) - f(x*))`.
pub fn regret_checks<P: Objective>(
    problem: &P,
    vectors: &[RoundVectors],
    minimizer: &Minimizer,
    eta: f64,
) -> Result<RegretReport> {
    if vectors.is_empty() {
        return Err(Error::Verification("trace has no recorded rounds".into()));
    }
    let x_star = &minimizer.x;
    let grad_star = problem
        .population_grad(x_star)
        .ok_or(Error::Unavailable { what: "population gradient" })?;
    let d = problem.constants().diameter();
    let l = problem.constants().l();
    let f_star = minimizer.value;

    let mut report = RegretReport {
        anytime: f64::INFINITY,
        ogd: f64::INFINITY,
        bound_consec: f64::INFINITY,
        smoothness_gap: f64::INFINITY,
    };
    let mut anytime_rhs = 0.0;
    let mut ogd_lhs = 0.0;
    let mut ogd_moves = 0.0;
    for v in vectors {
        let t = v.t;
        let grad = v
            .grad_at_x
            .as_ref()
            .ok_or(Error::Unavailable { what: "population gradient" })?;
        let gap = problem.population_loss(&v.x) - f_star;

        anytime_rhs += Schedule::alpha(t) * linalg::dot(grad, &linalg::sub(&v.w, x_star));
        report.anytime = report.anytime.min(slack(Schedule::alpha_sum(t) * gap, anytime_rhs));

        ogd_lhs += linalg::dot(&v.q_tilde, &linalg::sub(&v.w_next, x_star));
        ogd_moves += linalg::norm_sq(&linalg::sub(&v.w, &v.w_next));
        report.ogd = report.ogd.min(slack(ogd_lhs, (d * d - ogd_moves) / (2.0 * eta)));

        let consec = Schedule::alpha(t - 1) * linalg::dist(&v.x, &v.x_prev);
        report.bound_consec = report.bound_consec.min(slack(consec, 2.0 * d));

        let lhs = linalg::norm_sq(&linalg::sub(grad, &grad_star));
        report.smoothness_gap = report.smoothness_gap.min(slack(lhs, 2.0 * l * gap));
    }
    Ok(report)
}

/// Mean final excess loss over seeds against a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub mean: f64,
    pub se: f64,
    pub bound: f64,
    pub ratio: f64,
    pub pass: bool,
    pub n_seeds: usize,
}

pub fn convergence_report(excess: &[f64], bound: f64) -> Result<ConvergenceReport> {
    if excess.len() < 30 {
        return Err(invalid("excess", format!("need at least 30 seeds, got {}", excess.len())));
    }
    if !(bound.is_finite() && bound > 0.0) {
        return Err(invalid("bound", format!("must be finite and positive, got {bound}")));
    }
    let (mean, se) = mean_se(excess);
    Ok(ConvergenceReport {
        mean,
        se,
        bound,
        ratio: mean / bound,
        pass: mean <= bound,
        n_seeds: excess.len(),
    })
}

/// `D_alpha(N(0, s^2) || N(delta, s^2))` by Simpson quadrature of the
/// log-stabilized integrand `p^alpha q^(1 - alpha)`.
pub fn renyi_numeric(delta: f64, sigma_sq: f64, alpha: f64) -> Result<f64> {
    if !(sigma_sq > 0.0 && delta >= 0.0 && alpha > 1.0) {
        return Err(invalid("alpha", "need sigma_sq > 0, delta >= 0, alpha > 1"));
    }
    let sd = sigma_sq.sqrt();
    let log_p = |x: f64| -x * x / (2.0 * sigma_sq);
    let log_q = |x: f64| -(x - delta) * (x - delta) / (2.0 * sigma_sq);
    let h = |x: f64| alpha * log_p(x) + (1.0 - alpha) * log_q(x);

    let reach = (alpha + 1.0) * delta + 20.0 * sd;
    let coarse = 20_000;
    let (mut peak_x, mut peak) = (0.0, f64::NEG_INFINITY);
    for k in 0..=coarse {
        let x = -reach + 2.0 * reach * k as f64 / coarse as f64;
        if h(x) > peak {
            peak = h(x);
            peak_x = x;
        }
    }
    let (a, b) = (peak_x - 16.0 * sd, peak_x + 16.0 * sd);
    let n = 40_000;
    let step = (b - a) / n as f64;
    let mut sum = 0.0;
    for k in 0..=n {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * (h(a + k as f64 * step) - peak).exp();
    }
    let integral = sum * step / 3.0 / (2.0 * std::f64::consts::PI * sigma_sq).sqrt();
    Ok((peak + integral.ln()) / (alpha - 1.0))
}

/// Trial counts and fixtures for [`run_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteOptions {
    pub seed: u64,
    pub calibration_cases: usize,
    pub renyi_cases: usize,
    pub sensitivity_trials: usize,
    pub decomposition_runs: usize,
    pub error_decay_seeds: usize,
    pub martingale_seeds: usize,
    pub regret_runs: usize,
    pub convergence_seeds: usize,
    /// Perturbs one increment in the decomposition suite; detector sanity only.
    pub inject_bug: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            calibration_cases: 100,
            renyi_cases: 20,
            sensitivity_trials: 1000,
            decomposition_runs: 50,
            error_decay_seeds: 200,
            martingale_seeds: 200,
            regret_runs: 50,
            convergence_seeds: 50,
            inject_bug: false,
        }
    }
}

pub const SUITES: [&str; 9] = [
    "calibration",
    "renyi",
    "sensitivity",
    "decomposition",
    "error_decay",
    "martingale",
    "regret",
    "smoothness",
    "convergence",
];

fn harness(options: &SuiteOptions, index: u32) -> rand_chacha::ChaCha20Rng {
    seed::stream(options.seed, Purpose::Harness, index)
}

/// Runs one named suite and returns its report entries.
pub fn run_suite(name: &str, options: &SuiteOptions) -> Result<Vec<VerifyEntry>> {
    match name {
        "calibration" => suite_calibration(options),
        "renyi" => suite_renyi(options),
        "sensitivity" => suite_sensitivity(options),
        "decomposition" => suite_decomposition(options),
        "error_decay" => suite_error_decay(options),
        "martingale" => suite_martingale(options),
        "regret" => suite_regret(options, false),
        "smoothness" => suite_regret(options, true),
        "convergence" => suite_convergence(options),
        other => Err(invalid("suite", format!("unknown suite `{other}`; known: {}", SUITES.join(", ")))),
    }
}

fn suite_calibration(o: &SuiteOptions) -> Result<Vec<VerifyEntry>> {
    let mut rng = harness(o, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..o.calibration_cases {
        let rho = rng.random_range(0.1..=32.0);
        let s = rng.random_range(0.1..=200.0);
        let t = rng.random_range(1..=10_000usize);
        let m = rng.random_range(1..=128usize);
        for mode in [TrustMode::Untrusted, TrustMode::Trusted] {
            let sched = privacy::calibrate(rho, s, t, m, mode)?;
            for got in privacy::account(&sched, s)? {
                worst = worst.max((got - rho).abs() / rho);
            }
        }
    }
    Ok(vec![VerifyEntry::new(
        "calibration_closure",
        "account(calibrate(rho)) = rho",
        -worst,
        1e-12,
        o.calibration_cases,
    )])
}

fn suite_renyi(o: &SuiteOptions) -> Result<Vec<VerifyEntry>> {
    let mut rng = harness(o, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..o.renyi_cases {
        let alpha = 1.0 + rng.random_range(1e-3..=9.0);
        let delta = rng.random_range(0.0..=3.0);
        let sigma_sq = rng.random_range(0.1..=4.0);
        let closed = privacy::gaussian_renyi(delta, sigma_sq, alpha)?;
        let numeric = renyi_numeric(delta, sigma_sq, alpha)?;
        worst = worst.max((numeric - closed).abs() / closed.max(1e-6));
    }
    Ok(vec![VerifyEntry::new(
        "gaussian_renyi",
        "Gaussian Renyi divergence alpha Delta^2 / (2 sigma^2)",
        -worst,
        1e-6,
        o.renyi_cases,
    )])
}

fn suite_sensitivity(o: &SuiteOptions) -> Result<Vec<VerifyEntry>> {
    let (dim, horizon, machines) = (5, 50, 4);
    let problem = LogisticProblem::new(dim, machines, 0.5, o.seed)?;
    let two_s = 2.0 * problem.constants().s();
    let mut rng = harness(o, 3);
    let (mut before, mut bound, mut flat, mut agg): (f64, f64, f64, f64) = (0.0, f64::INFINITY, 0.0, f64::INFINITY);
    for trial in 0..o.sensitivity_trials {
        let data = problem.datasets(machines, horizon, o.seed.wrapping_add(trial as u64))?;
        let changed = rng.random_range(0..machines);
        let tau = rng.random_range(1..=horizon);
        let pair = NeighborPair::replacing(data[changed].clone(), tau, problem.draw(changed, &mut rng))?;
        let queries = query_sequence(problem.domain(), horizon, &mut rng)?;
        let tr = empirical_sensitivity(&problem, &pair, &queries)?;
        for (k, d) in tr.deltas.iter().enumerate() {
            let t = k + 1;
            if t < tau {
                before = before.max(*d);
            } else {
                bound = bound.min(two_s - d);
                let reference = tr.deltas[tau - 1];
                flat = flat.max((d - reference).abs() / reference.max(1.0));
            }
        }
        let a = aggregate_sensitivity(&problem, &data, &pair, changed, &queries)?;
        for t in 0..horizon {
            let err = (a.aggregate[t] - a.machine[t] / machines as f64).abs();
            agg = agg.min(a.rounding[t] - err);
        }
    }
    let n = o.sensitivity_trials;
    Ok(vec![
        VerifyEntry::new("sensitivity_zero_before_tau", "Delta_t = 0 for t < tau*", -before, 0.0, n),
        VerifyEntry::new("sensitivity_bound", "Delta_t <= 2S", bound, 0.0, n),
        VerifyEntry::new("sensitivity_constant_after_tau", "Delta_t constant for t >= tau*", -flat, 1e-9, n),
        VerifyEntry::new("trusted_aggregate_sensitivity", "aggregate Delta_t = machine Delta_t / M", agg, 0.0, n),
    ])
}

fn quadratic_fixture(o: &SuiteOptions, dim: usize, machines: usize, noise: f64) -> Result<QuadraticProblem> {
    QuadraticProblem::new(dim, machines, 0.5, noise, o.seed)
}

fn suite_decomposition(o: &SuiteOptions) -> Result<Vec<VerifyEntry>> {
    let p = quadratic_fixture(o, 10, 1, 0.5)?;
    let opts = RunOptions {
        record_vectors: true,
        ..RunOptions::default()
    };
    let (mut q_res, mut e_res): (f64, f64) = (0.0, 0.0);
    for k in 0..o.decomposition_runs {
        let privacy = if k % 2 == 0 {
            PrivacySpec::Rho { rho: 4.0 }
        } else {
            PrivacySpec::None
        };
        let c = FederatedConfig::new(TrustMode::Untrusted, 1, 200, privacy, o.seed.wrapping_add(k as u64));
        let r = federated::run(&p, &c, &opts)?;
        let perturb = o.inject_bug.then_some((100, 1e-3));
        let rep = decomposition_check(r.vectors.as_deref().unwrap_or(&[]), perturb)?;
        q_res = q_res.max(rep.max_q_residual);
        e_res = e_res.max(rep.max_eps_residual.unwrap_or(f64::INFINITY));
    }
    let n = o.decomposition_runs;
    Ok(vec![
        VerifyEntry::new("decomposition_q", "q_t = sum_{tau<=t} s_tau", -q_res, 1e-9, n),
        VerifyEntry::new("decomposition_eps", "eps_t = sum_{tau<=t} (s_tau - s_bar_tau)", -e_res, 1e-9, n),
    ])
}

fn suite_error_decay(o: &SuiteOptions) -> Result<Vec<VerifyEntry>> {
    let horizon = 200;
    let mut entries = Vec::new();
    for machines in [1usize, 4] {
        let p = quadratic_fixture(o, 5, machines, 0.8)?;
        let c = FederatedConfig::new(TrustMode::Untrusted, machines, horizon, PrivacySpec::Rho { rho: 4.0 }, o.seed);
        let mc = error_decay_mc(&p, &c, o.error_decay_seeds)?;
        let st = p.constants().sigma_tilde();
        let worst = (0..horizon)
            .map(|k| st * st * (k + 1) as f64 / machines as f64 + 3.0 * mc.se[k] - mc.mean[k])
            .fold(f64::INFINITY, f64::min);
        let name = format!("error_decay_m{machines}");
        entries.push(VerifyEntry::new(&name, "E|eps_t|^2 <= sigma~^2 t / M + 3 SE", worst, 0.0, mc.n_seeds));
        if machines == 1 {
            let drop = mc.mean[9] / 100.0 - mc.mean[99] / 10_000.0;
            entries.push(VerifyEntry::new(
                "normalized_error_decay",
                "E|eps_t|^2 / t^2 at t=100 below t=10",
                drop,
                0.0,
                mc.n_seeds,
            ));
        }
    }
    Ok(entries)
}

fn suite_martingale(o: &SuiteOptions) -> Result<Vec<VerifyEntry>> {
    let p = LogisticProblem::new(5, 1, 0.3, o.seed)?;
    let c = FederatedConfig::new(TrustMode::Untrusted, 1, 100, PrivacySpec::Rho { rho: 4.0 }, o.seed);
    let r = martingale_check(&p, &c, o.martingale_seeds)?;
    Ok(vec![VerifyEntry::new(
        "martingale_identity",
        "E|sum Z|^2 = sum E|Z|^2 within 5 SE",
        5.0 * r.diff_se - r.diff_mean.abs(),
        0.0,
        r.n_seeds,
    )])
}

fn suite_regret(o: &SuiteOptions, smoothness_only: bool) -> Result<Vec<VerifyEntry>> {
    let p = quadratic_fixture(o, 5, 2, 0.5)?;
    let mz = p.minimizer().ok_or(Error::Unavailable { what: "minimizer" })?;
    let opts = RunOptions {
        record_vectors: true,
        ..RunOptions::default()
    };
    let mut worst = RegretReport {
        anytime: f64::INFINITY,
        ogd: f64::INFINITY,
        bound_consec: f64::INFINITY,
        smoothness_gap: f64::INFINITY,
    };
    for k in 0..o.regret_runs {
        let (mode, privacy) = match k % 3 {
            0 => (TrustMode::Untrusted, PrivacySpec::None),
            1 => (TrustMode::Untrusted, PrivacySpec::Rho { rho: 4.0 }),
            _ => (TrustMode::Trusted, PrivacySpec::Rho { rho: 1.0 }),
        };
        let c = FederatedConfig::new(mode, 2, 100, privacy, o.seed.wrapping_add(k as u64));
        let r = federated::run(&p, &c, &opts)?;
        let rep = regret_checks(&p, r.vectors.as_deref().unwrap_or(&[]), &mz, r.eta)?;
        worst.anytime = worst.anytime.min(rep.anytime);
        worst.ogd = worst.ogd.min(rep.ogd);
        worst.bound_consec = worst.bound_consec.min(rep.bound_consec);
        worst.smoothness_gap = worst.smoothness_gap.min(rep.smoothness_gap);
    }
    let n = o.regret_runs;
    let tol = 1e-8;
    if smoothness_only {
        return Ok(vec![VerifyEntry::new(
            "smoothness_gap",
            "|grad f(x) - grad f(x*)|^2 <= 2L (f(x) - f(x*))",
            worst.smoothness_gap,
            tol,
            n,
        )]);
    }
    Ok(vec![
        VerifyEntry::new("anytime_inequality", "alpha_{1:t}(f(x_t) - f(x*)) <= sum alpha <grad f(x), w - x*>", worst.anytime, tol, n),
        VerifyEntry::new("ogd_plus_regret", "sum <q~, w_{t+1} - x*> <= (D^2 - sum |w_t - w_{t+1}|^2) / (2 eta)", worst.ogd, tol, n),
        VerifyEntry::new("bound_consec", "alpha_{t-1} |x_t - x_{t-1}| <= 2D", worst.bound_consec, tol, n),
    ])
}

/// Final excess losses of `n` seeded runs of `template` on `problem`.
pub fn excess_losses<P: Objective>(problem: &P, template: &FederatedConfig, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .into_par_iter()
        .map(|k| {
            let r = federated::run(problem, &seeded(template, k), &RunOptions::default())?;
            r.metrics.excess_loss.ok_or(Error::Unavailable { what: "excess loss" })
        })
        .collect()
}

fn suite_convergence(o: &SuiteOptions) -> Result<Vec<VerifyEntry>> {
    let mut entries = Vec::new();
    for machines in [1usize, 4] {
        let p = quadratic_fixture(o, 5, machines, 0.5)?;
        let g_star = p.minimizer().map(|mz| mz.grad_norm).unwrap_or(p.constants().g());
        for horizon in [100usize, 400] {
            let mut means = Vec::new();
            for mode in [TrustMode::Untrusted, TrustMode::Trusted] {
                let c = FederatedConfig::new(mode, machines, horizon, PrivacySpec::Rho { rho: 4.0 }, o.seed);
                let bound = federated::theoretical_bound(mode, p.constants(), g_star, horizon, machines, 4.0, 5)?;
                let rep = convergence_report(&excess_losses(&p, &c, o.convergence_seeds)?, bound)?;
                entries.push(VerifyEntry::new(
                    &format!("convergence_{}_m{machines}_t{horizon}", mode.as_str()),
                    "mean final excess loss <= theoretical bound",
                    slack(rep.mean, rep.bound),
                    0.0,
                    rep.n_seeds,
                ));
                means.push(rep);
            }
            if machines > 1 {
                let (u, t) = (means[0], means[1]);
                entries.push(VerifyEntry::new(
                    &format!("trusted_not_worse_m{machines}_t{horizon}"),
                    "trusted mean <= untrusted mean + 2 SE",
                    u.mean + 2.0 * u.se - t.mean,
                    0.0,
                    u.n_seeds,
                ));
            }
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_datasets_have_zero_sensitivity() {
        let p = LogisticProblem::new(3, 1, 0.0, 1).unwrap();
        let data = p.datasets(1, 10, 2).unwrap().remove(0);
        let same = data.get(4).unwrap().payload.clone();
        let pair = NeighborPair::replacing(data, 4, same).unwrap();
        let q = query_sequence(p.domain(), 10, &mut seed::stream(0, Purpose::Harness, 0)).unwrap();
        let tr = empirical_sensitivity(&p, &pair, &q).unwrap();
        assert!(tr.deltas.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn malformed_pairs_are_rejected() {
        let a = Dataset::from_payloads(0, [1, 2, 3]);
        let b = Dataset::from_payloads(0, [1, 5, 4]);
        assert!(NeighborPair::new(a.clone(), b, 2).is_err());
        assert!(NeighborPair::new(a.clone(), a.clone(), 0).is_err());
        assert!(NeighborPair::new(a.clone(), Dataset::from_payloads(0, [1, 2]), 1).is_err());
    }

    #[test]
    fn query_sequences_are_feasible() {
        let dom = ConvexDomain::origin_ball(4, 0.5).unwrap();
        let q = query_sequence(&dom, 30, &mut seed::stream(3, Purpose::Harness, 0)).unwrap();
        assert_eq!(q.len(), 30);
        assert!(q.iter().all(|x| dom.contains(x, 1e-12)));
    }

    #[test]
    fn decomposition_single_round_is_exact_and_detects_corruption() {
        let p = QuadraticProblem::new(4, 1, 0.0, 0.5, 1).unwrap();
        let c = FederatedConfig::new(TrustMode::Untrusted, 1, 1, PrivacySpec::None, 2);
        let opts = RunOptions {
            record_vectors: true,
            ..RunOptions::default()
        };
        let r = federated::run(&p, &c, &opts).unwrap();
        let vs = r.vectors.unwrap();
        assert_eq!(vs[0].q, vs[0].s);
        let rep = decomposition_check(&vs, None).unwrap();
        assert_eq!(rep.max_q_residual, 0.0);
        let bad = decomposition_check(&vs, Some((1, 1e-3))).unwrap();
        assert!((bad.max_q_residual - 1e-3).abs() < 1e-12);
        assert!(decomposition_check(&[], None).is_err());
    }

    #[test]
    fn constant_trajectory_at_optimum_has_slack() {
        let p = QuadraticProblem::new(3, 1, 0.0, 0.0, 5).unwrap();
        let mz = p.minimizer().unwrap();
        let g = p.population_grad(&mz.x).unwrap();
        let vs: Vec<RoundVectors> = (1..=5)
            .map(|t| RoundVectors {
                t,
                x: mz.x.clone(),
                x_prev: mz.x.clone(),
                w: mz.x.clone(),
                w_next: mz.x.clone(),
                q: vec![0.0; 3],
                q_tilde: vec![0.0; 3],
                s: vec![0.0; 3],
                s_bar: None,
                eps: None,
                grad_at_x: Some(g.clone()),
            })
            .collect();
        let rep = regret_checks(&p, &vs, &mz, 0.1).unwrap();
        assert!(rep.worst() >= 0.0, "{rep:?}");
    }

    #[test]
    fn convergence_report_needs_thirty_seeds() {
        assert!(convergence_report(&[0.1; 29], 1.0).is_err());
        let r = convergence_report(&[0.5; 30], 1.0).unwrap();
        assert!(r.pass);
        assert_eq!(r.ratio, 0.5);
    }

    #[test]
    fn error_decay_refuses_few_seeds_and_missing_gradients() {
        let p = QuadraticProblem::new(2, 1, 0.0, 0.0, 1).unwrap();
        let c = FederatedConfig::new(TrustMode::Untrusted, 1, 5, PrivacySpec::None, 0);
        assert!(error_decay_mc(&p, &c, 99).is_err());
        let flat = error_decay_mc(&p, &c, 100).unwrap();
        assert!(flat.mean.iter().all(|m| *m < 1e-20));
    }

    #[test]
    fn numeric_renyi_matches_a_simple_case() {
        let v = renyi_numeric(1.0, 1.0, 2.0).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(run_suite("nope", &SuiteOptions::default()).is_err());
    }
}
