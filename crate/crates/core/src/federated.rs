//! Synchronous parameter-server simulation of private federated mu^2-SGD.
//!
//! Each round the server broadcasts `(x_t, x_{t-1})`, every machine consumes
//! one sample and returns its weighted estimate `q_{t,i}`, and the server
//! averages the messages in machine-index order before its projected step.
//! With an untrusted server each machine adds Gaussian noise to its message;
//! with a trusted server the server adds a single draw to the average.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_positive, invalid, Error, Result};
use crate::estimator::{increment, EstimatorState, Schedule, TrajectoryState};
use crate::linalg;
use crate::privacy::{self, gaussian_sample, NoiseSchedule, PrivacyReport, TrustMode, GAUSSIAN_SAMPLER};
use crate::problems::{Dataset, Objective, ProblemConstants};
use crate::record::{self, RoundRow, RoundVectors};
use crate::seed;

/// How much noise a run adds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrivacySpec {
    /// Calibrate a constant schedule to the target `rho`.
    Rho { rho: f64 },
    /// Use the given variances as they are.
    Schedule { schedule: NoiseSchedule },
    /// No noise at all.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederatedConfig {
    pub mode: TrustMode,
    pub machines: usize,
    pub horizon: usize,
    pub privacy: PrivacySpec,
    /// Starting point; defaults to the domain center.
    #[serde(default)]
    pub x1: Option<Vec<f64>>,
    /// Overrides the default step size.
    #[serde(default)]
    pub eta: Option<f64>,
    pub seed: u64,
}

impl FederatedConfig {
    pub fn new(mode: TrustMode, machines: usize, horizon: usize, privacy: PrivacySpec, seed: u64) -> Self {
        Self {
            mode,
            machines,
            horizon,
            privacy,
            x1: None,
            eta: None,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.machines == 0 {
            return Err(invalid("machines", "M must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "T must be at least 1"));
        }
        if let Some(eta) = self.eta {
            check_positive("eta", eta)?;
        }
        match &self.privacy {
            PrivacySpec::Rho { rho } => check_positive("rho", *rho),
            PrivacySpec::Schedule { schedule } => {
                if schedule.mode() != self.mode
                    || schedule.machines() != self.machines
                    || schedule.horizon() != self.horizon
                {
                    Err(invalid("schedule", "mode, M and T must match the run"))
                } else {
                    Ok(())
                }
            }
            PrivacySpec::None => Ok(()),
        }
    }
}

/// Execution choices that never change the numbers a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Compute machine rounds on the rayon pool.
    pub parallel: bool,
    /// Keep per-round vectors (averaged over machines) in the record.
    pub record_vectors: bool,
    /// Deltas at which the privacy report converts to (epsilon, delta)-DP.
    pub deltas: Vec<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallel: false,
            record_vectors: false,
            deltas: vec![1e-5],
        }
    }
}

/// Default step size; `rho = inf` selects the smoothness branch.
///
/// Untrusted: `min(rho D sqrt(M) / (2 S T sqrt(d)), 1/(4 L T))`.
/// Trusted: `min(rho D M / (2 S T sqrt(d)), 1/(4 L T))`.
#[allow(clippy::too_many_arguments)]
pub fn learning_rate(
    mode: TrustMode,
    rho: f64,
    diameter: f64,
    machines: usize,
    s: f64,
    horizon: usize,
    dim: usize,
    l: f64,
) -> Result<f64> {
    if rho.is_nan() || rho <= 0.0 {
        return Err(invalid("rho", format!("must be positive, got {rho}")));
    }
    check_positive("D", diameter)?;
    check_positive("S", s)?;
    check_positive("L", l)?;
    if machines == 0 || horizon == 0 || dim == 0 {
        return Err(invalid("machines", "M, T and d must be at least 1"));
    }
    let t = horizon as f64;
    let m = machines as f64;
    let spread = match mode {
        TrustMode::Untrusted => m.sqrt(),
        TrustMode::Trusted => m,
    };
    let privacy_rate = rho * diameter * spread / (2.0 * s * t * (dim as f64).sqrt());
    Ok(privacy_rate.min(1.0 / (4.0 * l * t)))
}

/// Expected excess-loss bound
/// `4D((G* + 2LD)/T + 2 S sqrt(d) / (rho T sqrt(M)) + sigma~ / sqrt(T M))`,
/// with `rho T M` in the privacy term for a trusted server.
pub fn theoretical_bound(
    mode: TrustMode,
    constants: &ProblemConstants,
    g_star: f64,
    horizon: usize,
    machines: usize,
    rho: f64,
    dim: usize,
) -> Result<f64> {
    if !(0.0..=constants.g()).contains(&g_star) {
        return Err(invalid("g_star", format!("must lie in [0, G={}], got {g_star}", constants.g())));
    }
    if rho.is_nan() || rho <= 0.0 {
        return Err(invalid("rho", format!("must be positive, got {rho}")));
    }
    if machines == 0 || horizon == 0 || dim == 0 {
        return Err(invalid("machines", "M, T and d must be at least 1"));
    }
    let (d, l, s) = (constants.diameter(), constants.l(), constants.s());
    let t = horizon as f64;
    let m = machines as f64;
    let spread = match mode {
        TrustMode::Untrusted => m.sqrt(),
        TrustMode::Trusted => m,
    };
    let privacy_term = if rho.is_infinite() {
        0.0
    } else {
        2.0 * s * (dim as f64).sqrt() / (rho * t * spread)
    };
    Ok(4.0 * d * ((g_star + 2.0 * l * d) / t + privacy_term + constants.sigma_tilde() / (t * m).sqrt()))
}

/// Mean of `machines` equal-length messages, summed in index order.
pub fn aggregate(messages: &[Vec<f64>], machines: usize) -> Result<Vec<f64>> {
    if messages.len() != machines || machines == 0 {
        return Err(invalid("messages", format!("expected {machines} messages, got {}", messages.len())));
    }
    let mut sum = messages[0].clone();
    for m in &messages[1..] {
        check_dim(sum.len(), m.len())?;
        for (a, b) in sum.iter_mut().zip(m) {
            *a += b;
        }
    }
    let m = machines as f64;
    for a in sum.iter_mut() {
        *a /= m;
    }
    Ok(sum)
}

/// What one machine sends up in a round, plus diagnostics it can compute locally.
#[derive(Debug, Clone)]
pub struct MachineMessage {
    /// `q~_{t,i}` in untrusted mode, `q_{t,i}` in trusted mode.
    pub sent: Vec<f64>,
    pub q: Vec<f64>,
    pub s: Option<Vec<f64>>,
    pub s_bar: Option<Vec<f64>>,
    pub sample_loss: f64,
}

/// One simulated machine: its data, estimator, and (untrusted mode) noise stream.
#[derive(Debug, Clone)]
pub struct MachineState<T> {
    pub index: usize,
    estimator: EstimatorState,
    dataset: Dataset<T>,
    noise: Option<(ChaCha20Rng, Vec<f64>)>,
    gradient_evaluations: u64,
}

impl<T: Clone> MachineState<T> {
    /// `noise` is the machine's stream and per-round variances, untrusted mode only.
    pub fn new(dim: usize, dataset: Dataset<T>, noise: Option<(ChaCha20Rng, Vec<f64>)>) -> Self {
        Self {
            index: dataset.machine,
            estimator: EstimatorState::new(dim),
            dataset,
            noise,
            gradient_evaluations: 0,
        }
    }

    pub fn round(&self) -> usize {
        self.estimator.round()
    }

    pub fn gradient_evaluations(&self) -> u64 {
        self.gradient_evaluations
    }

    /// Consumes the next sample at the broadcast `(x_t, x_{t-1})`.
    pub fn machine_round<P: Objective<Payload = T>>(
        &mut self,
        problem: &P,
        x: &[f64],
        x_prev: &[f64],
        diagnostics: bool,
    ) -> Result<MachineMessage> {
        let t = self.estimator.round() + 1;
        let z = self.dataset.get(t)?;
        let g = problem.grad(x, z);
        let g_tilde = problem.grad(x_prev, z);
        self.gradient_evaluations += 2;
        let q = self.estimator.advance(&g, &g_tilde)?.to_vec();

        let sent = match self.noise.as_mut() {
            Some((rng, variances)) if variances[t - 1] > 0.0 => {
                let y = gaussian_sample(q.len(), variances[t - 1], rng)?;
                q.iter().zip(&y).map(|(a, b)| a + b).collect()
            }
            _ => q.clone(),
        };
        let sample_loss = if problem.cheap_population_loss() {
            0.0
        } else {
            problem.loss(x, z)
        };
        let (s, s_bar) = if diagnostics {
            let alpha_prev = Schedule::alpha(t - 1);
            let s = increment(&g, &g_tilde, alpha_prev)?;
            let s_bar = match (problem.machine_grad(self.index, x), problem.machine_grad(self.index, x_prev)) {
                (Some(a), Some(b)) => Some(increment(&a, &b, alpha_prev)?),
                _ => None,
            };
            (Some(s), s_bar)
        } else {
            (None, None)
        };
        Ok(MachineMessage {
            sent,
            q,
            s,
            s_bar,
            sample_loss,
        })
    }
}

/// Server trajectory and (trusted mode) noise stream.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub trajectory: TrajectoryState,
    noise: Option<(ChaCha20Rng, Vec<f64>)>,
}

impl ServerState {
    pub fn new(trajectory: TrajectoryState, noise: Option<(ChaCha20Rng, Vec<f64>)>) -> Self {
        Self { trajectory, noise }
    }

    /// Adds the server's draw for round `t` to the averaged estimate.
    fn privatize(&mut self, avg: Vec<f64>, t: usize) -> Result<Vec<f64>> {
        match self.noise.as_mut() {
            Some((rng, variances)) if variances[t - 1] > 0.0 => {
                let y = gaussian_sample(avg.len(), variances[t - 1], rng)?;
                Ok(avg.iter().zip(&y).map(|(a, b)| a + b).collect())
            }
            _ => Ok(avg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub loss: f64,
    pub excess_loss: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub value: f64,
    pub g_star: f64,
    /// `G* = G` was substituted because the minimizer is unknown.
    pub g_star_substituted: bool,
}

/// Everything a federated run produces.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub problem: String,
    pub config: FederatedConfig,
    pub seed: u64,
    pub sampler: String,
    pub eta: f64,
    pub gradient_evaluations: u64,
    #[serde(rename = "final")]
    pub metrics: FinalMetrics,
    /// Absent for noiseless runs.
    pub privacy: Option<PrivacyReport>,
    pub bound: BoundReport,
    #[serde(skip)]
    pub rows: Vec<RoundRow>,
    #[serde(skip)]
    pub final_x: Vec<f64>,
    /// Machine-averaged `q`, `s`, `s_bar` and `eps` per round, if requested.
    #[serde(skip)]
    pub vectors: Option<Vec<RoundVectors>>,
}

struct Resolved {
    schedule: NoiseSchedule,
    rho: f64,
    report: Option<PrivacyReport>,
}

fn resolve_privacy(config: &FederatedConfig, s: f64, deltas: &[f64]) -> Result<Resolved> {
    let (m, t, mode) = (config.machines, config.horizon, config.mode);
    let schedule = match &config.privacy {
        PrivacySpec::Rho { rho } => privacy::calibrate(*rho, s, t, m, mode)?,
        PrivacySpec::Schedule { schedule } => schedule.clone(),
        PrivacySpec::None => NoiseSchedule::zero(mode, m, t)?,
    };
    if schedule.is_zero() {
        return Ok(Resolved {
            schedule,
            rho: f64::INFINITY,
            report: None,
        });
    }
    let report = PrivacyReport::new(&schedule, s, deltas)?;
    let rho = match &config.privacy {
        PrivacySpec::Rho { rho } => *rho,
        _ => report.rho,
    };
    Ok(Resolved {
        schedule,
        rho,
        report: Some(report),
    })
}

/// Runs with an untrusted server; `config.mode` must be `Untrusted`.
pub fn run_untrusted<P: Objective>(problem: &P, config: &FederatedConfig, options: &RunOptions) -> Result<RunRecord> {
    if config.mode != TrustMode::Untrusted {
        return Err(invalid("mode", "run_untrusted needs mode = untrusted"));
    }
    run(problem, config, options)
}

/// Runs with a trusted server; `config.mode` must be `Trusted`.
pub fn run_trusted<P: Objective>(problem: &P, config: &FederatedConfig, options: &RunOptions) -> Result<RunRecord> {
    if config.mode != TrustMode::Trusted {
        return Err(invalid("mode", "run_trusted needs mode = trusted"));
    }
    run(problem, config, options)
}

/// Runs either algorithm according to `config.mode`.
pub fn run<P: Objective>(problem: &P, config: &FederatedConfig, options: &RunOptions) -> Result<RunRecord> {
    config.validate()?;
    let constants = *problem.constants();
    let (m, horizon, mode) = (config.machines, config.horizon, config.mode);
    let dim = problem.dim();
    let domain = problem.domain();
    let resolved = resolve_privacy(config, constants.s(), &options.deltas)?;

    let eta = match config.eta {
        Some(eta) => eta,
        None => learning_rate(
            mode,
            resolved.rho,
            constants.diameter(),
            m,
            constants.s(),
            horizon,
            dim,
            constants.l(),
        )?,
    };
    Schedule::new(horizon, eta)?;

    let x1 = config.x1.clone().unwrap_or_else(|| domain.center());
    let mut server = ServerState::new(
        TrajectoryState::start(domain, x1)?,
        (mode == TrustMode::Trusted && !resolved.schedule.is_zero())
            .then(|| (seed::server_noise(config.seed), resolved.schedule.row(0).to_vec())),
    );
    let datasets = problem.datasets(m, horizon, config.seed)?;
    if datasets.len() != m {
        return Err(invalid("datasets", format!("problem produced {} datasets for M={m}", datasets.len())));
    }
    let mut machines: Vec<MachineState<P::Payload>> = datasets
        .into_iter()
        .enumerate()
        .map(|(i, data)| {
            let noise = (mode == TrustMode::Untrusted && !resolved.schedule.is_zero())
                .then(|| (seed::machine_noise(config.seed, i), resolved.schedule.row(i).to_vec()));
            MachineState::new(dim, data, noise)
        })
        .collect();

    let cheap = problem.cheap_population_loss();
    let minimizer = problem.minimizer();
    let f_star = minimizer.as_ref().map(|mz| mz.value);
    let mut rows = Vec::with_capacity(horizon);
    let mut vectors = options.record_vectors.then(Vec::new);

    for t in 1..=horizon {
        let x = server.trajectory.x.clone();
        let x_prev = server.trajectory.x_prev.clone();
        let diagnostics = options.record_vectors;
        let step = |ms: &mut MachineState<P::Payload>| ms.machine_round(problem, &x, &x_prev, diagnostics);
        let messages: Vec<MachineMessage> = if options.parallel {
            machines.par_iter_mut().map(step).collect::<Result<_>>()?
        } else {
            machines.iter_mut().map(step).collect::<Result<_>>()?
        };

        let sent: Vec<Vec<f64>> = messages.iter().map(|msg| msg.sent.clone()).collect();
        let q_tilde = server.privatize(aggregate(&sent, m)?, t)?;
        if !linalg::all_finite(&q_tilde) {
            return Err(Error::NonFinite {
                what: "aggregate estimate",
                round: t,
            });
        }

        let loss = if cheap {
            problem.population_loss(&x)
        } else {
            messages.iter().map(|msg| msg.sample_loss).sum::<f64>() / m as f64
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", round: t });
        }
        let q_avg = aggregate(&messages.iter().map(|msg| msg.q.clone()).collect::<Vec<_>>(), m)?;
        let grad_at_x = problem.population_grad(&x);
        let eps = grad_at_x.as_ref().map(|gx| {
            let a = Schedule::alpha(t);
            q_avg.iter().zip(gx).map(|(q, g)| q - a * g).collect::<Vec<f64>>()
        });
        let sigma_sq = match mode {
            TrustMode::Untrusted => (0..m).map(|i| resolved.schedule.variance(i, t)).sum::<f64>() / m as f64,
            TrustMode::Trusted => resolved.schedule.variance(0, t),
        };
        rows.push(RoundRow {
            t,
            loss,
            excess_loss: f_star.filter(|_| cheap).map(|fs| loss - fs),
            eps_norm_sq: eps.as_deref().map(linalg::norm_sq),
            q_tilde_norm: linalg::norm(&q_tilde),
            eta,
            sigma_sq,
        });

        let w = server.trajectory.w.clone();
        server.trajectory.step(&q_tilde, eta, domain)?;

        if let Some(vs) = vectors.as_mut() {
            let s_all: Vec<Vec<f64>> = messages.iter().map(|msg| msg.s.clone().unwrap_or_default()).collect();
            let s_bar_all: Option<Vec<Vec<f64>>> = messages.iter().map(|msg| msg.s_bar.clone()).collect();
            vs.push(RoundVectors {
                t,
                x,
                x_prev,
                w,
                w_next: server.trajectory.w.clone(),
                q: q_avg,
                q_tilde,
                s: aggregate(&s_all, m)?,
                s_bar: s_bar_all.map(|v| aggregate(&v, m)).transpose()?,
                eps,
                grad_at_x,
            });
        }
    }

    // The trajectory has advanced to x_{T+1}; the output is x_T.
    let final_x = server.trajectory.x_prev.clone();
    let final_loss = problem.population_loss(&final_x);
    let metrics = FinalMetrics {
        loss: final_loss,
        excess_loss: f_star.map(|fs| final_loss - fs),
        accuracy: problem.accuracy(&final_x),
    };
    let (g_star, g_star_substituted) = match &minimizer {
        Some(mz) => (mz.grad_norm.min(constants.g()), false),
        None => (constants.g(), true),
    };
    let bound = BoundReport {
        value: theoretical_bound(mode, &constants, g_star, horizon, m, resolved.rho, dim)?,
        g_star,
        g_star_substituted,
    };
    Ok(RunRecord {
        problem: problem.name().to_string(),
        config: config.clone(),
        seed: config.seed,
        sampler: GAUSSIAN_SAMPLER.to_string(),
        eta,
        gradient_evaluations: machines.iter().map(|ms| ms.gradient_evaluations()).sum(),
        metrics,
        privacy: resolved.report,
        bound,
        rows,
        final_x,
        vectors,
    })
}

/// JSON sidecar: `echo` replaces the config section when the caller has a
/// richer configuration to reproduce.
pub fn result_json(record: &RunRecord, echo: Option<&serde_json::Value>) -> Result<String> {
    let mut value = serde_json::to_value(record)?;
    if let Some(e) = echo {
        value["config"] = e.clone();
    }
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

/// Writes `trace.csv` and `result.json` into `dir`, creating it if needed.
pub fn write_outputs(record: &RunRecord, dir: &Path, echo: Option<&serde_json::Value>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let trace = fs::File::create(dir.join("trace.csv"))?;
    record::write_trace_csv(&record.rows, std::io::BufWriter::new(trace))?;
    let mut json = fs::File::create(dir.join("result.json"))?;
    json.write_all(result_json(record, echo)?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::QuadraticProblem;

    #[test]
    fn learning_rate_examples() {
        let eta = learning_rate(TrustMode::Untrusted, 4.0, 0.1, 100, 118.1, 600, 7850, 392.5).unwrap();
        let privacy_branch = 4.0 * 0.1 * 10.0 / (2.0 * 118.1 * 600.0 * 7850f64.sqrt());
        assert_eq!(eta, privacy_branch);
        assert!((eta - 3.19e-7).abs() < 0.01e-7);
        let smooth = learning_rate(TrustMode::Untrusted, 4.0, 0.1, 100, 118.1, 600, 7850, 1e12).unwrap();
        assert_eq!(smooth, 1.0 / (4.0 * 1e12 * 600.0));
        let tr = learning_rate(TrustMode::Trusted, 4.0, 0.1, 100, 118.1, 600, 7850, 392.5).unwrap();
        assert_eq!(tr, 1.0 / (4.0 * 392.5 * 600.0));
        let un = learning_rate(TrustMode::Untrusted, 4.0, 0.1, 100, 118.1, 600, 7850, 1.0).unwrap();
        let tr = learning_rate(TrustMode::Trusted, 4.0, 0.1, 100, 118.1, 600, 7850, 1.0).unwrap();
        assert!((tr / un - 10.0).abs() < 1e-12);
        let noiseless = learning_rate(TrustMode::Trusted, f64::INFINITY, 1.0, 3, 2.0, 10, 4, 1.0).unwrap();
        assert_eq!(noiseless, 1.0 / 40.0);
        assert!(learning_rate(TrustMode::Trusted, 0.0, 1.0, 3, 2.0, 10, 4, 1.0).is_err());
    }

    #[test]
    fn bound_examples() {
        let c = ProblemConstants::new(1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(c.s(), 3.0);
        let b = theoretical_bound(TrustMode::Untrusted, &c, 1.0, 100, 4, 2.0, 9).unwrap();
        assert!((b - 0.5).abs() < 1e-12);
        let tr = theoretical_bound(TrustMode::Trusted, &c, 1.0, 100, 4, 2.0, 9).unwrap();
        assert!(tr < b);
        let one_u = theoretical_bound(TrustMode::Untrusted, &c, 1.0, 100, 1, 2.0, 9).unwrap();
        let one_t = theoretical_bound(TrustMode::Trusted, &c, 1.0, 100, 1, 2.0, 9).unwrap();
        assert_eq!(one_u, one_t);
        let det = ProblemConstants::new(1.0, 1.0, 0.0, 0.0, 1.0).unwrap();
        let b = theoretical_bound(TrustMode::Untrusted, &det, 0.5, 10, 1, f64::INFINITY, 3).unwrap();
        assert!((b - 4.0 * 2.5 / 10.0).abs() < 1e-15);
        assert!(theoretical_bound(TrustMode::Untrusted, &c, 1.5, 100, 4, 2.0, 9).is_err());
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[vec![1.0, -2.0]], 1).unwrap(), vec![1.0, -2.0]);
        assert_eq!(aggregate(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap(), vec![0.5, 0.5]);
        assert!(aggregate(&[vec![1.0]], 2).is_err());
        assert!(aggregate(&[vec![1.0], vec![1.0, 2.0]], 2).is_err());
    }

    #[test]
    fn first_machine_round_returns_first_gradient() {
        let p = QuadraticProblem::new(3, 1, 0.0, 0.3, 4).unwrap();
        let data = p.datasets(1, 3, 5).unwrap().remove(0);
        let z = data.get(1).unwrap().clone();
        let mut ms = MachineState::new(3, data, None);
        let x = vec![0.1, 0.2, 0.3];
        let msg = ms.machine_round(&p, &x, &x, false).unwrap();
        assert_eq!(msg.sent, p.grad(&x, &z));
        assert_eq!(ms.round(), 1);
        assert_eq!(ms.gradient_evaluations(), 2);
    }

    #[test]
    fn replaying_a_round_from_a_snapshot_is_identical() {
        let p = QuadraticProblem::new(3, 1, 0.0, 0.3, 4).unwrap();
        let data = p.datasets(1, 5, 5).unwrap().remove(0);
        let mut ms = MachineState::new(3, data, Some((seed::machine_noise(2, 0), vec![0.5; 5])));
        let x = vec![0.0; 3];
        ms.machine_round(&p, &x, &x, false).unwrap();
        let mut copy = ms.clone();
        let y = vec![0.1, 0.0, -0.1];
        let a = ms.machine_round(&p, &y, &x, false).unwrap();
        let b = copy.machine_round(&p, &y, &x, false).unwrap();
        assert_eq!(a.sent, b.sent);
        assert_ne!(a.sent, a.q);
    }

    #[test]
    fn mode_helpers_check_mode() {
        let p = QuadraticProblem::new(2, 1, 0.0, 0.1, 1).unwrap();
        let c = FederatedConfig::new(TrustMode::Trusted, 1, 5, PrivacySpec::None, 0);
        assert!(run_untrusted(&p, &c, &RunOptions::default()).is_err());
        assert!(run_trusted(&p, &c, &RunOptions::default()).is_ok());
    }

    #[test]
    fn counts_two_gradients_per_machine_round() {
        let p = QuadraticProblem::new(2, 3, 0.2, 0.1, 1).unwrap();
        let c = FederatedConfig::new(TrustMode::Untrusted, 3, 7, PrivacySpec::Rho { rho: 2.0 }, 0);
        let r = run(&p, &c, &RunOptions::default()).unwrap();
        assert_eq!(r.gradient_evaluations, 2 * 3 * 7);
        assert_eq!(r.rows.len(), 7);
        assert!(r.rows.iter().all(|row| row.loss.is_finite() && row.q_tilde_norm.is_finite()));
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut c = FederatedConfig::new(TrustMode::Trusted, 2, 3, PrivacySpec::Rho { rho: 1.5 }, 11);
        c.eta = Some(0.01);
        let back: FederatedConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let sched = NoiseSchedule::constant(TrustMode::Trusted, 2, 3, 1.0).unwrap();
        let c = FederatedConfig::new(TrustMode::Trusted, 2, 3, PrivacySpec::Schedule { schedule: sched }, 1);
        let back: FederatedConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
