//! Renyi-DP accounting for Gaussian noise, conversion to (epsilon, delta)-DP,
//! and noise calibration for both trust modes.
//!
//! Every mechanism here is `(alpha, alpha rho^2 / 2)`-RDP for all `alpha > 1`,
//! so a guarantee is summarized by the single scale `rho`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, invalid, Error, Result};

/// Identifies the Gaussian sampler so recorded runs can be reproduced.
pub const GAUSSIAN_SAMPLER: &str = "chacha20-stream/rand_distr-0.5-StandardNormal-ziggurat";

/// Who is trusted with raw gradient estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrustMode {
    /// Each machine privatizes its own message.
    Untrusted,
    /// The server privatizes the aggregate before publishing queries.
    Trusted,
}

impl TrustMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Untrusted => "untrusted",
            Self::Trusted => "trusted",
        }
    }

    /// What the guarantee protects in this mode.
    pub fn protected_object(&self) -> &'static str {
        match self {
            Self::Untrusted => "per-machine message sequence {q~_{t,i}}",
            Self::Trusted => "server query and estimate sequences {x_t}, {q~_t}",
        }
    }
}

impl std::str::FromStr for TrustMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "untrusted" => Ok(Self::Untrusted),
            "trusted" => Ok(Self::Trusted),
            other => Err(invalid("mode", format!("expected `trusted` or `untrusted`, got `{other}`"))),
        }
    }
}

/// The linear RDP curve `epsilon(alpha) = alpha rho^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub rho: f64,
}

impl RdpCurve {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(invalid("rho", format!("must be finite and non-negative, got {rho}")));
        }
        Ok(Self { rho })
    }

    pub fn epsilon(&self, alpha: f64) -> f64 {
        alpha * self.rho * self.rho / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpGuarantee {
    pub epsilon: f64,
    pub delta: f64,
}

/// Per-round L2 sensitivity of the privatized vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivityBound {
    pub per_round_delta: f64,
}

impl SensitivityBound {
    /// `2S` for a machine's own estimate, `2S/M` for the server aggregate.
    pub fn new(mode: TrustMode, s: f64, machines: usize) -> Result<Self> {
        check_positive("S", s)?;
        if machines == 0 {
            return Err(invalid("machines", "must be at least 1"));
        }
        let per_round_delta = match mode {
            TrustMode::Untrusted => 2.0 * s,
            TrustMode::Trusted => 2.0 * s / machines as f64,
        };
        Ok(Self { per_round_delta })
    }
}

/// Gaussian noise variances for one run.
///
/// Untrusted schedules hold one row of `T` variances per machine; trusted
/// schedules hold a single row for the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct NoiseSchedule {
    mode: TrustMode,
    machines: usize,
    variances: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawSchedule {
    mode: TrustMode,
    machines: usize,
    variances: Vec<Vec<f64>>,
}

impl TryFrom<RawSchedule> for NoiseSchedule {
    type Error = Error;

    fn try_from(r: RawSchedule) -> Result<Self> {
        Self::new(r.mode, r.machines, r.variances)
    }
}

impl NoiseSchedule {
    pub fn new(mode: TrustMode, machines: usize, variances: Vec<Vec<f64>>) -> Result<Self> {
        if machines == 0 {
            return Err(invalid("machines", "must be at least 1"));
        }
        let rows = match mode {
            TrustMode::Untrusted => machines,
            TrustMode::Trusted => 1,
        };
        if variances.len() != rows {
            return Err(invalid("variances", format!("{} mode needs {rows} rows, got {}", mode.as_str(), variances.len())));
        }
        let horizon = variances[0].len();
        if horizon == 0 || variances.iter().any(|r| r.len() != horizon) {
            return Err(invalid("variances", "rows must be non-empty and of equal length"));
        }
        if variances.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("variances", "entries must be finite and non-negative"));
        }
        let zeros = variances.iter().flatten().filter(|v| **v == 0.0).count();
        if zeros != 0 && zeros != rows * horizon {
            return Err(invalid("variances", "must be all positive or uniformly zero"));
        }
        Ok(Self {
            mode,
            machines,
            variances,
        })
    }

    pub fn constant(mode: TrustMode, machines: usize, horizon: usize, sigma_sq: f64) -> Result<Self> {
        let rows = match mode {
            TrustMode::Untrusted => machines,
            TrustMode::Trusted => 1,
        };
        Self::new(mode, machines, vec![vec![sigma_sq; horizon]; rows])
    }

    /// The no-privacy baseline.
    pub fn zero(mode: TrustMode, machines: usize, horizon: usize) -> Result<Self> {
        Self::constant(mode, machines, horizon, 0.0)
    }

    pub fn mode(&self) -> TrustMode {
        self.mode
    }

    pub fn machines(&self) -> usize {
        self.machines
    }

    pub fn horizon(&self) -> usize {
        self.variances[0].len()
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub fn is_zero(&self) -> bool {
        self.variances[0][0] == 0.0
    }

    /// Variance row owned by `machine` (untrusted) or the server (trusted).
    pub fn row(&self, machine: usize) -> &[f64] {
        match self.mode {
            TrustMode::Untrusted => &self.variances[machine],
            TrustMode::Trusted => &self.variances[0],
        }
    }

    /// Variance added in round `t` (1-based) by `machine`, or by the server.
    pub fn variance(&self, machine: usize, t: usize) -> f64 {
        self.row(machine)[t - 1]
    }
}

/// Renyi divergence of order `alpha` between `N(mu, s^2 I)` and `N(mu + delta, s^2 I)`.
pub fn gaussian_renyi(delta_norm: f64, sigma_sq: f64, alpha: f64) -> Result<f64> {
    check_positive("sigma_sq", sigma_sq)?;
    if !(delta_norm.is_finite() && delta_norm >= 0.0) {
        return Err(invalid("delta_norm", format!("must be finite and non-negative, got {delta_norm}")));
    }
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(invalid("alpha", format!("must exceed 1, got {alpha}")));
    }
    Ok(alpha * delta_norm * delta_norm / (2.0 * sigma_sq))
}

/// Adaptive composition at a fixed order: budgets add.
pub fn compose(divergences: &[f64]) -> f64 {
    divergences.iter().sum()
}

/// Privacy scale `rho` for every machine.
///
/// Untrusted: `rho_i = 2S sqrt(sum_t 1/sigma_{t,i}^2)`.
/// Trusted: `rho = (2S/M) sqrt(sum_t 1/sigma_t^2)`, the same for all machines.
pub fn account(schedule: &NoiseSchedule, s: f64) -> Result<Vec<f64>> {
    check_positive("S", s)?;
    if schedule.is_zero() {
        return Err(Error::NoPrivacy);
    }
    let m = schedule.machines();
    let scale = |row: &[f64]| row.iter().map(|v| 1.0 / v).sum::<f64>().sqrt();
    Ok(match schedule.mode() {
        TrustMode::Untrusted => (0..m).map(|i| 2.0 * s * scale(schedule.row(i))).collect(),
        TrustMode::Trusted => vec![2.0 * s / m as f64 * scale(schedule.row(0)); m],
    })
}

/// Constant variance reaching `rho` exactly: `4 S^2 T / rho^2`, divided by `M^2`
/// in trusted mode.
pub fn calibrated_variance(rho: f64, s: f64, horizon: usize, machines: usize, mode: TrustMode) -> Result<f64> {
    check_positive("rho", rho)?;
    check_positive("S", s)?;
    if horizon == 0 || machines == 0 {
        return Err(invalid("horizon", "T and M must be at least 1"));
    }
    let base = 4.0 * s * s * horizon as f64 / (rho * rho);
    Ok(match mode {
        TrustMode::Untrusted => base,
        TrustMode::Trusted => base / (machines as f64 * machines as f64),
    })
}

pub fn calibrate(rho: f64, s: f64, horizon: usize, machines: usize, mode: TrustMode) -> Result<NoiseSchedule> {
    let v = calibrated_variance(rho, s, horizon, machines, mode)?;
    NoiseSchedule::constant(mode, machines, horizon, v)
}

/// `epsilon = rho^2/2 + rho sqrt(2 ln(1/delta))`, the optimum over `alpha` of
/// `alpha rho^2/2 + ln(1/delta)/(alpha - 1)`.
pub fn rdp_to_dp(rho: f64, delta: f64) -> Result<DpGuarantee> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(invalid("rho", format!("must be finite and non-negative, got {rho}")));
    }
    check_delta(delta)?;
    let epsilon = rho * rho / 2.0 + rho * (2.0 * (1.0 / delta).ln()).sqrt();
    Ok(DpGuarantee { epsilon, delta })
}

/// Best conversion over a sampled curve `(alpha, epsilon(alpha))`.
pub fn generic_rdp_to_dp(curve: &[(f64, f64)], delta: f64) -> Result<DpGuarantee> {
    check_delta(delta)?;
    if curve.is_empty() {
        return Err(invalid("curve", "needs at least one (alpha, epsilon) point"));
    }
    let log_term = (1.0 / delta).ln();
    let mut best = f64::INFINITY;
    for &(alpha, eps) in curve {
        if !(alpha.is_finite() && alpha > 1.0 && eps.is_finite() && eps >= 0.0) {
            return Err(invalid("curve", format!("bad point ({alpha}, {eps})")));
        }
        best = best.min(eps + log_term / (alpha - 1.0));
    }
    Ok(DpGuarantee {
        epsilon: best,
        delta,
    })
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid("delta", format!("must lie in (0, 1), got {delta}")))
    }
}

/// `dim` i.i.d. `N(0, sigma_sq)` draws; `sigma_sq = 0` yields zeros without
/// touching the stream.
pub fn gaussian_sample<R: Rng + ?Sized>(dim: usize, sigma_sq: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma_sq.is_finite() && sigma_sq >= 0.0) {
        return Err(invalid("sigma_sq", format!("must be finite and non-negative, got {sigma_sq}")));
    }
    if sigma_sq == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let sd = sigma_sq.sqrt();
    Ok((0..dim).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonAtDelta {
    pub delta: f64,
    pub epsilon: f64,
}

/// Serializable privacy summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub mode: TrustMode,
    pub rho: f64,
    pub rdp_curve: String,
    pub epsilon_at_delta: Vec<EpsilonAtDelta>,
    pub protected: String,
    pub rho_per_machine: Vec<f64>,
}

impl PrivacyReport {
    pub fn new(schedule: &NoiseSchedule, s: f64, deltas: &[f64]) -> Result<Self> {
        let per_machine = account(schedule, s)?;
        let rho = per_machine.iter().cloned().fold(0.0, f64::max);
        let epsilon_at_delta = deltas
            .iter()
            .map(|&d| rdp_to_dp(rho, d).map(|g| EpsilonAtDelta { delta: d, epsilon: g.epsilon }))
            .collect::<Result<_>>()?;
        Ok(Self {
            mode: schedule.mode(),
            rho,
            rdp_curve: "alpha*rho^2/2".to_string(),
            epsilon_at_delta,
            protected: schedule.mode().protected_object().to_string(),
            rho_per_machine: per_machine,
        })
    }
}
