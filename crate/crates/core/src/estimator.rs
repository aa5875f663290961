//! Anytime averaging, corrected-momentum (STORM) estimates, and projected
//! online gradient steps, composed into single-machine (Noisy-)mu^2-SGD.
//!
//! Weights follow `alpha_t = t`, `beta_t = 1/t`, so `(1 - beta_{t+1}) alpha_{t+1}
//! = alpha_t` and the weighted estimate `q_t = alpha_t d_t` obeys
//! `q_{t+1} = q_t + g_{t+1} + alpha_t (g_{t+1} - g~_t)`.

use rand::Rng;

use crate::error::{check_dim, check_positive, invalid, Error, Result};
use crate::geometry::ConvexDomain;
use crate::linalg;
use crate::privacy::gaussian_sample;
use crate::problems::{Dataset, Objective};
use crate::record::{RoundRow, RoundVectors};

/// Importance and momentum weights plus the step size for a horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    horizon: usize,
    eta: f64,
}

impl Schedule {
    pub fn new(horizon: usize, eta: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        check_positive("eta", eta)?;
        Ok(Self { horizon, eta })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `alpha_t = t`
    pub fn alpha(t: usize) -> f64 {
        t as f64
    }

    /// `alpha_{1:t} = t(t+1)/2`, exact in integers before conversion.
    pub fn alpha_sum(t: usize) -> f64 {
        let t = t as u128;
        (t * (t + 1) / 2) as f64
    }

    /// `beta_t = 1/t`; `beta_0` is taken as 1.
    pub fn beta(t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            1.0 / t as f64
        }
    }

    /// Weight `alpha_{t+1} / alpha_{1:t+1}` that the average puts on `w_{t+1}`.
    pub fn averaging_weight(t: usize) -> f64 {
        Self::alpha(t + 1) / Self::alpha_sum(t + 1)
    }
}

/// `d_t = g_t + (1 - beta_t)(d_{t-1} - g~_{t-1})`.
pub fn storm_update(d_prev: &[f64], g_curr: &[f64], g_tilde_prev: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_dim(g_curr.len(), d_prev.len())?;
    check_dim(g_curr.len(), g_tilde_prev.len())?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid("beta", format!("must lie in [0, 1], got {beta}")));
    }
    let keep = 1.0 - beta;
    Ok(g_curr
        .iter()
        .zip(d_prev)
        .zip(g_tilde_prev)
        .map(|((g, d), gt)| g + keep * (d - gt))
        .collect())
}

/// `q_{t+1} = q_t + g_{t+1} + alpha_t (g_{t+1} - g~_t)`, with `alpha_prev = alpha_t`.
pub fn q_step(q_prev: &[f64], g_curr: &[f64], g_tilde_prev: &[f64], alpha_prev: f64) -> Result<Vec<f64>> {
    check_dim(g_curr.len(), q_prev.len())?;
    let s = increment(g_curr, g_tilde_prev, alpha_prev)?;
    Ok(q_prev.iter().zip(&s).map(|(q, s)| q + s).collect())
}

/// Per-sample increment `s_t = g_t + alpha_{t-1} (g_t - g~_{t-1})`.
pub fn increment(g_curr: &[f64], g_tilde_prev: &[f64], alpha_prev: f64) -> Result<Vec<f64>> {
    check_dim(g_curr.len(), g_tilde_prev.len())?;
    if !(alpha_prev.is_finite() && alpha_prev >= 0.0) {
        return Err(invalid("alpha_prev", format!("must be finite and non-negative, got {alpha_prev}")));
    }
    Ok(g_curr
        .iter()
        .zip(g_tilde_prev)
        .map(|(g, gt)| g + alpha_prev * (g - gt))
        .collect())
}

/// `x_{t+1} = (1 - a) x_t + a w_{t+1}` with `a = alpha_{t+1} / alpha_{1:t+1}`.
pub fn anytime_average(x_curr: &[f64], w_next: &[f64], t: usize) -> Result<Vec<f64>> {
    check_dim(x_curr.len(), w_next.len())?;
    if t == 0 {
        return Err(invalid("t", "rounds start at 1"));
    }
    let a = Schedule::averaging_weight(t);
    Ok(x_curr
        .iter()
        .zip(w_next)
        .map(|(x, w)| (1.0 - a) * x + a * w)
        .collect())
}

/// `w_{t+1} = Proj(w_t - eta q~_t)`.
pub fn ogd_step(w_curr: &[f64], q_tilde: &[f64], eta: f64, domain: &ConvexDomain) -> Result<Vec<f64>> {
    check_dim(domain.dim(), w_curr.len())?;
    check_dim(domain.dim(), q_tilde.len())?;
    check_positive("eta", eta)?;
    let mut w: Vec<f64> = w_curr.iter().zip(q_tilde).map(|(w, q)| w - eta * q).collect();
    domain.project_in_place(&mut w);
    Ok(w)
}

/// Corrected-momentum state `(d_t, q_t = alpha_t d_t)` of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    d: Vec<f64>,
    q: Vec<f64>,
    t: usize,
}

impl EstimatorState {
    /// `d_0 = 0`.
    pub fn new(dim: usize) -> Self {
        Self {
            d: vec![0.0; dim],
            q: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn round(&self) -> usize {
        self.t
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Consumes `g_t = grad f(x_t; z_t)` and `g~_{t-1} = grad f(x_{t-1}; z_t)`.
    pub fn advance(&mut self, g_curr: &[f64], g_tilde_prev: &[f64]) -> Result<&[f64]> {
        let t = self.t + 1;
        self.d = storm_update(&self.d, g_curr, g_tilde_prev, Schedule::beta(t))?;
        let alpha = Schedule::alpha(t);
        for (q, d) in self.q.iter_mut().zip(&self.d) {
            *q = alpha * d;
        }
        self.t = t;
        Ok(&self.q)
    }
}

/// Iterate `w_t`, query point `x_t` and previous query `x_{t-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub w: Vec<f64>,
    pub x: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub t: usize,
}

impl TrajectoryState {
    /// `w_1 = x_1`, `x_0 = x_1`; `x_1` must be feasible.
    pub fn start(domain: &ConvexDomain, x1: Vec<f64>) -> Result<Self> {
        check_dim(domain.dim(), x1.len())?;
        if !linalg::all_finite(&x1) || !domain.contains(&x1, 1e-12) {
            return Err(invalid("x1", "starting point must be finite and feasible"));
        }
        Ok(Self {
            w: x1.clone(),
            x_prev: x1.clone(),
            x: x1,
            t: 1,
        })
    }

    /// Applies one OGD step with `q~_t` and re-averages; returns `w_{t+1}`.
    pub fn step(&mut self, q_tilde: &[f64], eta: f64, domain: &ConvexDomain) -> Result<&[f64]> {
        let w_next = ogd_step(&self.w, q_tilde, eta, domain)?;
        if !linalg::all_finite(&w_next) {
            return Err(Error::NonFinite {
                what: "iterate w",
                round: self.t,
            });
        }
        let x_next = anytime_average(&self.x, &w_next, self.t)?;
        self.x_prev = std::mem::replace(&mut self.x, x_next);
        self.w = w_next;
        self.t += 1;
        Ok(&self.w)
    }
}

/// Output of a single-machine run.
#[derive(Debug, Clone)]
pub struct SingleRun {
    pub rows: Vec<RoundRow>,
    /// The last query point `x_T`.
    pub final_x: Vec<f64>,
    pub vectors: Option<Vec<RoundVectors>>,
}

/// Runs mu^2-SGD on machine data `dataset` from `x1`. With `noise_variances`,
/// each round adds `N(0, sigma_t^2 I)` to `q_t` before the step (Noisy-mu^2-SGD).
pub fn run_mu2_sgd<P: Objective, R: Rng + ?Sized>(
    problem: &P,
    dataset: &Dataset<P::Payload>,
    x1: Vec<f64>,
    schedule: &Schedule,
    noise_variances: Option<&[f64]>,
    rng: &mut R,
    record_vectors: bool,
) -> Result<SingleRun> {
    let horizon = schedule.horizon();
    if dataset.len() < horizon {
        return Err(Error::DatasetExhausted {
            machine: dataset.machine,
            round: dataset.len() + 1,
        });
    }
    if let Some(v) = noise_variances {
        if v.len() != horizon {
            return Err(invalid("noise_variances", format!("need {horizon} entries, got {}", v.len())));
        }
    }
    let domain = problem.domain();
    let dim = problem.dim();
    let f_star = problem.minimizer().map(|m| m.value);
    let mut traj = TrajectoryState::start(domain, x1)?;
    let mut est = EstimatorState::new(dim);
    let mut g = vec![0.0; dim];
    let mut g_tilde = vec![0.0; dim];
    let mut rows = Vec::with_capacity(horizon);
    let mut vectors = record_vectors.then(Vec::new);

    for t in 1..=horizon {
        let z = dataset.get(t)?;
        problem.grad_into(&traj.x, z, &mut g);
        problem.grad_into(&traj.x_prev, z, &mut g_tilde);
        let q = est.advance(&g, &g_tilde)?.to_vec();

        let sigma_sq = noise_variances.map_or(0.0, |v| v[t - 1]);
        let q_tilde = if sigma_sq > 0.0 {
            let y = gaussian_sample(dim, sigma_sq, rng)?;
            q.iter().zip(&y).map(|(a, b)| a + b).collect()
        } else {
            q.clone()
        };

        let loss = if problem.cheap_population_loss() {
            problem.population_loss(&traj.x)
        } else {
            problem.loss(&traj.x, z)
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", round: t });
        }
        let grad_at_x = problem.machine_grad(dataset.machine, &traj.x);
        let eps = grad_at_x.as_ref().map(|gx| {
            let a = Schedule::alpha(t);
            q.iter().zip(gx).map(|(q, g)| q - a * g).collect::<Vec<f64>>()
        });
        rows.push(RoundRow {
            t,
            loss,
            excess_loss: f_star.filter(|_| problem.cheap_population_loss()).map(|fs| loss - fs),
            eps_norm_sq: eps.as_deref().map(linalg::norm_sq),
            q_tilde_norm: linalg::norm(&q_tilde),
            eta: schedule.eta(),
            sigma_sq,
        });

        let x = traj.x.clone();
        let x_prev = traj.x_prev.clone();
        let w = traj.w.clone();
        traj.step(&q_tilde, schedule.eta(), domain)?;

        if let Some(vs) = vectors.as_mut() {
            let alpha_prev = Schedule::alpha(t - 1);
            let s = increment(&g, &g_tilde, alpha_prev)?;
            let s_bar = match (&grad_at_x, problem.machine_grad(dataset.machine, &x_prev)) {
                (Some(gx), Some(gp)) => Some(increment(gx, &gp, alpha_prev)?),
                _ => None,
            };
            vs.push(RoundVectors {
                t,
                x,
                x_prev,
                w,
                w_next: traj.w.clone(),
                q,
                q_tilde,
                s,
                s_bar,
                eps,
                grad_at_x,
            });
        }
    }

    // `traj.x` now holds x_{T+1}; the output is the last query point x_T.
    let final_x = traj.x_prev.clone();
    Ok(SingleRun {
        rows,
        final_x,
        vectors,
    })
}
