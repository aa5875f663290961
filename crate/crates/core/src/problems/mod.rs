//! Stochastic convex objectives, their data, and certified constants.

mod idx;
mod logistic;
mod mnist;
mod quadratic;

pub use idx::{read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxImages};
pub use logistic::{LabeledPoint, LogisticProblem};
pub use mnist::{MnistData, MnistProblem, MNIST_BALL_DIAMETER, MNIST_FEATURES};
pub use quadratic::QuadraticProblem;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::ConvexDomain;
use crate::seed::{self, Purpose};

/// Lipschitz, smoothness, and variance bounds of a problem family.
///
/// `S = G + 2LD` bounds each q-increment; `sigma_tilde = sigma + 2 sigma_L D`
/// bounds its deviation from the population increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstants")]
pub struct ProblemConstants {
    g: f64,
    l: f64,
    sigma: f64,
    sigma_l: f64,
    diameter: f64,
    s: f64,
    sigma_tilde: f64,
}

#[derive(Deserialize)]
struct RawConstants {
    g: f64,
    l: f64,
    sigma: f64,
    sigma_l: f64,
    diameter: f64,
}

impl TryFrom<RawConstants> for ProblemConstants {
    type Error = Error;

    fn try_from(r: RawConstants) -> Result<Self> {
        Self::new(r.g, r.l, r.sigma, r.sigma_l, r.diameter)
    }
}

impl ProblemConstants {
    pub fn new(g: f64, l: f64, sigma: f64, sigma_l: f64, diameter: f64) -> Result<Self> {
        for (name, v) in [
            ("G", g),
            ("L", l),
            ("sigma", sigma),
            ("sigma_L", sigma_l),
            ("D", diameter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be finite and non-negative, got {v}")));
            }
        }
        if diameter <= 0.0 {
            return Err(invalid("D", "must be positive"));
        }
        if sigma > g {
            return Err(invalid("sigma", format!("must not exceed G={g}, got {sigma}")));
        }
        if sigma_l > l {
            return Err(invalid("sigma_L", format!("must not exceed L={l}, got {sigma_l}")));
        }
        Ok(Self {
            g,
            l,
            sigma,
            sigma_l,
            diameter,
            s: g + 2.0 * l * diameter,
            sigma_tilde: sigma + 2.0 * sigma_l * diameter,
        })
    }

    pub fn g(&self) -> f64 {
        self.g
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn sigma_l(&self) -> f64 {
        self.sigma_l
    }
    pub fn diameter(&self) -> f64 {
        self.diameter
    }
    /// Increment bound `G + 2LD`.
    pub fn s(&self) -> f64 {
        self.s
    }
    /// Increment deviation bound `sigma + 2 sigma_L D`.
    pub fn sigma_tilde(&self) -> f64 {
        self.sigma_tilde
    }
}

/// One datum, tagged with the machine that owns it and the round that consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<P> {
    pub machine: usize,
    pub round: usize,
    pub payload: P,
}

/// The ordered samples one machine consumes, one per round.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<P> {
    pub machine: usize,
    samples: Vec<Sample<P>>,
}

impl<P> Dataset<P> {
    /// Builds a dataset from payloads in round order (round numbers start at 1).
    pub fn from_payloads(machine: usize, payloads: impl IntoIterator<Item = P>) -> Self {
        let samples = payloads
            .into_iter()
            .enumerate()
            .map(|(k, payload)| Sample {
                machine,
                round: k + 1,
                payload,
            })
            .collect();
        Self { machine, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample consumed at `round` (1-based).
    pub fn get(&self, round: usize) -> Result<&Sample<P>> {
        round
            .checked_sub(1)
            .and_then(|k| self.samples.get(k))
            .ok_or(Error::DatasetExhausted {
                machine: self.machine,
                round,
            })
    }

    pub fn samples(&self) -> &[Sample<P>] {
        &self.samples
    }

    /// Replaces the payload consumed at `round`.
    pub fn replace(&mut self, round: usize, payload: P) -> Result<()> {
        let machine = self.machine;
        let slot = round
            .checked_sub(1)
            .and_then(|k| self.samples.get_mut(k))
            .ok_or(Error::DatasetExhausted { machine, round })?;
        slot.payload = payload;
        Ok(())
    }
}

/// Constrained minimizer of the population objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Minimizer {
    pub x: Vec<f64>,
    pub value: f64,
    /// `G* = |grad f(x*)|`.
    pub grad_norm: f64,
}

/// A federated stochastic convex objective `f(x) = (1/M) sum_i E f_i(x; z)`.
pub trait Objective: Send + Sync {
    type Payload: Clone + Send + Sync + std::fmt::Debug;

    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn domain(&self) -> &ConvexDomain;

    fn constants(&self) -> &ProblemConstants;

    fn loss(&self, x: &[f64], z: &Sample<Self::Payload>) -> f64;

    /// Writes `grad f_i(x; z)` into `out`.
    fn grad_into(&self, x: &[f64], z: &Sample<Self::Payload>, out: &mut [f64]);

    fn grad(&self, x: &[f64], z: &Sample<Self::Payload>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.grad_into(x, z, &mut out);
        out
    }

    /// Population gradient of machine `machine`'s objective, when known exactly.
    fn machine_grad(&self, _machine: usize, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Population gradient of the joint objective, when known exactly.
    fn population_grad(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Population loss (or held-out loss when the population is unknown).
    fn population_loss(&self, x: &[f64]) -> f64;

    /// Whether `population_loss` is cheap enough to evaluate every round.
    fn cheap_population_loss(&self) -> bool {
        true
    }

    /// Classification accuracy, for problems where it is meaningful.
    fn accuracy(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    fn minimizer(&self) -> Option<Minimizer> {
        None
    }

    /// Per-machine datasets of length `horizon`, deterministic in `seed`.
    fn datasets(
        &self,
        machines: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<Vec<Dataset<Self::Payload>>>;
}

/// Splits `full` into `machines` disjoint datasets of `horizon` samples each,
/// following a permutation drawn from `seed`.
pub fn shard<P: Clone>(
    full: &[P],
    machines: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Dataset<P>>> {
    if machines == 0 || horizon == 0 {
        return Err(invalid("machines", "M and T must both be at least 1"));
    }
    let needed = machines
        .checked_mul(horizon)
        .ok_or_else(|| invalid("horizon", "M*T overflows"))?;
    if needed > full.len() {
        return Err(Error::InsufficientSamples {
            needed,
            available: full.len(),
        });
    }
    let mut order: Vec<usize> = (0..full.len()).collect();
    order.shuffle(&mut seed::stream(seed, Purpose::Shard, 0));
    Ok(order[..needed]
        .chunks(horizon)
        .enumerate()
        .map(|(i, chunk)| Dataset::from_payloads(i, chunk.iter().map(|&k| full[k].clone())))
        .collect())
}

pub(crate) fn check_shape(dim: usize, machines: usize) -> Result<()> {
    if dim == 0 {
        return Err(invalid("dim", "must be at least 1"));
    }
    if machines == 0 {
        return Err(invalid("machines", "must be at least 1"));
    }
    Ok(())
}

pub(crate) fn check_machines(expected: usize, requested: usize) -> Result<()> {
    if expected == requested {
        Ok(())
    } else {
        Err(invalid(
            "machines",
            format!("problem was built for {expected} machines, {requested} requested"),
        ))
    }
}
