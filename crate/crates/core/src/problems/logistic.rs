use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;

use super::quadratic::random_unit;
use super::{check_machines, check_shape, Dataset, Minimizer, Objective, ProblemConstants, Sample};
use crate::error::{invalid, Result};
use crate::geometry::ConvexDomain;
use crate::linalg;
use crate::seed::{self, Purpose};

/// A feature vector with a binary label in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub features: Vec<f64>,
    pub label: f64,
}

/// Binary logistic regression, `f(x; a, y) = log(1 + e^{<x,a>}) - y <x,a>`.
///
/// Each machine's distribution is uniform over a fixed pool of labeled points,
/// so population losses and gradients are exact finite averages. Machine `i`'s
/// features are centered at `heterogeneity * u_i` for a random unit `u_i`, and
/// every feature vector is clipped to norm `feature_radius`.
#[derive(Debug)]
pub struct LogisticProblem {
    dim: usize,
    pools: Vec<Vec<LabeledPoint>>,
    domain: ConvexDomain,
    constants: ProblemConstants,
    feature_radius: f64,
    minimizer: OnceLock<Minimizer>,
}

const DEFAULT_POOL: usize = 200;

impl LogisticProblem {
    /// Unit feature radius, unit domain ball, 200 points per machine.
    pub fn new(dim: usize, machines: usize, heterogeneity: f64, seed: u64) -> Result<Self> {
        Self::with_options(dim, machines, heterogeneity, 1.0, 1.0, DEFAULT_POOL, seed)
    }

    pub fn with_options(
        dim: usize,
        machines: usize,
        heterogeneity: f64,
        feature_radius: f64,
        radius: f64,
        pool_size: usize,
        seed: u64,
    ) -> Result<Self> {
        check_shape(dim, machines)?;
        if !(heterogeneity.is_finite() && heterogeneity >= 0.0) {
            return Err(invalid("heterogeneity", format!("must be finite and non-negative, got {heterogeneity}")));
        }
        if !(feature_radius.is_finite() && feature_radius >= 0.0) {
            return Err(invalid("feature_radius", format!("must be finite and non-negative, got {feature_radius}")));
        }
        if pool_size == 0 {
            return Err(invalid("pool_size", "must be at least 1"));
        }
        let domain = ConvexDomain::origin_ball(dim, radius)?;
        let mut rng = seed::stream(seed, Purpose::Problem, 0);
        let truth = linalg::scale(&random_unit(dim, &mut rng), 3.0);
        let spread = 0.6 * feature_radius / (dim as f64).sqrt();

        let pools = (0..machines)
            .map(|_| {
                let shift = linalg::scale(&random_unit(dim, &mut rng), heterogeneity * feature_radius);
                (0..pool_size)
                    .map(|_| {
                        let mut a: Vec<f64> = shift
                            .iter()
                            .map(|m| m + spread * rng.sample::<f64, _>(StandardNormal))
                            .collect();
                        let n = linalg::norm(&a);
                        if n > feature_radius {
                            a = linalg::scale(&a, feature_radius / n);
                        }
                        let p = sigmoid(linalg::dot(&truth, &a));
                        let label = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                        LabeledPoint { features: a, label }
                    })
                    .collect()
            })
            .collect();

        let g = feature_radius;
        let l = feature_radius * feature_radius / 4.0;
        // E|g - Eg|^2 <= E|g|^2 <= G^2, and likewise sigma_L <= L.
        let constants = ProblemConstants::new(g, l, g, l, domain.diameter())?;
        Ok(Self {
            dim,
            pools,
            domain,
            constants,
            feature_radius,
            minimizer: OnceLock::new(),
        })
    }

    pub fn machines(&self) -> usize {
        self.pools.len()
    }

    pub fn pool(&self, machine: usize) -> &[LabeledPoint] {
        &self.pools[machine]
    }

    pub fn feature_radius(&self) -> f64 {
        self.feature_radius
    }

    pub fn point_loss(x: &[f64], p: &LabeledPoint) -> f64 {
        let m = linalg::dot(x, &p.features);
        softplus(m) - p.label * m
    }

    pub fn point_grad_into(x: &[f64], p: &LabeledPoint, out: &mut [f64]) {
        let c = sigmoid(linalg::dot(x, &p.features)) - p.label;
        for (o, a) in out.iter_mut().zip(&p.features) {
            *o = c * a;
        }
    }

    /// A uniformly random point from machine `machine`'s pool.
    pub fn draw<R: Rng + ?Sized>(&self, machine: usize, rng: &mut R) -> LabeledPoint {
        let pool = &self.pools[machine];
        pool[rng.random_range(0..pool.len())].clone()
    }

    fn solve(&self) -> Minimizer {
        // Accelerated projected gradient on the exact pooled objective.
        let step = 1.0 / self.constants.l().max(1e-12);
        let mut x = vec![0.0; self.dim];
        let mut y = x.clone();
        let mut t = 1.0f64;
        for _ in 0..20_000 {
            let g = self.joint_grad(&y);
            let mut next: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
            self.domain.project_in_place(&mut next);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let moved = linalg::dist(&next, &x);
            y = next
                .iter()
                .zip(&x)
                .map(|(n, o)| n + (t - 1.0) / t_next * (n - o))
                .collect();
            x = next;
            t = t_next;
            if moved < 1e-15 {
                break;
            }
        }
        let g = self.joint_grad(&x);
        Minimizer {
            value: self.population_loss(&x),
            grad_norm: linalg::norm(&g),
            x,
        }
    }

    fn joint_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for i in 0..self.pools.len() {
            linalg::axpy(1.0, &self.machine_grad_exact(i, x), &mut acc);
        }
        linalg::scale(&acc, 1.0 / self.pools.len() as f64)
    }

    fn machine_grad_exact(&self, machine: usize, x: &[f64]) -> Vec<f64> {
        let pool = &self.pools[machine];
        let mut acc = vec![0.0; self.dim];
        let mut buf = vec![0.0; self.dim];
        for p in pool {
            Self::point_grad_into(x, p, &mut buf);
            linalg::axpy(1.0, &buf, &mut acc);
        }
        linalg::scale(&acc, 1.0 / pool.len() as f64)
    }
}

pub(crate) fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

fn softplus(m: f64) -> f64 {
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

impl Objective for LogisticProblem {
    type Payload = LabeledPoint;

    fn name(&self) -> &'static str {
        "logistic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn domain(&self) -> &ConvexDomain {
        &self.domain
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn loss(&self, x: &[f64], z: &Sample<LabeledPoint>) -> f64 {
        Self::point_loss(x, &z.payload)
    }

    fn grad_into(&self, x: &[f64], z: &Sample<LabeledPoint>, out: &mut [f64]) {
        Self::point_grad_into(x, &z.payload, out)
    }

    fn machine_grad(&self, machine: usize, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.machine_grad_exact(machine, x))
    }

    fn population_grad(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.joint_grad(x))
    }

    fn population_loss(&self, x: &[f64]) -> f64 {
        let per_machine: f64 = self
            .pools
            .iter()
            .map(|pool| pool.iter().map(|p| Self::point_loss(x, p)).sum::<f64>() / pool.len() as f64)
            .sum();
        per_machine / self.pools.len() as f64
    }

    fn accuracy(&self, x: &[f64]) -> Option<f64> {
        let (hits, total) = self.pools.iter().flatten().fold((0usize, 0usize), |(h, n), p| {
            let guess = if linalg::dot(x, &p.features) >= 0.0 { 1.0 } else { 0.0 };
            (h + usize::from(guess == p.label), n + 1)
        });
        Some(hits as f64 / total as f64)
    }

    fn minimizer(&self) -> Option<Minimizer> {
        Some(self.minimizer.get_or_init(|| self.solve()).clone())
    }

    fn datasets(&self, machines: usize, horizon: usize, seed: u64) -> Result<Vec<Dataset<LabeledPoint>>> {
        check_machines(self.machines(), machines)?;
        Ok((0..machines)
            .map(|i| {
                let mut rng = seed::machine_data(seed, i);
                Dataset::from_payloads(i, (0..horizon).map(|_| self.draw(i, &mut rng)))
            })
            .collect())
    }
}
