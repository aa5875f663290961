use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_machines, check_shape, Dataset, Minimizer, Objective, ProblemConstants, Sample};
use crate::error::{invalid, Result};
use crate::geometry::ConvexDomain;
use crate::linalg;
use crate::seed::{self, Purpose};

/// `f_i(x; z) = 1/2 |x - (c_i + z)|^2` over an origin-centered ball.
///
/// The noise `z` is uniform on the cube `[-a, a]^d` with `a = noise_level / sqrt(d)`,
/// so `|z| <= noise_level` and `E|z|^2 = noise_level^2 / 3`. Machine centers
/// satisfy `|c_i - c_bar| <= heterogeneity`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    dim: usize,
    centers: Vec<Vec<f64>>,
    mean_center: Vec<f64>,
    noise_level: f64,
    heterogeneity: f64,
    domain: ConvexDomain,
    constants: ProblemConstants,
    minimizer: Minimizer,
}

impl QuadraticProblem {
    /// Unit ball, mean center at distance 1.5 from the origin (outside the ball).
    pub fn new(
        dim: usize,
        machines: usize,
        heterogeneity: f64,
        noise_level: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::with_geometry(dim, machines, heterogeneity, noise_level, 1.0, 1.5, seed)
    }

    /// Full constructor: `radius` of the feasible ball and `center_norm = |c_bar|`.
    pub fn with_geometry(
        dim: usize,
        machines: usize,
        heterogeneity: f64,
        noise_level: f64,
        radius: f64,
        center_norm: f64,
        seed: u64,
    ) -> Result<Self> {
        check_shape(dim, machines)?;
        for (name, v) in [
            ("heterogeneity", heterogeneity),
            ("noise_level", noise_level),
            ("center_norm", center_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be finite and non-negative, got {v}")));
            }
        }
        let domain = ConvexDomain::origin_ball(dim, radius)?;
        let mut rng = seed::stream(seed, Purpose::Problem, 0);

        let direction = random_unit(dim, &mut rng);
        let target = linalg::scale(&direction, center_norm);

        let mut offsets: Vec<Vec<f64>> = (0..machines)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mean_offset: Vec<f64> = (0..dim)
            .map(|k| offsets.iter().map(|o| o[k]).sum::<f64>() / machines as f64)
            .collect();
        for o in &mut offsets {
            linalg::axpy(-1.0, &mean_offset, o);
        }
        let widest = offsets.iter().map(|o| linalg::norm(o)).fold(0.0, f64::max);
        let shrink = if widest > 0.0 { heterogeneity / widest } else { 0.0 };
        let centers: Vec<Vec<f64>> = offsets
            .iter()
            .map(|o| target.iter().zip(o).map(|(t, oi)| t + shrink * oi).collect())
            .collect();
        let mean_center: Vec<f64> = (0..dim)
            .map(|k| centers.iter().map(|c| c[k]).sum::<f64>() / machines as f64)
            .collect();

        let max_center = centers.iter().map(|c| linalg::norm(c)).fold(0.0, f64::max);
        let g = radius + max_center + noise_level;
        let constants = ProblemConstants::new(g, 1.0, noise_level, 0.0, domain.diameter())?;

        let x_star = domain.project(&mean_center)?;
        let mut problem = Self {
            dim,
            centers,
            mean_center,
            noise_level,
            heterogeneity,
            domain,
            constants,
            minimizer: Minimizer {
                x: Vec::new(),
                value: 0.0,
                grad_norm: 0.0,
            },
        };
        problem.minimizer = Minimizer {
            value: problem.population_loss(&x_star),
            grad_norm: linalg::dist(&x_star, &problem.mean_center),
            x: x_star,
        };
        Ok(problem)
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn mean_center(&self) -> &[f64] {
        &self.mean_center
    }

    pub fn noise_level(&self) -> f64 {
        self.noise_level
    }

    pub fn heterogeneity(&self) -> f64 {
        self.heterogeneity
    }

    pub fn machines(&self) -> usize {
        self.centers.len()
    }

    /// One noise draw `z`.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let a = self.noise_level / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| {
                if a == 0.0 {
                    0.0
                } else {
                    rng.random_range(-a..=a)
                }
            })
            .collect()
    }

    /// `E|z|^2`.
    pub fn noise_second_moment(&self) -> f64 {
        self.noise_level * self.noise_level / 3.0
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = linalg::norm(&v);
        if n > 1e-12 {
            return linalg::scale(&v, 1.0 / n);
        }
    }
}

impl Objective for QuadraticProblem {
    type Payload = Vec<f64>;

    fn name(&self) -> &'static str {
        "quadratic"
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

    fn loss(&self, x: &[f64], z: &Sample<Vec<f64>>) -> f64 {
        let c = &self.centers[z.machine];
        0.5 * x
            .iter()
            .zip(c)
            .zip(&z.payload)
            .map(|((xi, ci), zi)| (xi - ci - zi).powi(2))
            .sum::<f64>()
    }

    fn grad_into(&self, x: &[f64], z: &Sample<Vec<f64>>, out: &mut [f64]) {
        let c = &self.centers[z.machine];
        for (k, o) in out.iter_mut().enumerate() {
            *o = x[k] - c[k] - z.payload[k];
        }
    }

    fn machine_grad(&self, machine: usize, x: &[f64]) -> Option<Vec<f64>> {
        Some(linalg::sub(x, &self.centers[machine]))
    }

    fn population_grad(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(linalg::sub(x, &self.mean_center))
    }

    fn population_loss(&self, x: &[f64]) -> f64 {
        let m = self.centers.len() as f64;
        let spread: f64 = self.centers.iter().map(|c| linalg::norm_sq(&linalg::sub(x, c))).sum();
        0.5 * spread / m + 0.5 * self.noise_second_moment()
    }

    fn minimizer(&self) -> Option<Minimizer> {
        Some(self.minimizer.clone())
    }

    fn datasets(&self, machines: usize, horizon: usize, seed: u64) -> Result<Vec<Dataset<Vec<f64>>>> {
        check_machines(self.machines(), machines)?;
        Ok((0..machines)
            .map(|i| {
                let mut rng = seed::machine_data(seed, i);
                Dataset::from_payloads(i, (0..horizon).map(|_| self.draw_noise(&mut rng)))
            })
            .collect())
    }
}
