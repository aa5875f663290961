use mu2fl_core::federated::{self, FederatedConfig, PrivacySpec};
use mu2fl_core::geometry::ConvexDomain;
use mu2fl_core::linalg;
use mu2fl_core::privacy::{self, TrustMode};
use mu2fl_core::problems::{Dataset, LogisticProblem, Objective, QuadraticProblem};
use mu2fl_core::seed::{self, Purpose};
use mu2fl_core::verify;
use rand::Rng;
use rand_distr::StandardNormal;

fn rng(index: u32) -> rand_chacha::ChaCha20Rng {
    seed::stream(77, Purpose::Harness, index)
}

fn point_in_ball<R: Rng>(dim: usize, radius: f64, r: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
    let scale = radius * r.random::<f64>().powf(1.0 / dim as f64) / linalg::norm(&v);
    linalg::scale(&v, scale)
}

fn samples<P: Objective>(p: &P, machines: usize, horizon: usize) -> Vec<Dataset<P::Payload>> {
    p.datasets(machines, horizon, 5).unwrap()
}

fn finite_difference_check<P: Objective>(p: &P, machines: usize) {
    let mut r = rng(1);
    let data = samples(p, machines, 20);
    let h = 1e-6;
    for ds in &data {
        for z in ds.samples().iter().take(5) {
            let x = point_in_ball(p.dim(), 0.9, &mut r);
            let g = p.grad(&x, z);
            for k in 0..p.dim() {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[k] += h;
                down[k] -= h;
                let fd = (p.loss(&up, z) - p.loss(&down, z)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()), "coord {k}: fd {fd} vs {}", g[k]);
            }
        }
    }
}

#[test]
fn quadratic_gradient_matches_finite_differences() {
    finite_difference_check(&QuadraticProblem::new(4, 3, 0.5, 0.5, 2).unwrap(), 3);
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    finite_difference_check(&LogisticProblem::new(4, 3, 0.5, 2).unwrap(), 3);
}

/// Checks `|g| <= G`, `|g(x)-g(y)| <= L|x-y|`, the gradient variance against
/// `sigma^2` and the difference variance against `sigma_L^2 |x-y|^2`.
fn empirical_constants<P: Objective>(p: &P, machines: usize) {
    let c = *p.constants();
    let radius = c.diameter() / 2.0;
    let horizon = 400;
    let data = samples(p, machines, horizon);
    let mut r = rng(2);
    for (i, ds) in data.iter().enumerate() {
        for _ in 0..10 {
            let x = point_in_ball(p.dim(), radius, &mut r);
            let y = point_in_ball(p.dim(), radius, &mut r);
            let gx = p.machine_grad(i, &x).expect("exact machine gradient");
            let gy = p.machine_grad(i, &y).expect("exact machine gradient");
            let dxy = linalg::dist(&x, &y);
            let (mut var, mut var_l) = (0.0, 0.0);
            for z in ds.samples() {
                let a = p.grad(&x, z);
                let b = p.grad(&y, z);
                assert!(linalg::norm(&a) <= c.g() * (1.0 + 1e-12), "|g| {} > G {}", linalg::norm(&a), c.g());
                assert!(linalg::dist(&a, &b) <= c.l() * dxy * (1.0 + 1e-12) + 1e-12);
                var += linalg::norm_sq(&linalg::sub(&a, &gx));
                let diff = linalg::sub(&linalg::sub(&a, &b), &linalg::sub(&gx, &gy));
                var_l += linalg::norm_sq(&diff);
            }
            let n = ds.len() as f64;
            assert!(var / n <= c.sigma().powi(2) * 1.05, "variance {} vs sigma^2 {}", var / n, c.sigma().powi(2));
            assert!(var_l / n <= c.sigma_l().powi(2) * dxy * dxy * 1.05 + 1e-20);
        }
    }
}

#[test]
fn quadratic_constants_hold_empirically() {
    empirical_constants(&QuadraticProblem::new(5, 4, 0.5, 0.5, 3).unwrap(), 4);
}

#[test]
fn logistic_constants_hold_empirically() {
    empirical_constants(&LogisticProblem::new(5, 4, 0.5, 3).unwrap(), 4);
}

/// Nested grid search over the unit disc; returns the smallest loss found.
fn grid_minimum<P: Objective>(p: &P) -> f64 {
    let mut center = [0.0f64, 0.0];
    let mut half = 1.0;
    let mut best = f64::INFINITY;
    for _ in 0..12 {
        let n = 40;
        let mut arg = center;
        for i in 0..=n {
            for j in 0..=n {
                let x = [
                    center[0] - half + 2.0 * half * i as f64 / n as f64,
                    center[1] - half + 2.0 * half * j as f64 / n as f64,
                ];
                if linalg::norm(&x) > 1.0 {
                    continue;
                }
                let v = p.population_loss(&x);
                if v < best {
                    best = v;
                    arg = x;
                }
            }
        }
        center = arg;
        half *= 0.25;
    }
    best
}

#[test]
fn minimizers_agree_with_grid_search_in_two_dimensions() {
    let q = QuadraticProblem::new(2, 3, 0.5, 0.3, 4).unwrap();
    let l = LogisticProblem::new(2, 3, 0.5, 4).unwrap();
    for (name, reported, grid) in [
        ("quadratic", q.minimizer().unwrap().value, grid_minimum(&q)),
        ("logistic", l.minimizer().unwrap().value, grid_minimum(&l)),
    ] {
        assert!(reported <= grid + 1e-9, "{name}: reported {reported} above grid {grid}");
        assert!((reported - grid).abs() <= 1e-3, "{name}: reported {reported} vs grid {grid}");
    }
}

#[test]
fn projections_satisfy_their_defining_properties() {
    let mut r = rng(3);
    let domains = [
        ConvexDomain::origin_ball(3, 1.0).unwrap(),
        ConvexDomain::ball(vec![0.5, -2.0, 1.0], 0.7).unwrap(),
        ConvexDomain::cube(vec![-1.0, 0.0, -0.5], vec![1.0, 2.0, 0.5]).unwrap(),
    ];
    for dom in &domains {
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..3).map(|_| 3.0 * r.sample::<f64, _>(StandardNormal)).collect();
            let y: Vec<f64> = (0..3).map(|_| 3.0 * r.sample::<f64, _>(StandardNormal)).collect();
            let px = dom.project(&x).unwrap();
            let py = dom.project(&y).unwrap();
            assert!(dom.contains(&px, 1e-12));
            assert_eq!(dom.project(&px).unwrap(), px);
            assert!(linalg::dist(&px, &py) <= linalg::dist(&x, &y) * (1.0 + 1e-12) + 1e-15);
        }
        for _ in 0..1_000 {
            let x: Vec<f64> = (0..3).map(|_| 3.0 * r.sample::<f64, _>(StandardNormal)).collect();
            let px = dom.project(&x).unwrap();
            let inside = dom.project(&dom.center().iter().map(|c| c + 0.1 * r.random::<f64>()).collect::<Vec<_>>()).unwrap();
            // <x - P(x), u - P(x)> <= 0 for every feasible u.
            let ip = linalg::dot(&linalg::sub(&x, &px), &linalg::sub(&inside, &px));
            assert!(ip <= 1e-10 * (1.0 + linalg::norm(&x)), "{ip}");
        }
    }
}

#[test]
fn gaussian_sample_has_requested_variance() {
    let mut r = rng(4);
    let (dim, n, sigma_sq) = (4, 50_000, 2.5);
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    for _ in 0..n {
        let v = privacy::gaussian_sample(dim, sigma_sq, &mut r).unwrap();
        for k in 0..dim {
            sum[k] += v[k];
            sum_sq[k] += v[k] * v[k];
        }
    }
    for k in 0..dim {
        let mean = sum[k] / n as f64;
        let var = sum_sq[k] / n as f64 - mean * mean;
        // Standard errors: sqrt(2.5/5e4) = 7e-3 for the mean, 2.5 sqrt(2/5e4) = 1.6e-2 for the variance.
        assert!(mean.abs() < 0.035, "mean {mean}");
        assert!((var - sigma_sq).abs() < 0.08, "var {var}");
    }
    assert_eq!(privacy::gaussian_sample(3, 0.0, &mut r).unwrap(), vec![0.0; 3]);
}

#[test]
fn bound_holds_regardless_of_heterogeneity() {
    let (dim, machines, horizon, rho) = (5, 4, 200, 8.0);
    let spread = QuadraticProblem::new(dim, machines, 0.5, 0.5, 6).unwrap();
    let flat = QuadraticProblem::new(dim, machines, 0.0, 0.5, 6).unwrap();
    let g_star = spread.minimizer().unwrap().grad_norm;
    assert!((flat.minimizer().unwrap().grad_norm - g_star).abs() < 1e-12);
    assert!(linalg::dist(flat.mean_center(), spread.mean_center()) < 1e-12);
    for mode in [TrustMode::Untrusted, TrustMode::Trusted] {
        let bound = federated::theoretical_bound(mode, spread.constants(), g_star, horizon, machines, rho, dim).unwrap();
        let template = FederatedConfig::new(mode, machines, horizon, PrivacySpec::Rho { rho }, 9);
        for p in [&flat, &spread] {
            let excess = verify::excess_losses(p, &template, 30).unwrap();
            let mean = excess.iter().sum::<f64>() / excess.len() as f64;
            assert!(mean <= bound, "{}: het {} mean {mean} > bound {bound}", mode.as_str(), p.heterogeneity());
        }
    }
}

#[test]
fn aggregate_error_shrinks_with_machines() {
    // E|eps_t|^2 <= sigma~^2 t / M, so the per-round ratio to that budget stays below one for every M.
    for machines in [1usize, 4, 16] {
        let p = QuadraticProblem::new(3, machines, 0.5, 0.5, 8).unwrap();
        let template = FederatedConfig::new(TrustMode::Untrusted, machines, 40, PrivacySpec::None, 1);
        let decay = verify::error_decay_mc(&p, &template, 100).unwrap();
        let budget = p.constants().sigma_tilde().powi(2) / machines as f64;
        for (t, (m, se)) in decay.mean.iter().zip(&decay.se).enumerate() {
            let allowed = budget * (t + 1) as f64;
            assert!(*m <= allowed + 3.0 * se, "M={machines} t={}: {m} > {allowed}", t + 1);
        }
    }
}
