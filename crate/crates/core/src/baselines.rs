//! Model-based reconstruction baselines.
//!
//! [`fista`] solves `min ½‖A′σ - y′‖² + β‖σ‖₁` on the real stacked system
//! `A′ = [Re A; Im A]`, `y′ = [Re(y - b); Im(y - b)]`. [`matched_filter`] is
//! the FT-like (matched filter) stand-in: the magnitude of the adjoint
//! applied to the measurements, with each pixel's response normalized by its
//! column norm.

use ndarray::{Array1, ArrayView1, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardOperator;
use crate::scene::{ImageGrid, Scene};

pub const MATCHED_FILTER_LABEL: &str = "FT-like (matched filter)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsConfig {
    /// ℓ₁ weight β.
    pub beta: f64,
    /// Interpret `beta` as a fraction of `max |A′ᵀ y′|`, the smallest β
    /// for which the solution is zero.
    pub beta_relative: bool,
    pub max_iters: usize,
    /// Fixed step; estimated as `1/L` by power iteration when absent.
    pub step: Option<f64>,
    /// Stop once the relative objective change falls below this.
    pub tolerance: f64,
    pub nonneg: bool,
    /// FISTA momentum; plain ISTA (monotone objective) when false.
    pub accelerated: bool,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self { beta: 0.0, beta_relative: false, max_iters: 2000, step: None, tolerance: 1e-10, nonneg: true, accelerated: true }
    }
}

impl CsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || self.max_iters == 0 || !(self.tolerance >= 0.0) {
            return Err(Error::invalid("need beta >= 0, max_iters >= 1, tolerance >= 0"));
        }
        if let Some(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("step must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CsSolution {
    pub x: Array1<f64>,
    pub iterations: usize,
    pub objective: f64,
    pub step: f64,
}

/// Largest eigenvalue of `AᵀA` by 50 power iterations from a flat start.
pub fn lipschitz_constant(a: ArrayView2<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..50 {
        let w = a.t().dot(&a.dot(&v));
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w);
        v = w / norm;
    }
    lambda
}

/// `½‖Ax - y‖² + β‖x‖₁`.
pub fn objective(a: ArrayView2<f64>, y: ArrayView1<f64>, x: ArrayView1<f64>, beta: f64) -> f64 {
    let r = a.dot(&x) - y;
    0.5 * r.dot(&r) + beta * x.iter().map(|v| v.abs()).sum::<f64>()
}

fn prox(v: f64, threshold: f64, nonneg: bool) -> f64 {
    let s = v.signum() * (v.abs() - threshold).max(0.0);
    if nonneg {
        s.max(0.0)
    } else {
        s
    }
}

/// Proximal gradient on a real system, started from zero.
pub fn solve_l1(a: ArrayView2<f64>, y: ArrayView1<f64>, cfg: &CsConfig) -> Result<CsSolution> {
    cfg.validate()?;
    if a.nrows() != y.len() {
        return Err(Error::invalid("system and right-hand side sizes differ"));
    }
    let step = match cfg.step {
        Some(s) => s,
        None => {
            let l = lipschitz_constant(a);
            if !(l > 0.0) {
                return Err(Error::invalid("operator is zero"));
            }
            // power iteration approaches L from below
            1.0 / (1.01 * l)
        }
    };
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("operator is zero"));
    }
    let n = a.ncols();
    let aty = a.t().dot(&y);
    let beta = if cfg.beta_relative { cfg.beta * aty.iter().fold(0.0f64, |m, v| m.max(v.abs())) } else { cfg.beta };
    let mut x = Array1::<f64>::zeros(n);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = objective(a, y, x.view(), beta);
    let mut iterations = 0;
    for it in 1..=cfg.max_iters {
        iterations = it;
        // gradient of ½‖Az - y‖² is AᵀAz - Aᵀy
        let grad = a.t().dot(&a.dot(&z)) - &aty;
        let x_next = Array1::from_shape_fn(n, |i| prox(z[i] - step * grad[i], step * beta, cfg.nonneg));
        let f = objective(a, y, x_next.view(), beta);
        if cfg.accelerated {
            if f > f_prev {
                // adaptive restart: drop momentum and retake a plain step from x
                t = 1.0;
                z.assign(&x);
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            z = &x_next + &((&x_next - &x) * ((t - 1.0) / t_next));
            t = t_next;
        } else {
            z.assign(&x_next);
        }
        x = x_next;
        let change = (f_prev - f).abs();
        f_prev = f;
        if change <= cfg.tolerance * f.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(CsSolution { objective: f_prev, x, iterations, step })
}

/// FISTA reconstruction over the operator's grid.
pub fn fista(op: &ForwardOperator, y: ArrayView1<Complex64>, cfg: &CsConfig, grid: &ImageGrid, sigma_max: f64) -> Result<Scene> {
    let (a, rhs) = op.stacked_real(y)?;
    let sol = solve_l1(a.view(), rhs.view(), cfg)?;
    Scene::new(sol.x.to_vec(), grid.clone(), sigma_max)
}

/// `m_j = |a_jᴴ(y - b)| / ‖a_j‖`, scaled so the peak is `σ_max`. All zero
/// when the adjoint vanishes. Normalizing by the column norm keeps near and
/// far pixels comparable, so an isolated scatterer peaks at its own pixel.
pub fn matched_filter(op: &ForwardOperator, y: ArrayView1<Complex64>, grid: &ImageGrid, sigma_max: f64) -> Result<Scene> {
    if y.len() != op.n_measurements() {
        return Err(Error::invalid("measurement length does not match operator"));
    }
    let r = &y - op.offset();
    let col_norms = op.matrix().map_axis(ndarray::Axis(0), |c| c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt());
    let mag = ndarray::Zip::from(&op.adjoint(r.view()))
        .and(&col_norms)
        .map_collect(|v, &n| if n > 0.0 { v.norm() / n } else { 0.0 });
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    let sigma = if peak > 0.0 { mag.iter().map(|v| (sigma_max * v / peak).min(sigma_max)).collect() } else { vec![0.0; mag.len()] };
    Scene::new(sigma, grid.clone(), sigma_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ris_phase_random, PathMask};
    use crate::forward::build_forward;
    use crate::scene::Layout;
    use ndarray::{arr1, Array2};
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_least_squares() {
        let a = Array2::<f64>::eye(5);
        let y = arr1(&[0.5, 1.0, 0.0, 2.0, 0.25]);
        let sol = solve_l1(a.view(), y.view(), &CsConfig { nonneg: false, ..CsConfig::default() }).unwrap();
        for (x, t) in sol.x.iter().zip(&y) {
            assert!((x - t).abs() < 1e-8);
        }
    }

    #[test]
    fn large_beta_gives_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = Array2::from_shape_fn((12, 6), |_| rng.random_range(-1.0..1.0f64));
        let y = Array1::from_shape_fn(12, |_| rng.random_range(-1.0..1.0f64));
        let beta = 1.01 * a.t().dot(&y).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let sol = solve_l1(a.view(), y.view(), &CsConfig { beta, nonneg: false, ..CsConfig::default() }).unwrap();
        assert!(sol.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relative_beta_threshold() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = Array2::from_shape_fn((12, 6), |_| rng.random_range(-1.0..1.0f64));
        let y = Array1::from_shape_fn(12, |_| rng.random_range(-1.0..1.0f64));
        let cfg = CsConfig { beta: 1.0001, beta_relative: true, nonneg: false, ..CsConfig::default() };
        assert!(solve_l1(a.view(), y.view(), &cfg).unwrap().x.iter().all(|&v| v == 0.0));
        let cfg = CsConfig { beta: 0.5, ..cfg };
        assert!(solve_l1(a.view(), y.view(), &cfg).unwrap().x.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn zero_operator_rejected() {
        let a = Array2::<f64>::zeros((3, 3));
        let y = arr1(&[1.0, 0.0, 0.0]);
        assert!(matches!(solve_l1(a.view(), y.view(), &CsConfig::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lipschitz_of_diagonal() {
        let a = Array2::from_diag(&arr1(&[1.0, 3.0, 2.0]));
        assert!((lipschitz_constant(a.view()) - 9.0).abs() < 1e-6);
    }

    #[test]
    fn ista_objective_is_monotone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = Array2::from_shape_fn((20, 10), |_| rng.random_range(-1.0..1.0f64));
        let y = Array1::from_shape_fn(20, |_| rng.random_range(-1.0..1.0f64));
        let mut last = f64::INFINITY;
        for iters in 1..30 {
            let cfg = CsConfig { beta: 0.1, max_iters: iters, tolerance: 0.0, accelerated: false, ..CsConfig::default() };
            let f = solve_l1(a.view(), y.view(), &cfg).unwrap().objective;
            assert!(f <= last + 1e-15);
            last = f;
        }
    }

    #[test]
    fn zero_columns_stay_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let a = Array2::from_shape_fn((15, 8), |_| rng.random_range(-1.0..1.0f64));
        let y = Array1::from_shape_fn(15, |_| rng.random_range(-1.0..1.0f64));
        let mut padded = Array2::zeros((15, 11));
        padded.slice_mut(ndarray::s![.., ..8]).assign(&a);
        let step = 1.0 / (1.01 * lipschitz_constant(a.view()));
        let cfg = CsConfig { beta: 0.05, max_iters: 300, step: Some(step), nonneg: false, ..CsConfig::default() };
        let base = solve_l1(a.view(), y.view(), &cfg).unwrap();
        let wide = solve_l1(padded.view(), y.view(), &cfg).unwrap();
        assert!(wide.x.slice(ndarray::s![8..]).iter().all(|&v| v == 0.0));
        for (p, q) in base.x.iter().zip(wide.x.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    fn small_op(mask: PathMask) -> (crate::SystemConfig, ForwardOperator) {
        let cfg = Layout { tx_elements: 2, rx_elements: 2, ris_side: 4, roi_side: 5, ..Layout::default() }.build();
        let book = ris_phase_random(8, cfg.n_ris(), 3).unwrap();
        (cfg.clone(), build_forward(&cfg, &book, mask).unwrap())
    }

    #[test]
    fn matched_filter_properties() {
        let (cfg, op) = small_op(PathMask::ALL);
        let grid = cfg.grid();
        let sm = cfg.sigma_max();
        let zero = matched_filter(&op, op.offset().view(), &grid, sm).unwrap();
        assert!(zero.sigma.iter().all(|&v| v == 0.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let p = rng.random_range(0..grid.len());
            let mut sigma = vec![0.0; grid.len()];
            sigma[p] = sm;
            let y = op.apply(ArrayView1::from(&sigma)).unwrap();
            let img = matched_filter(&op, y.view(), &grid, sm).unwrap();
            assert!(img.sigma.iter().all(|&v| (0.0..=sm).contains(&v)));
            let argmax = img.sigma.iter().enumerate().fold(0, |best, (i, &v)| if v > img.sigma[best] { i } else { best });
            assert_eq!(argmax, p);
        }
    }

    #[test]
    fn fista_beta_zero_least_squares_residual() {
        let (cfg, op) = small_op(PathMask::ROI_RIS_ONLY);
        let grid = cfg.grid();
        let truth = crate::scene::generate_scene(crate::SceneKind::Rectangle, &grid, 4, cfg.sigma_max());
        let y = op.apply(ArrayView1::from(&truth.sigma)).unwrap();
        let cs = CsConfig { max_iters: 5000, nonneg: false, ..CsConfig::default() };
        let img = fista(&op, y.view(), &cs, &grid, cfg.sigma_max()).unwrap();
        let res = |s: &[f64]| (op.apply(ArrayView1::from(s)).unwrap() - &y).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(res(&img.sigma) <= res(&truth.sigma) + 1e-6);
        let again = fista(&op, y.view(), &cs, &grid, cfg.sigma_max()).unwrap();
        assert_eq!(img, again);
    }
}
