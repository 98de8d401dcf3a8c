//! Sparse least squares with the Huber-modified SCAD penalty
//!
//! ```text
//! E(u) = ½‖Au − b‖² + μ H_α(u) − P̃(u)
//! ```
//!
//! where `μ‖u‖₁ − P̃(u)` is the ordinary SCAD penalty.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linops::{LinearOperator, Vector};
use crate::precond::richardson_shift;
use crate::solver::baselines::{DcSplitting, ProxDcSplitting};
use crate::splitting::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScadParams {
    pub mu: f64,
    pub theta: f64,
    /// Huber width `α`; must satisfy `α < μ`.
    pub huber_alpha: f64,
}

impl Default for ScadParams {
    fn default() -> Self {
        Self {
            mu: 5e-4,
            theta: 10.0,
            huber_alpha: 2.5e-4,
        }
    }
}

impl ScadParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.mu > 0.0) {
            return bad("mu", format!("must be positive, got {}", self.mu));
        }
        if !(self.theta > 1.0) {
            return bad("theta", format!("must exceed 1, got {}", self.theta));
        }
        if !(self.huber_alpha > 0.0 && self.huber_alpha < self.mu) {
            return bad(
                "huber_alpha",
                format!("must lie in (0, mu) = (0, {}), got {}", self.mu, self.huber_alpha),
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScadInstance {
    pub a: Arc<DMatrix<f64>>,
    pub b: Vector,
    pub y_true: Vector,
    pub params: ScadParams,
    pub seed: u64,
}

/// Random instance: Gaussian `A` with unit columns, an `s`-sparse Gaussian
/// `y_true` on a uniformly drawn support and `b = A y_true + 0.01 k̂`.
pub fn gen_scad(m: usize, k: usize, s: usize, seed: u64, params: ScadParams) -> Result<ScadInstance> {
    params.validate()?;
    if s > k {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("support size {s} exceeds dimension {k}"),
        });
    }
    if m == 0 || k == 0 {
        return Err(Error::InvalidParameter {
            name: "m, k",
            reason: "dimensions must be positive".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::from_fn(m, k, |_, _| StandardNormal.sample(&mut rng));
    for mut col in a.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    let mut y_true = Vector::zeros(k);
    let mut support = sample(&mut rng, k, s).into_vec();
    support.sort_unstable();
    for i in support {
        y_true[i] = StandardNormal.sample(&mut rng);
    }
    let noise = Vector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
    let b = &a * &y_true + noise * 0.01;
    Ok(ScadInstance {
        a: Arc::new(a),
        b,
        y_true,
        params,
        seed,
    })
}

/// `H_α(u) = Σ |uᵢ|²/(2α)` on `|uᵢ| ≤ α`, `|uᵢ| − α/2` beyond.
pub fn huber(u: &Vector, alpha: f64) -> f64 {
    u.iter()
        .map(|&v| {
            let a = v.abs();
            if a <= alpha {
                a * a / (2.0 * alpha)
            } else {
                a - 0.5 * alpha
            }
        })
        .sum()
}

pub fn huber_grad(u: &Vector, alpha: f64) -> Vector {
    u.map(|v| if v.abs() <= alpha { v / alpha } else { v.signum() })
}

/// Solves `c·y + μ·ψ'(y) = r` coordinatewise, `ψ` the Huber function.
pub fn huber_resolvent(c: f64, mu: f64, alpha: f64, r: &Vector) -> Vector {
    let knee = c * alpha + mu;
    r.map(|v| {
        if v.abs() <= knee {
            v / (c + mu / alpha)
        } else {
            (v - mu * v.signum()) / c
        }
    })
}

/// `P̃(u) = Σ p̃(uᵢ)` with `p̃ = 0` on `|u| ≤ μ`, `(|u| − μ)²/(2(θ−1))` on
/// `μ < |u| < θμ` and `μ|u| − μ²(θ+1)/2` beyond.
pub fn scad_tilde_p(u: &Vector, mu: f64, theta: f64) -> f64 {
    u.iter()
        .map(|&v| {
            let a = v.abs();
            if a <= mu {
                0.0
            } else if a < theta * mu {
                (a - mu).powi(2) / (2.0 * (theta - 1.0))
            } else {
                mu * a - 0.5 * mu * mu * (theta + 1.0)
            }
        })
        .sum()
}

pub fn scad_tilde_p_grad(u: &Vector, mu: f64, theta: f64) -> Vector {
    u.map(|v| v.signum() * (v.abs().min(theta * mu) - mu).max(0.0) / (theta - 1.0))
}

/// The Huber-SCAD penalty `Σ p_M(uᵢ)` from its four-branch closed form.
pub fn huber_scad_penalty(u: &Vector, mu: f64, theta: f64, alpha: f64) -> Result<f64> {
    if !(alpha < mu && mu < theta * mu) {
        return Err(Error::InvalidParameter {
            name: "huber_alpha",
            reason: format!("branches need alpha < mu < theta*mu, got alpha = {alpha}, mu = {mu}, theta = {theta}"),
        });
    }
    Ok(u.iter()
        .map(|&v| {
            let a = v.abs();
            let per_mu = if a <= alpha {
                a * a / (2.0 * alpha)
            } else if a <= mu {
                a - 0.5 * alpha
            } else if a < theta * mu {
                a - 0.5 * alpha - (a - mu).powi(2) / (2.0 * (theta - 1.0) * mu)
            } else {
                0.5 * (mu * (theta + 1.0) - alpha)
            };
            mu * per_mu
        })
        .sum())
}

/// Number of coordinates with `|uᵢ| ≤ tol`.
pub fn sparsity(u: &Vector, tol: f64) -> usize {
    u.iter().filter(|v| v.abs() <= tol).count()
}

/// The least squares part shared by all splittings.
#[derive(Debug, Clone)]
struct LeastSquares {
    a: Arc<DMatrix<f64>>,
    b: Vector,
    atb: Vector,
    gram: LinearOperator,
}

impl LeastSquares {
    fn new(inst: &ScadInstance) -> Self {
        Self {
            a: inst.a.clone(),
            b: inst.b.clone(),
            atb: inst.a.tr_mul(&inst.b),
            gram: LinearOperator::Gram(inst.a.clone()),
        }
    }

    fn residual(&self, u: &Vector) -> Vector {
        self.a.as_ref() * u - &self.b
    }

    fn value(&self, u: &Vector) -> f64 {
        0.5 * self.residual(u).norm_squared()
    }

    fn grad(&self, u: &Vector) -> Vector {
        self.a.tr_mul(&self.residual(u))
    }
}

/// `H = ½‖Au − b‖² + μH_α`, `F = −P̃`.
#[derive(Debug, Clone)]
pub struct ScadProblem {
    ls: LeastSquares,
    pub params: ScadParams,
}

impl ScadProblem {
    pub fn new(inst: &ScadInstance) -> Result<Self> {
        inst.params.validate()?;
        check_dim(inst.a.nrows(), inst.b.len())?;
        Ok(Self {
            ls: LeastSquares::new(inst),
            params: inst.params,
        })
    }

    /// `λ_max(AᵀA)` with the Richardson safety margin.
    pub fn gram_bound(&self) -> Result<f64> {
        richardson_shift(&self.ls.gram, None)
    }

    pub fn penalty(&self, u: &Vector) -> f64 {
        let p = &self.params;
        p.mu * huber(u, p.huber_alpha) - scad_tilde_p(u, p.mu, p.theta)
    }
}

impl Problem for ScadProblem {
    fn dim(&self) -> usize {
        self.ls.a.ncols()
    }
    fn convex_value(&self, u: &Vector) -> f64 {
        self.ls.value(u) + self.params.mu * huber(u, self.params.huber_alpha)
    }
    fn convex_grad(&self, u: &Vector) -> Vector {
        self.ls.grad(u) + huber_grad(u, self.params.huber_alpha) * self.params.mu
    }
    fn smooth_value(&self, u: &Vector) -> f64 {
        -scad_tilde_p(u, self.params.mu, self.params.theta)
    }
    fn smooth_grad(&self, u: &Vector) -> Vector {
        -scad_tilde_p_grad(u, self.params.mu, self.params.theta)
    }
    fn lipschitz(&self) -> f64 {
        1.0 / (self.params.theta - 1.0)
    }
    fn quadratic_part(&self) -> Option<&LinearOperator> {
        Some(&self.ls.gram)
    }
    // h(y) − AᵀA y = μψ'(y) − Aᵀb.
    fn separable_resolvent(&self, c: f64, r: &Vector) -> Option<Vector> {
        Some(huber_resolvent(
            c,
            self.params.mu,
            self.params.huber_alpha,
            &(r + &self.ls.atb),
        ))
    }
}

/// The DC pair `G = μH_α + (λ/2)‖u‖²`,
/// `K = (λ/2)‖u‖² + P̃ − ½‖Au − b‖²` with `λ ≥ λ_max(AᵀA)`.
/// Also a proximal splitting with `f = ½‖Au − b‖²`, `g = μH_α`, `K = P̃`.
#[derive(Debug, Clone)]
pub struct ScadDc {
    ls: LeastSquares,
    params: ScadParams,
    lambda: f64,
}

impl ScadDc {
    pub fn new(inst: &ScadInstance) -> Result<Self> {
        let p = ScadProblem::new(inst)?;
        let lambda = p.gram_bound()?;
        Ok(Self {
            ls: p.ls,
            params: p.params,
            lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl DcSplitting for ScadDc {
    fn dim(&self) -> usize {
        self.ls.a.ncols()
    }
    fn energy(&self, u: &Vector) -> f64 {
        let p = &self.params;
        self.ls.value(u) + p.mu * huber(u, p.huber_alpha) - scad_tilde_p(u, p.mu, p.theta)
    }
    fn gradient(&self, u: &Vector) -> Vector {
        let p = &self.params;
        self.ls.grad(u) + huber_grad(u, p.huber_alpha) * p.mu - scad_tilde_p_grad(u, p.mu, p.theta)
    }
    fn concave_grad(&self, u: &Vector) -> Vector {
        u * self.lambda + scad_tilde_p_grad(u, self.params.mu, self.params.theta) - self.ls.grad(u)
    }
    fn convex_argmin(&self, v: &Vector, _warm: &Vector) -> Result<Vector> {
        Ok(huber_resolvent(self.lambda, self.params.mu, self.params.huber_alpha, v))
    }
}

impl ProxDcSplitting for ScadDc {
    fn dim(&self) -> usize {
        self.ls.a.ncols()
    }
    fn energy(&self, u: &Vector) -> f64 {
        DcSplitting::energy(self, u)
    }
    fn gradient(&self, u: &Vector) -> Vector {
        DcSplitting::gradient(self, u)
    }
    fn smooth_grad(&self, u: &Vector) -> Vector {
        self.ls.grad(u)
    }
    fn smooth_lipschitz(&self) -> f64 {
        self.lambda
    }
    fn prox(&self, z: &Vector, t: f64) -> Vector {
        huber_resolvent(1.0 / t, self.params.mu, self.params.huber_alpha, &(z / t))
    }
    fn concave_grad(&self, u: &Vector) -> Vector {
        scad_tilde_p_grad(u, self.params.mu, self.params.theta)
    }
}

/// The original SCAD model `½‖Au − b‖² + μ‖u‖₁ − P̃(u)` with the DC pair
/// `G = μ‖u‖₁ + (λ/2)‖u‖²`, `K = (λ/2)‖u‖² + P̃ − ½‖Au − b‖²`.
#[derive(Debug, Clone)]
pub struct L1ScadDc {
    ls: LeastSquares,
    params: ScadParams,
    lambda: f64,
}

impl L1ScadDc {
    pub fn new(inst: &ScadInstance) -> Result<Self> {
        let ScadDc { ls, params, lambda } = ScadDc::new(inst)?;
        Ok(Self { ls, params, lambda })
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

impl DcSplitting for L1ScadDc {
    fn dim(&self) -> usize {
        self.ls.a.ncols()
    }
    fn energy(&self, u: &Vector) -> f64 {
        let p = &self.params;
        self.ls.value(u) + p.mu * u.lp_norm(1) - scad_tilde_p(u, p.mu, p.theta)
    }
    /// Minimum-norm element of the subdifferential.
    fn gradient(&self, u: &Vector) -> Vector {
        let p = &self.params;
        let smooth = self.ls.grad(u) - scad_tilde_p_grad(u, p.mu, p.theta);
        smooth.zip_map(u, |g, v| {
            if v != 0.0 {
                g + p.mu * v.signum()
            } else {
                soft_threshold(g, p.mu)
            }
        })
    }
    fn concave_grad(&self, u: &Vector) -> Vector {
        u * self.lambda + scad_tilde_p_grad(u, self.params.mu, self.params.theta) - self.ls.grad(u)
    }
    fn convex_argmin(&self, v: &Vector, _warm: &Vector) -> Result<Vector> {
        Ok(v.map(|x| soft_threshold(x, self.params.mu) / self.lambda))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{fd_gradient_oracle, fd_step, near_kink, sample_away_from_kinks};
    use proptest::prelude::*;

    const MU: f64 = 5e-4;
    const THETA: f64 = 10.0;
    const ALPHA: f64 = 2.5e-4;

    #[test]
    fn huber_examples() {
        assert_eq!(huber(&Vector::zeros(3), 0.1), 0.0);
        let a = 0.3;
        let at = Vector::from_element(1, a);
        assert!((huber(&at, a) - a / 2.0).abs() < 1e-16);
        assert!((huber(&(at * 2.0), a) - 1.5 * a).abs() < 1e-16);
    }

    #[test]
    fn tilde_p_examples() {
        let u = Vector::from_vec(vec![MU, -0.5 * MU, 0.0]);
        assert_eq!(scad_tilde_p(&u, MU, THETA), 0.0);
        assert_eq!(scad_tilde_p_grad(&u, MU, THETA), Vector::zeros(3));
        let g = scad_tilde_p_grad(&Vector::from_element(1, THETA * MU), MU, THETA);
        assert!((g[0] - MU).abs() < 1e-18);
    }

    #[test]
    fn tilde_p_gradient_is_lipschitz() {
        let xs: Vec<f64> = (0..4001).map(|i| -0.01 + 5e-6 * i as f64).collect();
        let g: Vec<f64> = xs
            .iter()
            .map(|&x| scad_tilde_p_grad(&Vector::from_element(1, x), MU, THETA)[0])
            .collect();
        for i in 1..xs.len() {
            let slope = (g[i] - g[i - 1]).abs() / (xs[i] - xs[i - 1]);
            assert!(slope <= 1.0 / 9.0 + 1e-8);
        }
    }

    #[test]
    fn penalty_fourth_branch() {
        let u = Vector::from_element(1, 2.0 * THETA * MU);
        let v = huber_scad_penalty(&u, MU, THETA, ALPHA).unwrap();
        assert!((v - 1.3125e-6).abs() < 1e-20);
        assert_eq!(huber_scad_penalty(&Vector::zeros(4), MU, THETA, ALPHA).unwrap(), 0.0);
        assert!(huber_scad_penalty(&u, MU, THETA, MU).is_err());
    }

    #[test]
    fn composed_penalty_matches_piecewise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Vector::from_fn(10_000, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * 3e-3
        });
        for i in 0..u.len() {
            let ui = Vector::from_element(1, u[i]);
            let composed = MU * huber(&ui, ALPHA) - scad_tilde_p(&ui, MU, THETA);
            let piecewise = huber_scad_penalty(&ui, MU, THETA, ALPHA).unwrap();
            assert!((composed - piecewise).abs() <= 1e-14, "{}", u[i]);
        }
    }

    #[test]
    fn generator_contract() {
        let inst = gen_scad(50, 80, 7, 11, ScadParams::default()).unwrap();
        for c in inst.a.column_iter() {
            assert!((c.norm() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(sparsity(&inst.y_true, 0.0), 80 - 7);
        assert_eq!(inst, gen_scad(50, 80, 7, 11, ScadParams::default()).unwrap());

        let empty = gen_scad(20, 30, 0, 5, ScadParams::default()).unwrap();
        assert_eq!(empty.y_true, Vector::zeros(30));
        assert!(empty.b.amax() < 0.1);
        assert!(gen_scad(5, 4, 5, 0, ScadParams::default()).is_err());
    }

    #[test]
    fn energy_at_origin() {
        let inst = gen_scad(30, 40, 4, 2, ScadParams::default()).unwrap();
        let p = ScadProblem::new(&inst).unwrap();
        let e = p.energy(&Vector::zeros(40));
        assert!((e - 0.5 * inst.b.norm_squared()).abs() < 1e-15);
    }

    #[test]
    fn resolvent_solves_its_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = Vector::from_fn(500, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * 2e-3
        });
        let c = 7.5;
        let y = huber_resolvent(c, MU, ALPHA, &r);
        let lhs = &y * c + huber_grad(&y, ALPHA) * MU;
        assert!((lhs - &r).amax() < 1e-15);
    }

    /// Bisection on the monotone scalar map `c y + μψ'(y) − r`.
    fn bisect_resolvent(c: f64, r: f64) -> f64 {
        let phi = |y: f64| c * y + MU * if y.abs() <= ALPHA { y / ALPHA } else { y.signum() } - r;
        let (mut lo, mut hi) = (-1e3, 1e3);
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn dc_subproblem_matches_bisection() {
        let inst = gen_scad(40, 60, 6, 4, ScadParams::default()).unwrap();
        let dc = ScadDc::new(&inst).unwrap();
        let u = &inst.y_true * 0.5;
        let v = DcSplitting::concave_grad(&dc, &u);
        let y = dc.convex_argmin(&v, &u).unwrap();
        for i in 0..y.len() {
            assert!((y[i] - bisect_resolvent(dc.lambda(), v[i])).abs() < 1e-8);
        }
    }

    #[test]
    fn l1_scad_argmin() {
        let inst = gen_scad(40, 60, 6, 4, ScadParams::default()).unwrap();
        let dc = L1ScadDc::new(&inst).unwrap();
        let v = Vector::from_vec(vec![2.0 * MU, -0.5 * MU, -3.0 * MU]);
        let mut full = Vector::zeros(60);
        full.rows_mut(0, 3).copy_from(&v);
        let y = dc.convex_argmin(&full, &full).unwrap();
        assert!((y[0] - MU / dc.lambda).abs() < 1e-18);
        assert_eq!(y[1], 0.0);
        assert!((y[2] + 2.0 * MU / dc.lambda).abs() < 1e-18);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn gradients_match_finite_differences(seed in 0u64..1000) {
            let inst = gen_scad(12, 20, 3, seed, ScadParams::default()).unwrap();
            let p = ScadProblem::new(&inst).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let kinks = [ALPHA, MU, THETA * MU];
            let (u, _) = sample_away_from_kinks(
                || Vector::from_fn(20, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * 4e-3
                }),
                &kinks,
                1000,
            );
            prop_assume!(!near_kink(&u, &kinks, 10.0 * fd_step(&u)));
            let fd = fd_gradient_oracle(|x| p.energy(x), &u);
            let g = p.gradient(&u);
            prop_assert!((&g - &fd).norm() <= 1e-6 * g.norm().max(1e-3));
            let dc = ScadDc::new(&inst).unwrap();
            let fd = fd_gradient_oracle(|x| DcSplitting::energy(&dc, x), &u);
            prop_assert!((DcSplitting::gradient(&dc, &u) - &fd).norm() <= 1e-6 * g.norm().max(1e-3));
        }
    }
}
