//! Preconditioned sweeps `y ← y + 𝕄⁻¹(bⁿ − T y)` for the subproblem system
//! `T = (2/δt)I + A`.
//!
//! One sweep started at `û` realizes the proximal weight `M = 𝕄 − T`. With
//! `k > 1` sweeps the effective preconditioner `𝕄_k` satisfies
//! `𝕄_k⁻¹ = (I − (I − 𝕄⁻¹T)^k) T⁻¹`, which is again symmetric and `⪰ T`
//! whenever `𝕄 ⪰ T`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linops::{cg_solve, cg_with, LinearOperator, SymmetricCsr, Vector};
use crate::splitting::{Problem, SurrogateState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreconditionerKind {
    /// `𝕄 = T`, applied by conjugate gradients.
    Exact,
    /// `𝕄 = (2/δt)I + c̃ Diag(A)`.
    Jacobi,
    /// `𝕄 = (D − E)D⁻¹(D − Eᵀ)` for `T = D − E − Eᵀ`.
    Sgs,
    /// `M = λI − Q` for the quadratic part `Q` of `H`.
    RichardsonShift,
}

/// Preconditioner choice and its parameters, independent of `δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    pub kind: PreconditionerKind,
    pub sweeps: usize,
    /// Relative residual tolerance for [`PreconditionerKind::Exact`].
    pub cg_tol: f64,
    /// Jacobi scaling `c̃`; `None` picks the smallest feasible power of two.
    pub c_tilde: Option<f64>,
    /// Richardson shift `λ`; `None` uses a power-iteration estimate of `λ_max(Q)`.
    pub shift: Option<f64>,
}

impl Preconditioner {
    pub fn exact(cg_tol: f64) -> Self {
        Self {
            kind: PreconditionerKind::Exact,
            sweeps: 1,
            cg_tol,
            c_tilde: None,
            shift: None,
        }
    }

    pub fn jacobi(c_tilde: Option<f64>, sweeps: usize) -> Self {
        Self {
            kind: PreconditionerKind::Jacobi,
            sweeps,
            c_tilde,
            ..Self::exact(1e-12)
        }
    }

    pub fn sgs(sweeps: usize) -> Self {
        Self {
            kind: PreconditionerKind::Sgs,
            sweeps,
            ..Self::exact(1e-12)
        }
    }

    pub fn richardson(shift: Option<f64>) -> Self {
        Self {
            kind: PreconditionerKind::RichardsonShift,
            shift,
            ..Self::exact(1e-12)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 {
            return Err(Error::InvalidParameter {
                name: "sweeps",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "cg_tol",
                reason: format!("must be positive, got {}", self.cg_tol),
            });
        }
        if let Some(c) = self.c_tilde {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "c_tilde",
                    reason: format!("must be positive, got {c}"),
                });
            }
        }
        Ok(())
    }

    /// Builds the sweep operator for `T = (2/δt)I + A`.
    pub fn build(&self, a: &LinearOperator, dt: f64) -> Result<BuiltPreconditioner> {
        self.validate()?;
        let t = build_t(a, dt)?;
        let cg_maxit = 10 * a.dim() + 100;
        let factor = match self.kind {
            PreconditionerKind::Exact => Factor::Exact,
            PreconditionerKind::Jacobi => {
                let c = match self.c_tilde {
                    Some(c) => {
                        if !jacobi_feasibility(a, c)? {
                            return Err(Error::InfeasiblePreconditioner(format!(
                                "c̃ Diag(A) − A is not positive semidefinite for c̃ = {c}"
                            )));
                        }
                        c
                    }
                    None => auto_c_tilde(a)?,
                };
                let mm_diag = a.diagonal().map(|v| 2.0 / dt + c * v);
                Factor::Jacobi {
                    c_tilde: c,
                    mm_diag,
                    a_diag: a.diagonal(),
                }
            }
            PreconditionerKind::Sgs => Factor::Sgs(sgs_factors(&t)?),
            PreconditionerKind::RichardsonShift => {
                let shift = richardson_shift(a, self.shift)?;
                Factor::Richardson { shift }
            }
        };
        Ok(BuiltPreconditioner {
            t,
            a: a.clone(),
            dt,
            factor,
            sweeps: self.sweeps,
            cg_tol: self.cg_tol,
            cg_maxit,
        })
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Exact,
    Jacobi {
        c_tilde: f64,
        mm_diag: Vector,
        a_diag: Vector,
    },
    Sgs(SgsFactors),
    Richardson {
        shift: f64,
    },
}

/// `T = (2/δt)I + A`. Sparse `A` stays sparse.
pub fn build_t(a: &LinearOperator, dt: f64) -> Result<LinearOperator> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive and finite, got {dt}"),
        });
    }
    let c = 2.0 / dt;
    Ok(match a {
        LinearOperator::Sparse(s) => LinearOperator::Sparse(s.shifted(c)),
        LinearOperator::Diagonal(d) => LinearOperator::Diagonal(d.add_scalar(c)),
        LinearOperator::Dense(m) => {
            let n = m.nrows();
            LinearOperator::Dense(m + DMatrix::identity(n, n) * c)
        }
        LinearOperator::Zero(n) => LinearOperator::Identity(*n).scaled(c),
        other => LinearOperator::Identity(other.dim()).scaled(c).plus(other.clone())?,
    })
}

/// `bⁿ = b₀ + (2/(3δt))(4uⁿ − uⁿ⁻¹) − (2f(uⁿ) − f(uⁿ⁻¹))`.
pub fn rhs_bn<P: Problem + ?Sized>(s: &SurrogateState, p: &P) -> Result<Vector> {
    let affine = p
        .affine_part()
        .ok_or(Error::MissingAffinePart("the right-hand side bⁿ needs h(u) = Au − b₀"))?;
    Ok(&affine.b0 + s.explicit_rhs())
}

/// The linear subproblem `T y = bⁿ` with its anchor `û`.
#[derive(Debug, Clone)]
pub struct SubproblemSystem<'a> {
    pub t: &'a LinearOperator,
    pub b_n: Vector,
    pub u_hat: Vector,
}

/// Diagonal and strictly lower part of `T = D − E − Eᵀ`. The strictly lower
/// triangle of `T` (that is, `−E`) is kept in `t`.
#[derive(Debug, Clone)]
pub struct SgsFactors {
    t: SymmetricCsr,
}

/// Splits `T` into `D` and `E`; fails on a nonpositive diagonal entry.
pub fn sgs_factors(t: &LinearOperator) -> Result<SgsFactors> {
    let t = t.to_sparse()?;
    if let Some((index, &value)) = t.diag().iter().enumerate().find(|(_, &d)| !(d > 0.0)) {
        return Err(Error::NonpositiveDiagonal { index, value });
    }
    Ok(SgsFactors { t })
}

impl SgsFactors {
    pub fn dim(&self) -> usize {
        self.t.dim()
    }

    pub fn d(&self) -> Vector {
        Vector::from_column_slice(self.t.diag())
    }

    /// Dense `E` (strictly lower, `E = −tril(T, −1)`).
    pub fn e_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut e = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, v) in self.t.lower_row(i) {
                e[(i, j)] = -v;
            }
        }
        e
    }

    /// `𝕄⁻¹ r = (D − Eᵀ)⁻¹ D (D − E)⁻¹ r`.
    pub fn apply_mm_inv(&self, r: &Vector) -> Vector {
        let n = self.dim();
        let d = self.t.diag();
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut acc = r[i];
            for (j, v) in self.t.lower_row(i) {
                acc -= v * z[j];
            }
            z[i] = acc / d[i];
        }
        // Backward solve with the upper triangle, visiting rows of the lower
        // storage in reverse and scattering into the remaining right-hand side.
        let mut w: Vec<f64> = z.iter().zip(d).map(|(zi, di)| zi * di).collect();
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            x[i] = w[i] / d[i];
            let xi = x[i];
            for (j, v) in self.t.lower_row(i) {
                w[j] -= v * xi;
            }
        }
        Vector::from_vec(x)
    }

    /// `M x = E D⁻¹ Eᵀ x`.
    pub fn apply_m(&self, x: &Vector) -> Vector {
        let n = self.dim();
        let d = self.t.diag();
        // Eᵀx, then scale, then E; the two sign flips cancel.
        let mut etx = vec![0.0; n];
        for i in 0..n {
            for (j, v) in self.t.lower_row(i) {
                etx[j] += v * x[i];
            }
        }
        let z: Vec<f64> = etx.iter().zip(d).map(|(a, di)| a / di).collect();
        let mut out = Vector::zeros(n);
        for i in 0..n {
            out[i] = self.t.lower_row(i).map(|(j, v)| v * z[j]).sum();
        }
        out
    }

    /// `𝕄 x = T x + M x`.
    pub fn apply_mm(&self, x: &Vector) -> Vector {
        LinearOperator::Sparse(self.t.clone()).apply_unchecked(x) + self.apply_m(x)
    }
}

/// A preconditioner bound to a specific `T`.
#[derive(Debug, Clone)]
pub struct BuiltPreconditioner {
    t: LinearOperator,
    a: LinearOperator,
    dt: f64,
    factor: Factor,
    sweeps: usize,
    cg_tol: f64,
    cg_maxit: usize,
}

impl BuiltPreconditioner {
    pub fn t(&self) -> &LinearOperator {
        &self.t
    }

    pub fn dim(&self) -> usize {
        self.t.dim()
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.factor, Factor::Exact)
    }

    pub fn c_tilde(&self) -> Option<f64> {
        match self.factor {
            Factor::Jacobi { c_tilde, .. } => Some(c_tilde),
            _ => None,
        }
    }

    pub fn shift(&self) -> Option<f64> {
        match self.factor {
            Factor::Richardson { shift } => Some(shift),
            _ => None,
        }
    }

    /// One application of `𝕄⁻¹`.
    pub fn apply_mm_inv(&self, r: &Vector) -> Result<Vector> {
        check_dim(self.dim(), r.len())?;
        Ok(match &self.factor {
            Factor::Exact => {
                cg_solve(&self.t, r, &Vector::zeros(r.len()), self.cg_tol, self.cg_maxit)?.into_result()?
            }
            Factor::Jacobi { mm_diag, .. } => r.component_div(mm_diag),
            Factor::Sgs(f) => f.apply_mm_inv(r),
            Factor::Richardson { shift } => r / (2.0 / self.dt + shift),
        })
    }

    /// One application of `𝕄 = T + M`.
    pub fn apply_mm(&self, x: &Vector) -> Result<Vector> {
        Ok(self.t.apply(x)? + self.apply_m_single(x)?)
    }

    /// `M x = (𝕄 − T) x` for a single sweep, without forming `M`.
    pub fn apply_m_single(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        Ok(match &self.factor {
            Factor::Exact => Vector::zeros(x.len()),
            Factor::Jacobi { c_tilde, a_diag, .. } => a_diag.component_mul(x) * *c_tilde - self.a.apply_unchecked(x),
            Factor::Sgs(f) => f.apply_m(x),
            Factor::Richardson { shift } => x * *shift - self.a.apply_unchecked(x),
        })
    }

    /// `M_k x` for the effective weight of `k` sweeps. For `k > 1` this solves
    /// `𝕄_k⁻¹ z = x` by conjugate gradients and returns `z − T x`.
    pub fn apply_m(&self, x: &Vector) -> Result<Vector> {
        if self.sweeps == 1 || self.is_exact() {
            return self.apply_m_single(x);
        }
        check_dim(self.dim(), x.len())?;
        let mm_k_inv = |v: &Vector| -> Vector {
            let mut y = Vector::zeros(v.len());
            for _ in 0..self.sweeps {
                let r = v - self.t.apply_unchecked(&y);
                y += self.apply_mm_inv(&r).expect("non-exact factors are infallible");
            }
            y
        };
        let z = cg_with(mm_k_inv, x, &self.t.apply_unchecked(x), 1e-13, 20 * self.dim() + 200).into_result()?;
        Ok(z - self.t.apply_unchecked(x))
    }

    /// Runs the configured number of sweeps from `û`. The exact variant
    /// returns the CG solution regardless of the sweep count.
    pub fn sweep(&self, sys: &SubproblemSystem<'_>) -> Result<Vector> {
        check_dim(self.dim(), sys.b_n.len())?;
        check_dim(self.dim(), sys.u_hat.len())?;
        if self.is_exact() {
            return cg_solve(&self.t, &sys.b_n, &sys.u_hat, self.cg_tol, self.cg_maxit)?.into_result();
        }
        let mut y = sys.u_hat.clone();
        for _ in 0..self.sweeps {
            let r = &sys.b_n - self.t.apply_unchecked(&y);
            y += self.apply_mm_inv(&r)?;
        }
        Ok(y)
    }
}

/// True iff `λ_min(c̃ Diag(A) − A) ≥ −1e-10`.
///
/// A Gershgorin certificate is tried first, then a dense eigen-decomposition
/// for `k ≤ 2000`, then shifted power iteration.
pub fn jacobi_feasibility(a: &LinearOperator, c_tilde: f64) -> Result<bool> {
    let diag = a.diagonal();
    let n = a.dim();
    let sparse = match a {
        LinearOperator::Sparse(_) | LinearOperator::Diagonal(_) | LinearOperator::Identity(_) => Some(a.to_sparse()?),
        _ => None,
    };
    let dense = if sparse.is_none() { Some(a.to_dense()) } else { None };
    let mut offdiag_abs = vec![0.0; n];
    if let Some(s) = &sparse {
        for i in 0..n {
            for (j, v) in s.lower_row(i) {
                offdiag_abs[i] += v.abs();
                offdiag_abs[j] += v.abs();
            }
        }
    } else if let Some(m) = &dense {
        for i in 0..n {
            offdiag_abs[i] = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        }
    }
    for i in 0..n {
        if diag[i] < 0.0 || (diag[i] == 0.0 && offdiag_abs[i] > 0.0) {
            return Ok(false);
        }
    }
    // Gershgorin on c̃D − A: centers (c̃ − 1)dᵢ, radii Σ|aᵢⱼ|.
    if (0..n).all(|i| (c_tilde - 1.0) * diag[i] >= offdiag_abs[i]) {
        return Ok(true);
    }
    let b = |x: &Vector| diag.component_mul(x) * c_tilde - a.apply_unchecked(x);
    if n <= 2000 {
        let m = dense.unwrap_or_else(|| a.to_dense());
        let shifted = DMatrix::from_diagonal(&(&diag * c_tilde)) - m;
        let eig = SymmetricEigen::new(shifted);
        return Ok(eig.eigenvalues.min() >= -1e-10);
    }
    // λ_min(B) = ρ − λ_max(ρI − B) with ρ bounding the spectrum of B.
    let rho = (0..n)
        .map(|i| ((c_tilde - 1.0) * diag[i]).abs() + offdiag_abs[i])
        .fold(0.0, f64::max);
    let top = power_iteration_with(|x| x * rho - b(x), n, 1e-12, 20_000, 0xfea5);
    Ok(rho - top >= -1e-10 * rho.max(1.0))
}

/// Smallest power of two `c̃ ≥ 1` with `c̃ Diag(A) ⪰ A`.
pub fn auto_c_tilde(a: &LinearOperator) -> Result<f64> {
    let mut c = 1.0;
    for _ in 0..=20 {
        if jacobi_feasibility(a, c)? {
            return Ok(c);
        }
        c *= 2.0;
    }
    Err(Error::InfeasiblePreconditioner(
        "no c̃ ≤ 2²⁰ makes c̃ Diag(A) − A positive semidefinite".into(),
    ))
}

/// Validates a requested Richardson shift against `λ_max(A)`, or picks one
/// just above it.
pub fn richardson_shift(a: &LinearOperator, requested: Option<f64>) -> Result<f64> {
    let lmax = power_iteration(a, 1e-8, 1000, 0x5eed);
    match requested {
        Some(s) if s < lmax * (1.0 - 1e-6) => Err(Error::InfeasiblePreconditioner(format!(
            "shift {s} below the largest eigenvalue estimate {lmax}"
        ))),
        Some(s) => Ok(s),
        None => Ok(lmax * (1.0 + 1e-6)),
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite operator, by power
/// iteration on a seeded random start. Stops when successive Rayleigh
/// quotients agree to `tol` relative or after `maxit` products.
pub fn power_iteration(op: &LinearOperator, tol: f64, maxit: usize, seed: u64) -> f64 {
    power_iteration_with(|x| op.apply_unchecked(x), op.dim(), tol, maxit, seed)
}

pub(crate) fn power_iteration_with(
    apply: impl Fn(&Vector) -> Vector,
    n: usize,
    tol: f64,
    maxit: usize,
    seed: u64,
) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    x /= x.norm();
    let mut lambda = 0.0;
    for _ in 0..maxit {
        let y = apply(&x);
        let next = x.dot(&y);
        let ny = y.norm();
        if ny == 0.0 {
            return 0.0;
        }
        x = y / ny;
        if (next - lambda).abs() <= tol * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitting::testing::QuadCubic;
    use crate::splitting::AffinePart;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
        Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        b.tr_mul(&b) / n as f64 + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn build_t_examples() {
        let t = build_t(&LinearOperator::Dense(dmatrix![1.0]), 1.0).unwrap();
        assert_eq!(t.to_dense(), dmatrix![3.0]);
        let t = build_t(&LinearOperator::Zero(2), 2.0).unwrap();
        assert_eq!(t.to_dense(), DMatrix::identity(2, 2));
        let t = build_t(&LinearOperator::Diagonal(dvector![1.0, 2.0]), 2.0 / 3.0).unwrap();
        assert_relative_eq!(t.to_dense(), dmatrix![4.0, 0.0; 0.0, 5.0], epsilon = 1e-14);
        assert!(build_t(&LinearOperator::Zero(1), 0.0).is_err());
    }

    fn scalar_problem() -> QuadCubic {
        QuadCubic {
            affine: AffinePart::new(LinearOperator::Zero(1), Vector::zeros(1)).unwrap(),
            gamma: 0.0,
            lip: 1.0,
        }
    }

    #[test]
    fn rhs_examples() {
        let p = scalar_problem();
        let s = SurrogateState::new(&p, dvector![0.0], dvector![0.0], 1.0).unwrap();
        assert_eq!(rhs_bn(&s, &p).unwrap(), dvector![0.0]);
        let s = SurrogateState::new(&p, dvector![1.0], dvector![0.0], 2.0 / 3.0).unwrap();
        assert_relative_eq!(rhs_bn(&s, &p).unwrap()[0], 4.0, epsilon = 1e-14);

        // f(u) = u at u = 1 via explicit cached values.
        let mut s = SurrogateState::new(&p, dvector![1.0], dvector![1.0], 2.0 / 3.0).unwrap();
        s.f_n = dvector![1.0];
        s.f_nm1 = dvector![1.0];
        assert_relative_eq!(rhs_bn(&s, &p).unwrap()[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn rhs_requires_affine_part() {
        struct NoAffine;
        impl Problem for NoAffine {
            fn dim(&self) -> usize {
                1
            }
            fn convex_value(&self, u: &Vector) -> f64 {
                u[0].cosh()
            }
            fn convex_grad(&self, u: &Vector) -> Vector {
                u.map(f64::sinh)
            }
            fn smooth_value(&self, _: &Vector) -> f64 {
                0.0
            }
            fn smooth_grad(&self, u: &Vector) -> Vector {
                Vector::zeros(u.len())
            }
            fn lipschitz(&self) -> f64 {
                1.0
            }
        }
        let s = SurrogateState::new(&NoAffine, dvector![0.0], dvector![0.0], 1.0).unwrap();
        assert!(matches!(rhs_bn(&s, &NoAffine), Err(Error::MissingAffinePart(_))));
    }

    #[test]
    fn sweep_examples() {
        // Exact, scalar T = 2 (A = 1, δt = 2), b = 4.
        let a = LinearOperator::Dense(dmatrix![1.0]);
        let pc = Preconditioner::exact(1e-14).build(&a, 2.0).unwrap();
        let sys = SubproblemSystem {
            t: pc.t(),
            b_n: dvector![4.0],
            u_hat: dvector![0.0],
        };
        assert_relative_eq!(pc.sweep(&sys).unwrap()[0], 2.0, epsilon = 1e-14);

        // SGS with T = [[2, −1], [−1, 2]]: A = [[1, −1], [−1, 1]], δt = 2.
        let a = LinearOperator::Dense(dmatrix![1.0, -1.0; -1.0, 1.0]);
        let pc = Preconditioner::sgs(1).build(&a, 2.0).unwrap();
        assert_eq!(pc.t().to_dense(), dmatrix![2.0, -1.0; -1.0, 2.0]);
        let sys = SubproblemSystem {
            t: pc.t(),
            b_n: dvector![1.0, 1.0],
            u_hat: dvector![0.0, 0.0],
        };
        assert_eq!(pc.sweep(&sys).unwrap(), dvector![0.875, 0.75]);
    }

    #[test]
    fn sweep_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = LinearOperator::Dense(random_spd(&mut rng, 10));
        let u = random_vec(&mut rng, 10);
        for pc in [
            Preconditioner::exact(1e-14),
            Preconditioner::jacobi(None, 3),
            Preconditioner::sgs(2),
            Preconditioner::richardson(None),
        ] {
            let built = pc.build(&a, 0.5).unwrap();
            let b = built.t().apply(&u).unwrap();
            let sys = SubproblemSystem {
                t: built.t(),
                b_n: b,
                u_hat: u.clone(),
            };
            assert!((built.sweep(&sys).unwrap() - &u).norm() <= 1e-10);
        }
    }

    #[test]
    fn sgs_factor_examples() {
        let t = LinearOperator::Dense(dmatrix![2.0, -1.0; -1.0, 2.0]);
        let f = sgs_factors(&t).unwrap();
        assert_eq!(f.d(), dvector![2.0, 2.0]);
        assert_eq!(f.e_dense(), dmatrix![0.0, 0.0; 1.0, 0.0]);
        let m = LinearOperator::Dense(DMatrix::identity(2, 2));
        let cols: Vec<Vector> = (0..2)
            .map(|j| f.apply_m(&m.to_dense().column(j).into_owned()))
            .collect();
        assert_eq!(cols[0], dvector![0.0, 0.0]);
        assert_eq!(cols[1], dvector![0.0, 0.5]);

        let diag = sgs_factors(&LinearOperator::Diagonal(dvector![1.0, 3.0])).unwrap();
        assert_eq!(diag.apply_m(&dvector![1.0, 1.0]), dvector![0.0, 0.0]);
        assert_eq!(diag.apply_mm_inv(&dvector![1.0, 3.0]), dvector![1.0, 1.0]);

        let bad = LinearOperator::Dense(dmatrix![0.0, 1.0; 1.0, 2.0]);
        assert!(matches!(
            sgs_factors(&bad),
            Err(Error::NonpositiveDiagonal { index: 0, .. })
        ));
    }

    #[test]
    fn implicit_m_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = LinearOperator::Dense(random_spd(&mut rng, 6));
        let exact = Preconditioner::exact(1e-12).build(&a, 1.0).unwrap();
        let x = random_vec(&mut rng, 6);
        assert_eq!(exact.apply_m(&x).unwrap(), Vector::zeros(6));

        let a = LinearOperator::Dense(dmatrix![1.0, -1.0; -1.0, 1.0]);
        let sgs = Preconditioner::sgs(1).build(&a, 2.0).unwrap();
        assert_eq!(sgs.apply_m(&dvector![0.0, 1.0]).unwrap(), dvector![0.0, 0.5]);

        let rich = Preconditioner::richardson(Some(3.0))
            .build(&LinearOperator::Identity(2), 1.0)
            .unwrap();
        assert_eq!(rich.apply_m(&dvector![1.0, 1.0]).unwrap(), dvector![2.0, 2.0]);
    }

    #[test]
    fn jacobi_feasibility_examples() {
        let d = LinearOperator::Diagonal(dvector![1.0, 5.0]);
        assert!(jacobi_feasibility(&d, 1.0).unwrap());
        let ones = LinearOperator::Dense(dmatrix![1.0, 1.0; 1.0, 1.0]);
        assert!(jacobi_feasibility(&ones, 2.0).unwrap());
        assert!(!jacobi_feasibility(&ones, 1.0).unwrap());
        let zero_row = LinearOperator::Dense(dmatrix![0.0, 1.0; 1.0, 1.0]);
        assert!(!jacobi_feasibility(&zero_row, 4.0).unwrap());
        assert_eq!(auto_c_tilde(&ones).unwrap(), 2.0);
    }

    #[test]
    fn jacobi_feasibility_power_route_agrees() {
        // A 2100-node path Laplacian plus identity exceeds the dense limit.
        let n = 2100;
        let edges: Vec<_> = (1..n).map(|i| (i, i - 1, 1.0)).collect();
        let lap = crate::linops::laplacian_from_edges(n, &edges).unwrap();
        let a = LinearOperator::Sparse(lap.to_sparse().unwrap().shifted(0.01));
        assert!(!jacobi_feasibility(&a, 1.0).unwrap());
        assert!(jacobi_feasibility(&a, 2.0).unwrap());
    }

    #[test]
    fn mm_equals_t_plus_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = LinearOperator::Dense(random_spd(&mut rng, 12));
        for pc in [
            Preconditioner::exact(1e-14),
            Preconditioner::jacobi(None, 1),
            Preconditioner::sgs(1),
            Preconditioner::richardson(None),
        ] {
            let built = pc.build(&a, 0.7).unwrap();
            for _ in 0..20 {
                let x = random_vec(&mut rng, 12);
                let mm = built.apply_mm(&x).unwrap();
                let back = built.apply_mm_inv(&mm).unwrap();
                assert!((&back - &x).norm() <= 1e-9 * x.norm(), "{:?}", pc.kind);
                let m = built.apply_m(&x).unwrap();
                assert!(m.dot(&x) >= -1e-10 * x.norm_squared(), "{:?}", pc.kind);
            }
        }
    }

    #[test]
    fn sgs_matches_dense_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let t = random_spd(&mut rng, 50);
        let f = sgs_factors(&LinearOperator::Dense(t.clone())).unwrap();
        let d = DMatrix::from_diagonal(&f.d());
        let e = f.e_dense();
        let dinv = DMatrix::from_diagonal(&f.d().map(|v| 1.0 / v));
        let mm = (&d - &e) * &dinv * (&d - e.transpose());
        let m = &e * &dinv * e.transpose();
        assert!((&mm - (&t + &m)).amax() <= 1e-12 * mm.amax());
        assert!((&t - (&d - &e - e.transpose())).amax() == 0.0);
        for _ in 0..10 {
            let x = random_vec(&mut rng, 50);
            assert!((f.apply_mm(&x) - &mm * &x).norm() <= 1e-12 * (&mm * &x).norm());
            assert!((f.apply_mm_inv(&(&mm * &x)) - &x).norm() <= 1e-10 * x.norm());
        }
    }

    #[test]
    fn multi_sweep_converges_to_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 50;
        // Unit diagonal, strictly diagonally dominant.
        let mut t: DMatrix<f64> = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                if rng.random_bool(0.2) {
                    let v = rng.random_range(-1.0..1.0);
                    t[(i, j)] = v;
                    t[(j, i)] = v;
                }
            }
        }
        for i in 0..n {
            let off: f64 = t.row(i).iter().map(|v| v.abs()).sum();
            t[(i, i)] = 1.0 + off;
        }
        let scale = DMatrix::from_diagonal(&t.diagonal().map(|v: f64| 1.0 / v.sqrt()));
        let t = &scale * t * &scale;
        // Realize T via A = T − (2/δt)I with δt large enough that A ⪰ 0.
        let dt = 1e6;
        let a = LinearOperator::Dense(&t - DMatrix::identity(n, n) * (2.0 / dt));
        let built = Preconditioner::sgs(200).build(&a, dt).unwrap();
        let b = random_vec(&mut rng, n);
        let sys = SubproblemSystem {
            t: built.t(),
            b_n: b.clone(),
            u_hat: Vector::zeros(n),
        };
        let y = built.sweep(&sys).unwrap();
        assert!((built.t().apply(&y).unwrap() - &b).norm() <= 1e-8);
        let direct = t.cholesky().unwrap().solve(&b);
        let exact = Preconditioner::exact(1e-13).build(&a, dt).unwrap().sweep(&sys).unwrap();
        assert!((&exact - &direct).norm() <= 1e-8 * direct.norm());
    }

    #[test]
    fn multi_sweep_effective_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 8;
        let a = LinearOperator::Dense(random_spd(&mut rng, n));
        for pc in [Preconditioner::sgs(3), Preconditioner::jacobi(None, 4)] {
            let built = pc.build(&a, 0.5).unwrap();
            let u_hat = random_vec(&mut rng, n);
            let b = random_vec(&mut rng, n);
            let sys = SubproblemSystem {
                t: built.t(),
                b_n: b.clone(),
                u_hat: u_hat.clone(),
            };
            let y = built.sweep(&sys).unwrap();
            // (T + M_k)(y − û) = b − Tû.
            let lhs = built.t().apply(&(&y - &u_hat)).unwrap() + built.apply_m(&(&y - &u_hat)).unwrap();
            let rhs = &b - built.t().apply(&u_hat).unwrap();
            assert!((&lhs - &rhs).norm() <= 1e-8 * rhs.norm());
            let x = random_vec(&mut rng, n);
            assert!(built.apply_m(&x).unwrap().dot(&x) >= -1e-10);
        }
    }

    #[test]
    fn power_iteration_matches_eigen() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = DMatrix::from_fn(30, 60, |_, _| rng.random_range(-1.0..1.0));
        let g = LinearOperator::Gram(std::sync::Arc::new(b.clone()));
        let est = power_iteration(&g, 1e-10, 5000, 1);
        let truth = SymmetricEigen::new(b.tr_mul(&b)).eigenvalues.max();
        assert!((est - truth).abs() <= 1e-6 * truth);
    }
}
