//! The split objective `E = H + F` and the per-step surrogate energies
//! `Eⁿ = Hⁿ − Fⁿ` built from the two-step history `(uⁿ, uⁿ⁻¹)`.

use crate::error::{check_dim, Error, Result};
use crate::linops::{LinearOperator, Vector};

/// Affine structure `h(u) = A u − b₀` of the convex gradient.
#[derive(Debug, Clone)]
pub struct AffinePart {
    pub a: LinearOperator,
    pub b0: Vector,
}

impl AffinePart {
    pub fn new(a: LinearOperator, b0: Vector) -> Result<Self> {
        check_dim(a.dim(), b0.len())?;
        Ok(Self { a, b0 })
    }
}

/// An objective `E = H + F` with `H` convex and `f = ∇F` Lipschitz.
///
/// Problems are shared read-only between concurrent runs.
pub trait Problem: Sync {
    fn dim(&self) -> usize;

    /// `H(u)`.
    fn convex_value(&self, u: &Vector) -> f64;
    /// `h(u) = ∇H(u)`.
    fn convex_grad(&self, u: &Vector) -> Vector;
    /// `F(u)`.
    fn smooth_value(&self, u: &Vector) -> f64;
    /// `f(u) = ∇F(u)`.
    fn smooth_grad(&self, u: &Vector) -> Vector;
    /// Declared Lipschitz constant of `f`.
    fn lipschitz(&self) -> f64;

    /// Lipschitz constant valid on a region containing `u`. Problems whose
    /// `f` is only locally Lipschitz override this.
    fn lipschitz_covering(&self, _u: &Vector) -> f64 {
        self.lipschitz()
    }

    /// `Some` when `h(u) = A u − b₀` exactly.
    fn affine_part(&self) -> Option<&AffinePart> {
        None
    }

    /// A quadratic part `Q ⪰ 0` of `H` such that `h(y) − Q y` acts
    /// coordinatewise. Used by the Richardson-shift preconditioner.
    fn quadratic_part(&self) -> Option<&LinearOperator> {
        None
    }

    /// Solves `c·y + (h(y) − Q y) = r` for `c > 0` when `h − Q` is separable.
    fn separable_resolvent(&self, _c: f64, _r: &Vector) -> Option<Vector> {
        None
    }

    /// Problem-specific quality score of an iterate (e.g. DICE against a
    /// ground truth), used by quality-bound stopping.
    fn quality(&self, _u: &Vector) -> Option<f64> {
        None
    }

    fn energy(&self, u: &Vector) -> f64 {
        self.convex_value(u) + self.smooth_value(u)
    }

    fn gradient(&self, u: &Vector) -> Vector {
        self.convex_grad(u) + self.smooth_grad(u)
    }
}

/// Largest admissible time step `2/(3L)`.
pub fn dt_bound(lipschitz: f64) -> Result<f64> {
    if !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return Err(Error::InvalidParameter {
            name: "lipschitz",
            reason: format!("must be positive and finite, got {lipschitz}"),
        });
    }
    Ok(2.0 / (3.0 * lipschitz))
}

/// Two-step history defining `Eⁿ`, with `f(uⁿ)` and `f(uⁿ⁻¹)` cached.
#[derive(Debug, Clone)]
pub struct SurrogateState {
    pub u_n: Vector,
    pub u_nm1: Vector,
    pub dt: f64,
    pub f_n: Vector,
    pub f_nm1: Vector,
}

impl SurrogateState {
    pub fn new<P: Problem + ?Sized>(p: &P, u_n: Vector, u_nm1: Vector, dt: f64) -> Result<Self> {
        check_dim(p.dim(), u_n.len())?;
        check_dim(p.dim(), u_nm1.len())?;
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {dt}"),
            });
        }
        let f_n = p.smooth_grad(&u_n);
        let f_nm1 = p.smooth_grad(&u_nm1);
        Ok(Self {
            u_n,
            u_nm1,
            dt,
            f_n,
            f_nm1,
        })
    }

    /// Advances the history: `uⁿ⁻¹ ← uⁿ`, `uⁿ ← u_next`.
    pub fn shift<P: Problem + ?Sized>(&mut self, p: &P, u_next: Vector) {
        let f_next = p.smooth_grad(&u_next);
        self.u_nm1 = std::mem::replace(&mut self.u_n, u_next);
        self.f_nm1 = std::mem::replace(&mut self.f_n, f_next);
    }

    fn f_jump(&self) -> Vector {
        &self.f_n - &self.f_nm1
    }

    /// `Hⁿ(u) = H(u) + (1/δt)‖u − uⁿ‖²`.
    pub fn h_n<P: Problem + ?Sized>(&self, p: &P, u: &Vector) -> f64 {
        p.convex_value(u) + (u - &self.u_n).norm_squared() / self.dt
    }

    /// `Fⁿ(u) = (1/(3δt))‖u − uⁿ⁻¹‖² − F(u) − ⟨f(uⁿ) − f(uⁿ⁻¹), u − uⁿ⁻¹⟩`.
    pub fn f_n_value<P: Problem + ?Sized>(&self, p: &P, u: &Vector) -> f64 {
        let w = u - &self.u_nm1;
        w.norm_squared() / (3.0 * self.dt) - p.smooth_value(u) - self.f_jump().dot(&w)
    }

    /// `Eⁿ(u)`, evaluated directly rather than as `Hⁿ − Fⁿ`.
    pub fn energy<P: Problem + ?Sized>(&self, p: &P, u: &Vector) -> f64 {
        let w = u - &self.u_nm1;
        p.convex_value(u) + (u - &self.u_n).norm_squared() / self.dt - w.norm_squared() / (3.0 * self.dt)
            + p.smooth_value(u)
            + self.f_jump().dot(&w)
    }

    /// `∇Hⁿ(u) = h(u) + (2/δt)(u − uⁿ)`.
    pub fn grad_h_n<P: Problem + ?Sized>(&self, p: &P, u: &Vector) -> Vector {
        p.convex_grad(u) + (u - &self.u_n) * (2.0 / self.dt)
    }

    /// `∇Fⁿ(u) = (2/(3δt))(u − uⁿ⁻¹) − f(u) − (f(uⁿ) − f(uⁿ⁻¹))`.
    pub fn grad_f_n<P: Problem + ?Sized>(&self, p: &P, u: &Vector) -> Vector {
        (u - &self.u_nm1) * (2.0 / (3.0 * self.dt)) - p.smooth_grad(u) - self.f_jump()
    }

    /// `∇Eⁿ(y) = h(y) + (2/δt)(y − uⁿ) − (2/(3δt))(y − uⁿ⁻¹) + f(y) + f(uⁿ) − f(uⁿ⁻¹)`.
    pub fn grad<P: Problem + ?Sized>(&self, p: &P, y: &Vector) -> Vector {
        let mut g = p.convex_grad(y) + p.smooth_grad(y);
        g.axpy(2.0 / self.dt, &(y - &self.u_n), 1.0);
        g.axpy(-2.0 / (3.0 * self.dt), &(y - &self.u_nm1), 1.0);
        g += &self.f_n;
        g -= &self.f_nm1;
        g
    }

    /// Explicit part of the subproblem right-hand side,
    /// `(2/(3δt))(4uⁿ − uⁿ⁻¹) − (2f(uⁿ) − f(uⁿ⁻¹))`.
    pub fn explicit_rhs(&self) -> Vector {
        let mut r = (&self.u_n * 4.0 - &self.u_nm1) * (2.0 / (3.0 * self.dt));
        r.axpy(-2.0, &self.f_n, 1.0);
        r += &self.f_nm1;
        r
    }
}

/// Coefficient `L/2 + 1/(3δt)` of the Lyapunov distance term.
pub fn lyapunov_coefficient(lipschitz: f64, dt: f64) -> f64 {
    0.5 * lipschitz + 1.0 / (3.0 * dt)
}

/// `A(x, y) = E(x) + (L/2 + 1/(3δt))‖x − y‖²`, plus `(1/6)‖x − y‖²_M` when
/// `m` is given.
pub fn lyapunov<P: Problem + ?Sized>(
    p: &P,
    lipschitz: f64,
    dt: f64,
    x: &Vector,
    y: &Vector,
    m: Option<&LinearOperator>,
) -> Result<f64> {
    let diff = x - y;
    let mut a = p.energy(x) + lyapunov_coefficient(lipschitz, dt) * diff.norm_squared();
    if let Some(m) = m {
        a += m.quad_form(&diff)? / 6.0;
    }
    Ok(a)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    pub use crate::problems::quartic::QuadCubic;

    pub fn scalar_half_square() -> QuadCubic {
        QuadCubic {
            affine: AffinePart::new(LinearOperator::Identity(1), Vector::zeros(1)).unwrap(),
            gamma: 0.0,
            lip: 1e-12,
        }
    }
}
