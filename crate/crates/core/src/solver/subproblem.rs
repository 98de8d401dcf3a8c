//! Solvers for the strongly convex step subproblem
//!
//! ```text
//! (2/(3δt))(3y − 4uⁿ + uⁿ⁻¹) + M(y − û) + h(y) + 2f(uⁿ) − f(uⁿ⁻¹) = 0.
//! ```

use crate::error::{Error, Result};
use crate::linops::{LinearOperator, Vector};
use crate::precond::{
    rhs_bn, richardson_shift, BuiltPreconditioner, Preconditioner, PreconditionerKind, SubproblemSystem,
};
use crate::splitting::{Problem, SurrogateState};

/// How the subproblem is solved for a given problem and preconditioner.
#[derive(Debug, Clone)]
pub enum Strategy {
    /// `h` affine: preconditioned sweeps on `T y = bⁿ`.
    Linear(Box<BuiltPreconditioner>),
    /// `M = λI − Q` cancels the quadratic part and leaves a separable
    /// resolvent `(2/δt + λ) y + (h − Q)(y) = r`.
    Resolvent { shift: f64, q: LinearOperator },
    /// Nonlinear conjugate gradients on the subproblem objective with an
    /// explicit weight `M`.
    Nonlinear {
        weight: LinearOperator,
        tol: f64,
        maxit: usize,
    },
}

/// Solution of one subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub y: Vector,
    /// `M(y − û)` when it is available without extra work.
    pub m_residual: Option<Vector>,
}

impl Strategy {
    /// Picks the strategy: affine problems use sweeps; a Richardson shift on a
    /// problem with a separable resolvent uses the closed form; anything else
    /// falls back to nonlinear CG.
    pub fn select<P: Problem + ?Sized>(p: &P, pc: &Preconditioner, dt: f64) -> Result<Self> {
        if let Some(affine) = p.affine_part() {
            return Ok(Strategy::Linear(Box::new(pc.build(&affine.a, dt)?)));
        }
        match pc.kind {
            PreconditionerKind::RichardsonShift => {
                let q = p.quadratic_part().ok_or(Error::MissingAffinePart(
                    "the Richardson shift needs a quadratic part of H",
                ))?;
                let shift = richardson_shift(q, pc.shift)?;
                let probe = Vector::zeros(p.dim());
                if p.separable_resolvent(1.0, &probe).is_some() {
                    Ok(Strategy::Resolvent { shift, q: q.clone() })
                } else {
                    let weight = LinearOperator::Identity(p.dim())
                        .scaled(shift)
                        .plus(q.clone().scaled(-1.0))?;
                    Ok(Strategy::nonlinear(weight, p.dim()))
                }
            }
            PreconditionerKind::Exact => Ok(Strategy::nonlinear(LinearOperator::Zero(p.dim()), p.dim())),
            PreconditionerKind::Jacobi | PreconditionerKind::Sgs => {
                Err(Error::MissingAffinePart("Jacobi and SGS sweeps need h(u) = Au − b₀"))
            }
        }
    }

    pub fn nonlinear(weight: LinearOperator, dim: usize) -> Self {
        Strategy::Nonlinear {
            weight,
            tol: 1e-12,
            maxit: 20 * dim + 200,
        }
    }

    /// Applies the (effective) weight `M`.
    pub fn apply_m(&self, x: &Vector) -> Result<Vector> {
        match self {
            Strategy::Linear(pc) => pc.apply_m(x),
            Strategy::Resolvent { shift, q } => Ok(x * *shift - q.apply(x)?),
            Strategy::Nonlinear { weight, .. } => weight.apply(x),
        }
    }

    /// Whether `M ≡ 0`.
    pub fn weight_is_zero(&self) -> bool {
        match self {
            Strategy::Linear(pc) => pc.is_exact(),
            Strategy::Resolvent { .. } => false,
            Strategy::Nonlinear { weight, .. } => matches!(weight, LinearOperator::Zero(_)),
        }
    }

    pub fn solve<P: Problem + ?Sized>(&self, p: &P, s: &SurrogateState, u_hat: &Vector) -> Result<SubproblemSolution> {
        match self {
            Strategy::Linear(pc) => {
                let b_n = rhs_bn(s, p)?;
                let sys = SubproblemSystem {
                    t: pc.t(),
                    b_n,
                    u_hat: u_hat.clone(),
                };
                let y = pc.sweep(&sys)?;
                let m_residual = if pc.is_exact() {
                    Vector::zeros(y.len())
                } else {
                    &sys.b_n - pc.t().apply(&y)?
                };
                Ok(SubproblemSolution {
                    y,
                    m_residual: Some(m_residual),
                })
            }
            Strategy::Resolvent { shift, q } => {
                let c = 2.0 / s.dt + shift;
                let r = s.explicit_rhs() + u_hat * *shift - q.apply(u_hat)?;
                let y = p
                    .separable_resolvent(c, &r)
                    .ok_or(Error::MissingAffinePart("problem stopped providing a resolvent"))?;
                Ok(SubproblemSolution { y, m_residual: None })
            }
            Strategy::Nonlinear { weight, tol, maxit } => {
                let y = nonlinear_cg(p, s, u_hat, weight, *tol, *maxit)?;
                Ok(SubproblemSolution { y, m_residual: None })
            }
        }
    }
}

/// Gradient of the subproblem objective
/// `φ(y) = H(y) + (1/δt)‖y‖² − ⟨r, y⟩ + ½‖y − û‖²_M`, with `r` the explicit
/// right-hand side.
fn sub_grad<P: Problem + ?Sized>(
    p: &P,
    s: &SurrogateState,
    rhs: &Vector,
    u_hat: &Vector,
    m: &LinearOperator,
    y: &Vector,
) -> Vector {
    let mut g = p.convex_grad(y) + y * (2.0 / s.dt) - rhs;
    g += m.apply_unchecked(&(y - u_hat));
    g
}

/// Polak–Ribière+ nonlinear CG with an exact line search on the monotone
/// directional derivative. Stops at `‖∇φ‖ ≤ tol·max(1, ‖r‖)`.
pub fn nonlinear_cg<P: Problem + ?Sized>(
    p: &P,
    s: &SurrogateState,
    u_hat: &Vector,
    m: &LinearOperator,
    tol: f64,
    maxit: usize,
) -> Result<Vector> {
    let rhs = s.explicit_rhs();
    let target = tol * rhs.norm().max(1.0);
    let grad = |y: &Vector| sub_grad(p, s, &rhs, u_hat, m, y);
    let mut y = u_hat.clone();
    let mut g = grad(&y);
    let mut dir = -&g;
    for it in 0..maxit {
        let gnorm = g.norm();
        if gnorm <= target {
            return Ok(y);
        }
        if dir.dot(&g) >= 0.0 {
            dir = -&g;
        }
        let step = exact_step(
            |t| {
                let mut z = y.clone();
                z.axpy(t, &dir, 1.0);
                grad(&z).dot(&dir)
            },
            dir.dot(&g),
            1.0 / (1.0 + dir.norm()),
        );
        y.axpy(step, &dir, 1.0);
        let g_new = grad(&y);
        let beta = (g_new.dot(&(&g_new - &g)) / g.norm_squared()).max(0.0);
        dir = &dir * beta - &g_new;
        g = g_new;
        if it % 50 == 49 {
            dir = -&g;
        }
    }
    Err(Error::CgNotConverged {
        iterations: maxit,
        residual: g.norm(),
    })
}

/// Root of the nondecreasing function `phi'(t)` on `t > 0` given
/// `phi'(0) = d0 < 0`, by bracketing and Illinois regula falsi.
fn exact_step(dphi: impl Fn(f64) -> f64, d0: f64, t0: f64) -> f64 {
    let (mut lo, mut flo) = (0.0, d0);
    let mut hi = t0;
    let mut fhi = dphi(hi);
    let mut grow = 0;
    while fhi < 0.0 && grow < 200 {
        lo = hi;
        flo = fhi;
        hi *= 2.0;
        fhi = dphi(hi);
        grow += 1;
    }
    if fhi < 0.0 {
        return hi;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let t = (lo * fhi - hi * flo) / (fhi - flo);
        let t = if t.is_finite() && t > lo && t < hi {
            t
        } else {
            0.5 * (lo + hi)
        };
        let ft = dphi(t);
        if ft == 0.0 {
            return t;
        }
        if ft < 0.0 {
            lo = t;
            flo = ft;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = t;
            fhi = ft;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
        if fhi.abs().max(flo.abs()) <= 1e-14 * d0.abs() {
            break;
        }
    }
    if flo.abs() < fhi.abs() {
        lo
    } else {
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitting::testing::QuadCubic;
    use crate::splitting::AffinePart;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// The same quadratic-plus-cubic problem with the affine structure hidden.
    struct Opaque(QuadCubic);

    impl Problem for Opaque {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn convex_value(&self, u: &Vector) -> f64 {
            self.0.convex_value(u)
        }
        fn convex_grad(&self, u: &Vector) -> Vector {
            self.0.convex_grad(u)
        }
        fn smooth_value(&self, u: &Vector) -> f64 {
            self.0.smooth_value(u)
        }
        fn smooth_grad(&self, u: &Vector) -> Vector {
            self.0.smooth_grad(u)
        }
        fn lipschitz(&self) -> f64 {
            self.0.lipschitz()
        }
    }

    #[test]
    fn nonlinear_cg_matches_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 15;
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = QuadCubic {
            affine: AffinePart::new(
                LinearOperator::Dense(b.tr_mul(&b)),
                Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
            )
            .unwrap(),
            gamma: 0.5,
            lip: 1.0,
        };
        let un = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let unm1 = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let s = SurrogateState::new(&p, un.clone(), unm1, 0.5).unwrap();
        let direct = Strategy::select(&p, &Preconditioner::exact(1e-14), 0.5)
            .unwrap()
            .solve(&p, &s, &un)
            .unwrap()
            .y;
        let opaque = Opaque(p);
        let strat = Strategy::select(&opaque, &Preconditioner::exact(1e-14), 0.5).unwrap();
        assert!(matches!(strat, Strategy::Nonlinear { .. }));
        let y = strat.solve(&opaque, &s, &un).unwrap().y;
        assert!((&y - &direct).norm() <= 1e-9 * direct.norm().max(1.0));
    }

    #[test]
    fn exact_step_finds_root() {
        let t = exact_step(|t| 3.0 * (t - 2.5), -7.5, 0.1);
        assert!((t - 2.5).abs() < 1e-12);
        let t = exact_step(|t| (t - 0.3).powi(3) + (t - 0.3), -0.327, 1.0);
        assert!((t - 0.3).abs() < 1e-10);
    }
}
