//! Time-accuracy of the preconditioned scheme read as an integrator of the
//! gradient flow `u' = −∇E(u)`.
//!
//! With `T = (2/δt)I + A` the step is BDF2 with time step `τ = 3δt/4`, so the
//! history `(u⁰, u⁻¹)` is seeded with `u⁻¹ ≈ u(−τ)` from a backward RK4
//! integration. The scheme is run with `λ = 0` to a fixed final time.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linops::Vector;
use crate::precond::{Preconditioner, PreconditionerKind};
use crate::solver::subproblem::Strategy;
use crate::solver::Anchor;
use crate::splitting::{Problem, SurrogateState};

use super::loglog_slope;

/// Flow time covered by one step of size `δt`.
pub fn effective_step(dt: f64) -> f64 {
    0.75 * dt
}

/// `u(−τ)` for the flow through `u0`, by RK4 on `v' = ∇E(v)`.
pub fn backward_start<P: Problem + ?Sized>(p: &P, u0: &Vector, tau: f64, substeps: usize) -> Vector {
    let h = tau / substeps.max(1) as f64;
    let mut v = u0.clone();
    for _ in 0..substeps.max(1) {
        let k1 = p.gradient(&v);
        let k2 = p.gradient(&(&v + &k1 * (0.5 * h)));
        let k3 = p.gradient(&(&v + &k2 * (0.5 * h)));
        let k4 = p.gradient(&(&v + &k3 * h));
        v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    v
}

/// End state of one fixed-step integration.
#[derive(Debug, Clone)]
pub struct Integration {
    pub u_final: Vector,
    pub steps: usize,
    /// `max ‖M(yⁿ − ûⁿ)‖` over the run.
    pub max_m_residual: f64,
}

/// Runs `final_time / τ` steps of the scheme with `λ = 0` from `u0`.
pub fn integrate<P: Problem + ?Sized>(
    p: &P,
    pc: &Preconditioner,
    anchor: Anchor,
    dt: f64,
    u0: &Vector,
    final_time: f64,
) -> Result<Integration> {
    let tau = effective_step(dt);
    let exact = final_time / tau;
    let steps = exact.round() as usize;
    if steps == 0 || (exact - steps as f64).abs() > 1e-8 * exact {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("final time {final_time} is not a whole number of steps 3δt/4 = {tau}"),
        });
    }
    let strategy = Strategy::select(p, pc, dt)?;
    let u_m1 = backward_start(p, u0, tau, 64);
    let mut state = SurrogateState::new(p, u0.clone(), u_m1, dt)?;
    let mut max_m_residual = 0.0_f64;
    for _ in 0..steps {
        let u_hat = match anchor {
            Anchor::N => state.u_n.clone(),
            Anchor::T => (&state.u_n * 4.0 - &state.u_nm1) / 3.0,
        };
        let sol = strategy.solve(p, &state, &u_hat)?;
        let r = match sol.m_residual {
            Some(r) => r,
            None => strategy.apply_m(&(&sol.y - &u_hat))?,
        };
        max_m_residual = max_m_residual.max(r.norm());
        if sol.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("order integration"));
        }
        state.shift(p, sol.y);
    }
    Ok(Integration {
        u_final: state.u_n,
        steps,
        max_m_residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderRow {
    pub dt: f64,
    pub steps: usize,
    pub max_m_residual: f64,
    /// `‖u(T) − u_ref(T)‖` against the exact-solve run at the reference step.
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderReport {
    pub preconditioner: PreconditionerKind,
    pub reference_dt: f64,
    pub rows: Vec<OrderRow>,
    /// Log-log slope of `max ‖M(yⁿ − ûⁿ)‖` against `δt`; `None` when `M = 0`.
    pub residual_slope: Option<f64>,
    /// Log-log slope of the final-time error against `δt`.
    pub error_slope: Option<f64>,
    /// `error(δt₀) / error(δt₁)` for the first two rows.
    pub error_ratio: Option<f64>,
}

/// Tabulates `max ‖M(yⁿ − ûⁿ)‖` and the final-time error over `dt_list`.
/// The reference is an exact-solve run at `min(dt_list) / reference_factor`.
pub fn order_diagnostic<P: Problem + ?Sized>(
    p: &P,
    pc: &Preconditioner,
    anchor: Anchor,
    dt_list: &[f64],
    u0: &Vector,
    final_time: f64,
    reference_factor: f64,
) -> Result<OrderReport> {
    if dt_list.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "dt_list",
            reason: "need at least two step sizes".into(),
        });
    }
    let dt_min = dt_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let reference_dt = dt_min / reference_factor;
    let reference = integrate(p, &Preconditioner::exact(1e-14), anchor, reference_dt, u0, final_time)?;
    let mut rows = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        let run = integrate(p, pc, anchor, dt, u0, final_time)?;
        rows.push(OrderRow {
            dt,
            steps: run.steps,
            max_m_residual: run.max_m_residual,
            error: (&run.u_final - &reference.u_final).norm(),
        });
    }
    let dts: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let res: Vec<f64> = rows.iter().map(|r| r.max_m_residual).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let residual_slope = if res.iter().all(|&r| r == 0.0) {
        None
    } else {
        loglog_slope(&dts, &res)
    };
    Ok(OrderReport {
        preconditioner: pc.kind,
        reference_dt,
        residual_slope,
        error_slope: loglog_slope(&dts, &errs),
        error_ratio: (errs[1] > 0.0).then(|| errs[0] / errs[1]),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::quartic::QuadCubic;

    fn flow_problem() -> (QuadCubic, Vector) {
        let n = 12;
        let b0 = Vector::from_element(n, 0.2);
        let p = QuadCubic::chain(4.0, b0, 1.0, 1.5).unwrap();
        let u0 = Vector::from_fn(n, |i, _| {
            0.8 * (std::f64::consts::PI * (i + 1) as f64 / (n + 1) as f64).sin()
        });
        (p, u0)
    }

    #[test]
    fn backward_start_inverts_forward_flow() {
        let (p, u0) = flow_problem();
        let back = backward_start(&p, &u0, 0.05, 64);
        // Forward RK4 from the backward point returns to u0.
        let h = 0.05 / 64.0;
        let mut v = back;
        for _ in 0..64 {
            let g = |x: &Vector| -p.gradient(x);
            let k1 = g(&v);
            let k2 = g(&(&v + &k1 * (0.5 * h)));
            let k3 = g(&(&v + &k2 * (0.5 * h)));
            let k4 = g(&(&v + &k3 * h));
            v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        assert!((v - u0).norm() < 1e-9);
    }

    #[test]
    fn exact_solve_has_zero_weight_and_second_order() {
        let (p, u0) = flow_problem();
        let r = order_diagnostic(
            &p,
            &Preconditioner::exact(1e-14),
            Anchor::N,
            &[0.04, 0.02],
            &u0,
            0.48,
            64.0,
        )
        .unwrap();
        assert!(r.rows.iter().all(|row| row.max_m_residual == 0.0));
        assert!(r.residual_slope.is_none());
        let ratio = r.error_ratio.unwrap();
        assert!((3.3..=4.7).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn sgs_is_second_order_and_jacobi_first() {
        let (p, u0) = flow_problem();
        let dts = [0.04, 0.02, 0.01];
        let sgs = order_diagnostic(&p, &Preconditioner::sgs(1), Anchor::N, &dts, &u0, 0.48, 64.0).unwrap();
        assert!(sgs.residual_slope.unwrap() >= 1.8, "{sgs:?}");
        let jac = order_diagnostic(&p, &Preconditioner::jacobi(None, 1), Anchor::N, &dts, &u0, 0.48, 64.0).unwrap();
        let s = jac.residual_slope.unwrap();
        assert!((0.7..1.3).contains(&s), "{jac:?}");
    }

    #[test]
    fn rejects_fractional_step_counts() {
        let (p, u0) = flow_problem();
        assert!(integrate(&p, &Preconditioner::exact(1e-14), Anchor::N, 0.07, &u0, 0.5).is_err());
    }
}
