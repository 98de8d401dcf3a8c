//! Difference-of-convex baselines: DCA, BDCA and pDCAe.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{SolveResult, StopCriteria, StopReason, TraceRecord};
use crate::diagnostics::{InvariantReport, Violations};
use crate::error::{check_dim, Error, Result};
use crate::linesearch::{backtrack, LineSearchConfig, LineSearchMode};
use crate::linops::Vector;

/// `E = G − K` with `G`, `K` convex and `argmin G − ⟨v, ·⟩` available.
pub trait DcSplitting: Sync {
    fn dim(&self) -> usize;
    fn energy(&self, u: &Vector) -> f64;
    fn gradient(&self, u: &Vector) -> Vector;
    /// `∇K(u)`.
    fn concave_grad(&self, u: &Vector) -> Vector;
    /// `argmin_y G(y) − ⟨v, y⟩`; `warm` is a starting guess for iterative solvers.
    fn convex_argmin(&self, v: &Vector, warm: &Vector) -> Result<Vector>;
    fn quality(&self, _u: &Vector) -> Option<f64> {
        None
    }
}

/// `E = f + g − K` with `f` smooth, `g` prox-friendly and `K` convex.
pub trait ProxDcSplitting: Sync {
    fn dim(&self) -> usize;
    fn energy(&self, u: &Vector) -> f64;
    fn gradient(&self, u: &Vector) -> Vector;
    fn smooth_grad(&self, u: &Vector) -> Vector;
    /// Lipschitz constant of `∇f`.
    fn smooth_lipschitz(&self) -> f64;
    /// `argmin_y g(y) + ‖y − z‖²/(2t)`.
    fn prox(&self, z: &Vector, t: f64) -> Vector;
    fn concave_grad(&self, u: &Vector) -> Vector;
    fn quality(&self, _u: &Vector) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdcaeConfig {
    /// Scales the FISTA extrapolation weights; 0 gives plain proximal DCA.
    pub extrapolation: f64,
    /// The momentum sequence restarts every `restart` iterations.
    pub restart: usize,
}

impl Default for PdcaeConfig {
    fn default() -> Self {
        Self {
            extrapolation: 1.0,
            restart: 200,
        }
    }
}

struct Tracker {
    start: Instant,
    guard: f64,
    initial_energy: f64,
    trace: Vec<TraceRecord>,
}

impl Tracker {
    fn new(e0: f64) -> Self {
        Self {
            start: Instant::now(),
            guard: 1e12 * (1.0 + e0.abs()),
            initial_energy: e0,
            trace: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        stop: &StopCriteria,
        energy: f64,
        grad_norm: f64,
        quality: Option<f64>,
        u: &Vector,
        u_next: &Vector,
        d_norm: f64,
        lambda: f64,
        ls_evals: usize,
        ls_fallback: bool,
    ) -> Result<Option<StopReason>> {
        let n = self.trace.len();
        if !energy.is_finite() || energy > self.guard {
            return Err(Error::Diverged {
                iteration: n,
                energy,
                guard: self.guard,
            });
        }
        let rec = TraceRecord {
            n,
            energy,
            lyapunov: energy,
            step_norm: (u_next - u).norm(),
            d_norm,
            lambda,
            grad_norm,
            ls_evals,
            m_residual_norm: None,
            quality,
            ls_fallback,
            violations: Violations::default(),
        };
        let reason = stop.evaluate(n, &rec, u_next);
        self.trace.push(rec);
        Ok(reason)
    }

    fn finish(self, u_final: Vector, stop_reason: StopReason) -> SolveResult {
        SolveResult {
            u_final,
            iterations: self.trace.len(),
            stop_reason,
            trace: self.trace,
            wall_time: self.start.elapsed().as_secs_f64(),
            initial_energy: self.initial_energy,
            report: InvariantReport::default(),
            bound_warnings: Vec::new(),
        }
    }
}

fn check_start(dim: usize, u0: &Vector, stop: &StopCriteria) -> Result<()> {
    check_dim(dim, u0.len())?;
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial point"));
    }
    if stop.max_iters == 0 {
        return Err(Error::InvalidParameter {
            name: "max_iters",
            reason: "must be at least 1".into(),
        });
    }
    Ok(())
}

/// Classical DCA: `uⁿ⁺¹ = argmin G − ⟨∇K(uⁿ), ·⟩`.
pub fn dca_run<P: DcSplitting + ?Sized>(p: &P, stop: &StopCriteria, u0: &Vector) -> Result<SolveResult> {
    bdca_run(p, None, stop, u0)
}

/// BDCA: the DCA point `y` followed by backtracking along `d = y − uⁿ` until
/// `E(y + λd) ≤ E(y) − αλ²‖d‖²`. Exhausting the budget takes `λ = 0`.
/// With `ls = None` the iterates are those of DCA.
pub fn bdca_run<P: DcSplitting + ?Sized>(
    p: &P,
    ls: Option<&LineSearchConfig>,
    stop: &StopCriteria,
    u0: &Vector,
) -> Result<SolveResult> {
    check_start(p.dim(), u0, stop)?;
    let ls = ls.map(|c| LineSearchConfig {
        mode: LineSearchMode::TilFallback,
        ..c.clone()
    });
    let mut tracker = Tracker::new(p.energy(u0));
    let mut u = u0.clone();
    loop {
        let y = p.convex_argmin(&p.concave_grad(&u), &u)?;
        let d = &y - &u;
        let d_norm = d.norm();
        let mut u_next = y.clone();
        let (mut lambda, mut evals, mut fell_back) = (0.0, 0, false);
        let mut energy = None;
        if let Some(cfg) = &ls {
            if d_norm > 0.0 {
                let e_y = p.energy(&y);
                let de0 = if cfg.use_quadratic_init {
                    p.gradient(&y).dot(&d)
                } else {
                    0.0
                };
                let trial = |l: f64| {
                    let mut z = y.clone();
                    z.axpy(l, &d, 1.0);
                    p.energy(&z)
                };
                let d_sq = d_norm * d_norm;
                // The descent direction needs ∇E(y)ᵀd < 0; otherwise skip.
                if de0 < 0.0 || !cfg.use_quadratic_init {
                    let out = backtrack(trial, e_y, de0, |l| cfg.alpha * l * l * d_sq, cfg)?;
                    (lambda, evals, fell_back) = (out.lambda, out.evals, out.fell_back);
                    u_next.axpy(lambda, &d, 1.0);
                    energy = Some(out.accepted_value);
                } else {
                    energy = Some(e_y);
                }
            }
        }
        let energy = energy.unwrap_or_else(|| p.energy(&u_next));
        let reason = tracker.push(
            stop,
            energy,
            p.gradient(&u_next).norm(),
            p.quality(&u_next),
            &u,
            &u_next,
            d_norm,
            lambda,
            evals,
            fell_back,
        )?;
        u = u_next;
        if d_norm == 0.0 {
            return Ok(tracker.finish(u, StopReason::DZero));
        }
        if let Some(r) = reason {
            return Ok(tracker.finish(u, r));
        }
    }
}

/// Proximal DCA with FISTA extrapolation and fixed restarts:
/// `z = uⁿ + βₙ(uⁿ − uⁿ⁻¹)`,
/// `uⁿ⁺¹ = prox_{g/L}(z − (∇f(z) − ∇K(uⁿ))/L)`.
pub fn pdcae_run<P: ProxDcSplitting + ?Sized>(
    p: &P,
    cfg: &PdcaeConfig,
    stop: &StopCriteria,
    u0: &Vector,
) -> Result<SolveResult> {
    check_start(p.dim(), u0, stop)?;
    if !(cfg.extrapolation >= 0.0 && cfg.extrapolation <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "extrapolation",
            reason: format!("must lie in [0, 1], got {}", cfg.extrapolation),
        });
    }
    if cfg.restart == 0 {
        return Err(Error::InvalidParameter {
            name: "restart",
            reason: "must be at least 1".into(),
        });
    }
    let lip = p.smooth_lipschitz();
    if !(lip > 0.0 && lip.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "smooth_lipschitz",
            reason: format!("must be positive and finite, got {lip}"),
        });
    }
    let mut tracker = Tracker::new(p.energy(u0));
    let mut u = u0.clone();
    let mut u_prev = u0.clone();
    let mut theta: f64 = 1.0;
    for k in 0.. {
        if k % cfg.restart == 0 {
            theta = 1.0;
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = cfg.extrapolation * (theta - 1.0) / theta_next;
        theta = theta_next;

        let mut z = u.clone();
        if beta != 0.0 {
            z.axpy(beta, &(&u - &u_prev), 1.0);
        }
        let mut w = p.smooth_grad(&z) - p.concave_grad(&u);
        w = z - w / lip;
        let u_next = p.prox(&w, 1.0 / lip);
        let d_norm = (&u_next - &u).norm();
        let reason = tracker.push(
            stop,
            p.energy(&u_next),
            p.gradient(&u_next).norm(),
            p.quality(&u_next),
            &u,
            &u_next,
            d_norm,
            beta,
            0,
            false,
        )?;
        u_prev = std::mem::replace(&mut u, u_next);
        if d_norm == 0.0 {
            return Ok(tracker.finish(u, StopReason::DZero));
        }
        if let Some(r) = reason {
            return Ok(tracker.finish(u, r));
        }
    }
    unreachable!("the iteration loop only exits through a stop criterion")
}
