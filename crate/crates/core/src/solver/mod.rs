//! The preconditioned BDF2/Adams-Bashforth convex splitting iteration with
//! optional Armijo line search, and the DC baselines.

pub mod baselines;
pub mod subproblem;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    check_step_invariants, partial_sum_constant, Check, Invariant, InvariantReport, StepQuantities, Violations,
};
use crate::error::{check_dim, Error, Result};
use crate::linesearch::{armijo, LineSearchConfig, LineSearchMode};
use crate::linops::Vector;
use crate::precond::Preconditioner;
use crate::splitting::{dt_bound, lyapunov_coefficient, Problem, SurrogateState};

pub use subproblem::Strategy;

/// Anchor `û` of the preconditioned sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anchor {
    /// `û = uⁿ`.
    #[serde(rename = "n")]
    N,
    /// `û = ũⁿ = (4/3)uⁿ − (1/3)uⁿ⁻¹`.
    #[serde(rename = "t")]
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMode {
    /// Step-size bounds and invariant violations are hard errors.
    StrictTheory,
    /// Violations are logged and recorded.
    Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopCriteria {
    /// `‖uⁿ⁺¹ − uⁿ‖ / max(1, ‖uⁿ⁺¹‖) < tol`.
    pub rel_increment_tol: Option<f64>,
    /// `‖∇E(uⁿ⁺¹)‖ < tol`.
    pub grad_norm_tol: Option<f64>,
    /// `‖uⁿ⁺¹ − uⁿ‖ < tol`.
    pub increment_tol: Option<f64>,
    /// Stop once the problem's quality score reaches this value.
    pub quality_bound: Option<f64>,
    pub max_iters: usize,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            rel_increment_tol: Some(1e-12),
            grad_norm_tol: None,
            increment_tol: None,
            quality_bound: None,
            max_iters: 10_000,
        }
    }
}

impl StopCriteria {
    pub fn only_max_iters(max_iters: usize) -> Self {
        Self {
            rel_increment_tol: None,
            max_iters,
            ..Self::default()
        }
    }

    /// First criterion met by the record of iteration `n`.
    pub fn evaluate(&self, n: usize, rec: &TraceRecord, u_next: &Vector) -> Option<StopReason> {
        if let (Some(bound), Some(q)) = (self.quality_bound, rec.quality) {
            if q >= bound {
                return Some(StopReason::QualityBound);
            }
        }
        if let Some(tol) = self.grad_norm_tol {
            if rec.grad_norm < tol {
                return Some(StopReason::GradNorm);
            }
        }
        if let Some(tol) = self.increment_tol {
            if rec.step_norm < tol {
                return Some(StopReason::Increment);
            }
        }
        if let Some(tol) = self.rel_increment_tol {
            if rec.step_norm / u_next.norm().max(1.0) < tol {
                return Some(StopReason::RelIncrement);
            }
        }
        if n + 1 >= self.max_iters {
            return Some(StopReason::MaxIters);
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    DZero,
    RelIncrement,
    GradNorm,
    Increment,
    QualityBound,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub anchor: Anchor,
    pub dt: f64,
    pub preconditioner: Preconditioner,
    pub linesearch: Option<LineSearchConfig>,
    pub bound_mode: BoundMode,
    pub stop: StopCriteria,
    /// Evaluate the invariant monitors every iteration.
    pub monitor: bool,
}

impl SolverConfig {
    pub fn new(anchor: Anchor, dt: f64, preconditioner: Preconditioner) -> Self {
        Self {
            anchor,
            dt,
            preconditioner,
            linesearch: None,
            bound_mode: BoundMode::Experiment,
            stop: StopCriteria::default(),
            monitor: true,
        }
    }

    pub fn with_linesearch(mut self, ls: LineSearchConfig) -> Self {
        self.linesearch = Some(ls);
        self
    }

    pub fn with_stop(mut self, stop: StopCriteria) -> Self {
        self.stop = stop;
        self
    }

    pub fn strict(mut self) -> Self {
        self.bound_mode = BoundMode::StrictTheory;
        self
    }
}

/// Upper bound on line-search steps under which the Lyapunov argument holds.
pub fn max_step_bound(dt: f64, lipschitz: f64, anchor: Anchor) -> Result<f64> {
    let bound = dt_bound(lipschitz)?;
    if !(dt > 0.0 && dt < bound) {
        return Err(Error::BoundViolation(format!("dt = {dt} must lie in (0, {bound})")));
    }
    let x = dt * lipschitz;
    Ok(match anchor {
        Anchor::N => (4.0 / (3.0 * x) - 0.5).sqrt() - 1.0,
        Anchor::T => ((8.0 - 3.0 * x) / (6.0 * x)).sqrt().min(5f64.sqrt()) - 1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub n: usize,
    /// `E(uⁿ⁺¹)`.
    pub energy: f64,
    /// `A(uⁿ⁺¹, uⁿ)`, or `Ã` in the `ũ` anchor mode.
    pub lyapunov: f64,
    pub step_norm: f64,
    pub d_norm: f64,
    pub lambda: f64,
    pub grad_norm: f64,
    pub ls_evals: usize,
    /// `‖M(yⁿ − ûⁿ)‖` when available.
    pub m_residual_norm: Option<f64>,
    pub quality: Option<f64>,
    pub ls_fallback: bool,
    pub violations: Violations,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u_final: Vector,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub trace: Vec<TraceRecord>,
    pub wall_time: f64,
    pub initial_energy: f64,
    pub report: InvariantReport,
    /// Configuration bounds that were exceeded in experiment mode.
    pub bound_warnings: Vec<String>,
}

impl SolveResult {
    pub fn final_energy(&self) -> f64 {
        self.trace.last().map_or(self.initial_energy, |r| r.energy)
    }
}

/// Outcome of a single iteration.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub y: Vector,
    pub u_next: Vector,
    pub lambda: f64,
    pub record: TraceRecord,
    pub stop: Option<StopReason>,
}

fn is_zero_direction(d: &Vector, u: &Vector) -> bool {
    d.norm() <= 1e-15 * (1.0 + u.norm())
}

/// A deliberate fault injected into one step, used to check that the
/// monitors are not vacuous.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Corruption {
    /// Adds Gaussian noise of norm `scale·‖dⁿ‖` to `yⁿ`.
    Subproblem { scale: f64, seed: u64 },
    /// Replaces the accepted step length.
    StepLength(f64),
}

/// Stateful driver; [`run`] wraps it.
pub struct Solver<'p, P: Problem + ?Sized> {
    p: &'p P,
    cfg: SolverConfig,
    strategy: Strategy,
    state: SurrogateState,
    n: usize,
    lipschitz: f64,
    initial_energy: f64,
    guard: f64,
    /// `M(uⁿ − uⁿ⁻¹)` carried for the `ũ` anchor.
    m_prev_diff: Vector,
    /// Accumulated growth of the carried `M`-vector since its last refresh.
    m_growth: f64,
    lyap_prev: f64,
    lyap_first: Option<f64>,
    partial_sum: f64,
    lambda_min: f64,
    lambda_max: f64,
    report: InvariantReport,
    bound_warnings: Vec<String>,
    corruption: Option<Corruption>,
}

impl<'p, P: Problem + ?Sized> Solver<'p, P> {
    pub fn new(p: &'p P, cfg: SolverConfig, u0: Vector) -> Result<Self> {
        check_dim(p.dim(), u0.len())?;
        if u0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial point"));
        }
        let mut cfg = cfg;
        if let Some(ls) = cfg.linesearch.as_mut() {
            ls.validate()?;
            // The ũ-anchored bound only covers λ = 0 once the budget is spent.
            if cfg.anchor == Anchor::T {
                ls.mode = LineSearchMode::TilFallback;
            }
        }
        let lipschitz = p.lipschitz_covering(&u0).max(p.lipschitz());
        let mut bound_warnings = Vec::new();
        let mut flag = |msg: String, strict: bool| -> Result<()> {
            if strict {
                return Err(Error::BoundViolation(msg));
            }
            log::warn!("{msg}");
            bound_warnings.push(msg);
            Ok(())
        };
        let strict = cfg.bound_mode == BoundMode::StrictTheory;
        let dt_max = dt_bound(lipschitz)?;
        if !(cfg.dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {}", cfg.dt),
            });
        }
        if cfg.dt >= dt_max {
            flag(format!("dt = {} is not below 2/(3L) = {dt_max}", cfg.dt), strict)?;
        } else if let Some(ls) = &cfg.linesearch {
            let bound = max_step_bound(cfg.dt, lipschitz, cfg.anchor)?;
            if ls.lambda_bar_max >= bound {
                flag(
                    format!(
                        "lambda_bar_max = {} is not below the step bound {bound}",
                        ls.lambda_bar_max
                    ),
                    strict,
                )?;
            }
        }
        let strategy = Strategy::select(p, &cfg.preconditioner, cfg.dt)?;
        let state = SurrogateState::new(p, u0.clone(), u0.clone(), cfg.dt)?;
        let initial_energy = p.energy(&u0);
        Ok(Self {
            p,
            strategy,
            state,
            n: 0,
            lipschitz,
            initial_energy,
            guard: 1e12 * (1.0 + initial_energy.abs()),
            m_prev_diff: Vector::zeros(u0.len()),
            m_growth: 1.0,
            lyap_prev: initial_energy,
            lyap_first: None,
            partial_sum: 0.0,
            lambda_min: f64::INFINITY,
            lambda_max: 0.0,
            report: InvariantReport::default(),
            bound_warnings,
            corruption: None,
            cfg,
        })
    }

    pub fn state(&self) -> &SurrogateState {
        &self.state
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn iterations(&self) -> usize {
        self.n
    }

    pub fn report(&self) -> &InvariantReport {
        &self.report
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Applies `c` to the next call of [`Solver::step`] only.
    pub fn corrupt_next_step(&mut self, c: Corruption) {
        self.corruption = Some(c);
    }

    pub fn anchor_point(&self) -> Vector {
        match self.cfg.anchor {
            Anchor::N => self.state.u_n.clone(),
            Anchor::T => (&self.state.u_n * 4.0 - &self.state.u_nm1) / 3.0,
        }
    }

    fn record_check(&mut self, check: Check, violations: &mut Violations) -> Result<()> {
        if !self.report.record(self.n, &check) {
            violations.insert(check.invariant);
            let msg = format!(
                "iteration {}: {} violated by {:e} (slack {:e})",
                self.n,
                check.invariant.name(),
                check.excess,
                check.tol
            );
            if self.cfg.bound_mode == BoundMode::StrictTheory {
                return Err(Error::InvariantViolation {
                    iteration: self.n,
                    invariant: check.invariant.name(),
                    excess: check.excess,
                });
            }
            log::warn!("{msg}");
        }
        Ok(())
    }

    /// `M dⁿ`, using the sweep residual identity where possible.
    fn m_times_d(&mut self, d: &Vector, m_residual: Option<&Vector>) -> Result<Vector> {
        if self.strategy.weight_is_zero() {
            return Ok(Vector::zeros(d.len()));
        }
        let direct_is_cheap = !matches!(&self.strategy, Strategy::Linear(pc) if pc.sweeps() > 1);
        match (self.cfg.anchor, m_residual) {
            (_, _) if direct_is_cheap => self.strategy.apply_m(d),
            // M(y − uⁿ) = bⁿ − T y.
            (Anchor::N, Some(r)) => Ok(r.clone()),
            // M(y − ũ) = bⁿ − T y and y − uⁿ = (y − ũ) + (uⁿ − uⁿ⁻¹)/3.
            (Anchor::T, Some(r)) if self.m_growth < 1e3 => Ok(r + &self.m_prev_diff / 3.0),
            _ => {
                self.m_growth = 1.0;
                self.strategy.apply_m(d)
            }
        }
    }

    /// Performs one iteration and advances the history.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let p = self.p;
        let u_hat = self.anchor_point();
        let mut sol = self.strategy.solve(p, &self.state, &u_hat)?;
        let corruption = self.corruption.take();
        if let Some(Corruption::Subproblem { scale, seed }) = corruption {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Vector::from_fn(sol.y.len(), |_, _| StandardNormal.sample(&mut rng));
            let size = scale * (&sol.y - &self.state.u_n).norm();
            sol.y += noise.normalize() * size;
            sol.m_residual = None;
        }
        let y = sol.y;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("subproblem solution"));
        }
        let d = &y - &self.state.u_n;
        let m_residual_norm = sol.m_residual.as_ref().map(|r| r.norm());
        let alpha = self.cfg.linesearch.as_ref().map_or(0.0, |ls| ls.alpha);

        if is_zero_direction(&d, &self.state.u_n) {
            let u_next = self.state.u_n.clone();
            let record = TraceRecord {
                n: self.n,
                energy: p.energy(&u_next),
                lyapunov: self.lyap_prev,
                step_norm: 0.0,
                d_norm: d.norm(),
                lambda: 0.0,
                grad_norm: p.gradient(&u_next).norm(),
                ls_evals: 0,
                m_residual_norm,
                quality: p.quality(&u_next),
                ls_fallback: false,
                violations: Violations::default(),
            };
            self.n += 1;
            return Ok(StepOutcome {
                y,
                u_next,
                lambda: 0.0,
                record,
                stop: Some(StopReason::DZero),
            });
        }

        let (lambda, ls_evals, ls_fallback) = match &self.cfg.linesearch {
            None => (0.0, 0, false),
            Some(ls) => match armijo(&self.state, p, &y, &d, ls) {
                Ok(out) => (out.lambda, out.evals, out.fell_back),
                Err(Error::LineSearchExhausted { backtracks })
                    if self.cfg.bound_mode == BoundMode::Experiment && ls.mode == LineSearchMode::Standard =>
                {
                    log::warn!(
                        "iteration {}: line search exhausted {backtracks} backtracks, taking λ = 0",
                        self.n
                    );
                    (0.0, backtracks + 1, true)
                }
                Err(e) => return Err(e),
            },
        };
        let lambda = match corruption {
            Some(Corruption::StepLength(l)) => l,
            _ => lambda,
        };
        let mut u_next = y.clone();
        u_next.axpy(lambda, &d, 1.0);

        let energy = p.energy(&u_next);
        if !energy.is_finite() || energy > self.guard {
            return Err(Error::Diverged {
                iteration: self.n,
                energy,
                guard: self.guard,
            });
        }

        let covering = p.lipschitz_covering(&u_next);
        if covering > self.lipschitz {
            log::warn!(
                "iteration {}: iterate left the region of the declared Lipschitz constant; L raised from {} to {covering}",
                self.n,
                self.lipschitz
            );
            self.lipschitz = covering;
        }

        let mut violations = Violations::default();
        let step_vec = &u_next - &self.state.u_n;
        let step_norm = step_vec.norm();
        let mut lyapunov = f64::NAN;
        if self.cfg.monitor {
            let md = self.m_times_d(&d, sol.m_residual.as_ref())?;
            let d_m_norm_sq = md.dot(&d);
            let prev_m_norm_sq = self.m_prev_diff.dot(&(&self.state.u_n - &self.state.u_nm1));
            let q = StepQuantities {
                anchor: self.cfg.anchor,
                dt: self.cfg.dt,
                lipschitz: self.lipschitz,
                en_u: self.state.energy(p, &self.state.u_n),
                en_y: self.state.energy(p, &y),
                grad_dot_d: self.state.grad(p, &y).dot(&d),
                d_norm_sq: d.norm_squared(),
                d_m_norm_sq,
                prev_m_norm_sq,
                lambda,
                alpha,
                en_next: self.state.energy(p, &u_next),
            };
            for check in check_step_invariants(&q) {
                self.record_check(check, &mut violations)?;
            }

            let scale = 1.0 + lambda;
            let m_next_diff = md * scale;
            lyapunov = energy + lyapunov_coefficient(self.lipschitz, self.cfg.dt) * step_norm * step_norm;
            if self.cfg.anchor == Anchor::T {
                lyapunov += m_next_diff.dot(&step_vec) / 6.0;
            }
            let lyap_check = Check {
                invariant: Invariant::LyapunovDecrease,
                excess: lyapunov - self.lyap_prev,
                tol: q.slack(),
            };
            self.record_check(lyap_check, &mut violations)?;

            match self.lyap_first {
                None => self.lyap_first = Some(lyapunov),
                Some(a1) => {
                    self.partial_sum += step_norm * step_norm;
                    self.lambda_min = self.lambda_min.min(lambda);
                    self.lambda_max = self.lambda_max.max(lambda);
                    match partial_sum_constant(
                        self.cfg.anchor,
                        self.cfg.dt,
                        self.lipschitz,
                        alpha,
                        self.lambda_min,
                        self.lambda_max,
                    ) {
                        Some(k) => {
                            let check = Check {
                                invariant: Invariant::PartialSumBound,
                                excess: self.partial_sum - k * (a1 - lyapunov),
                                tol: k * q.slack(),
                            };
                            self.record_check(check, &mut violations)?;
                        }
                        None => self.report.partial_sum_skipped += 1,
                    }
                }
            }
            self.lyap_prev = lyapunov;
            if self.cfg.anchor == Anchor::T {
                self.m_growth *= scale / 3.0;
                self.m_prev_diff = m_next_diff;
            }
        }

        let grad_norm = p.gradient(&u_next).norm();
        let quality = p.quality(&u_next);
        let record = TraceRecord {
            n: self.n,
            energy,
            lyapunov,
            step_norm,
            d_norm: d.norm(),
            lambda,
            grad_norm,
            ls_evals,
            m_residual_norm,
            quality,
            ls_fallback,
            violations,
        };
        let stop = self.cfg.stop.evaluate(self.n, &record, &u_next);
        self.state.shift(p, u_next.clone());
        self.n += 1;
        Ok(StepOutcome {
            y,
            u_next,
            lambda,
            record,
            stop,
        })
    }

    pub fn finish(
        self,
        u_final: Vector,
        trace: Vec<TraceRecord>,
        stop_reason: StopReason,
        wall_time: f64,
    ) -> SolveResult {
        SolveResult {
            u_final,
            iterations: trace.len(),
            stop_reason,
            trace,
            wall_time,
            initial_energy: self.initial_energy,
            report: self.report,
            bound_warnings: self.bound_warnings,
        }
    }
}

/// Runs the iteration from `u⁰` (with `u⁻¹ = u⁰`) until a stop criterion fires.
pub fn run<P: Problem + ?Sized>(p: &P, cfg: &SolverConfig, u0: &Vector) -> Result<SolveResult> {
    let start = Instant::now();
    if cfg.stop.max_iters == 0 {
        return Err(Error::InvalidParameter {
            name: "max_iters",
            reason: "must be at least 1".into(),
        });
    }
    let mut solver = Solver::new(p, cfg.clone(), u0.clone())?;
    let mut trace = Vec::new();
    loop {
        let out = solver.step()?;
        trace.push(out.record);
        if let Some(reason) = out.stop {
            let wall = start.elapsed().as_secs_f64();
            return Ok(solver.finish(out.u_next, trace, reason, wall));
        }
    }
}

/// Runs `warmup` clean steps in experiment mode, then one step with `fault`,
/// and returns the invariants that step violated.
pub fn negative_control<P: Problem + ?Sized>(
    p: &P,
    cfg: &SolverConfig,
    u0: &Vector,
    warmup: usize,
    fault: Corruption,
) -> Result<Violations> {
    let cfg = SolverConfig {
        bound_mode: BoundMode::Experiment,
        monitor: true,
        stop: StopCriteria::only_max_iters(usize::MAX),
        ..cfg.clone()
    };
    let mut solver = Solver::new(p, cfg, u0.clone())?;
    for _ in 0..warmup {
        solver.step()?;
    }
    solver.corrupt_next_step(fault);
    Ok(solver.step()?.record.violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::LinearOperator;
    use crate::splitting::testing::{scalar_half_square, QuadCubic};
    use crate::splitting::AffinePart;
    use nalgebra::dvector;

    #[test]
    fn max_step_bound_examples() {
        let l = 1.0 / 9.0;
        assert!((max_step_bound(3.0, l, Anchor::N).unwrap() - (3.5f64.sqrt() - 1.0)).abs() < 1e-12);
        assert!((max_step_bound(3.0, l, Anchor::T).unwrap() - (3.5f64.sqrt() - 1.0)).abs() < 1e-12);
        let near = max_step_bound(6.0 - 1e-9, l, Anchor::N).unwrap();
        assert!((near - (1.5f64.sqrt() - 1.0)).abs() < 1e-8 && near > 0.0);
        assert!(max_step_bound(6.0, l, Anchor::N).is_err());
    }

    #[test]
    fn scalar_step_example() {
        let p = scalar_half_square();
        let cfg = SolverConfig::new(Anchor::N, 1.0, Preconditioner::exact(1e-15));
        let mut solver = Solver::new(&p, cfg, dvector![1.0]).unwrap();
        let out = solver.step().unwrap();
        assert!((out.y[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((out.u_next[0] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn stationary_start_stops_immediately() {
        let p = QuadCubic {
            affine: AffinePart::new(LinearOperator::Identity(2), dvector![1.0, -1.0]).unwrap(),
            gamma: 0.0,
            lip: 1.0,
        };
        let cfg = SolverConfig::new(Anchor::N, 0.5, Preconditioner::exact(1e-15));
        let res = run(&p, &cfg, &dvector![1.0, -1.0]).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.stop_reason, StopReason::DZero);
    }

    #[test]
    fn line_search_update_relation() {
        let p = QuadCubic {
            affine: AffinePart::new(LinearOperator::Diagonal(dvector![1.0, 2.0]), dvector![0.5, 0.0]).unwrap(),
            gamma: 0.1,
            lip: 0.1 * (3.0 * 2.0f64.powi(2) - 1.0),
        };
        let cfg = SolverConfig::new(Anchor::N, 0.3, Preconditioner::exact(1e-15)).with_linesearch(LineSearchConfig {
            lambda_bar_max: 0.2,
            lambda_bar: 0.1,
            ..LineSearchConfig::default()
        });
        let mut solver = Solver::new(&p, cfg, dvector![1.5, -1.0]).unwrap();
        for _ in 0..5 {
            let u_n = solver.state().u_n.clone();
            let out = solver.step().unwrap();
            let d = &out.y - &u_n;
            let expect = &u_n + &d * (1.0 + out.lambda);
            assert!((&out.u_next - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn scalar_run_decays() {
        let p = scalar_half_square();
        let cfg = SolverConfig::new(Anchor::N, 1.0, Preconditioner::exact(1e-15));
        let res = run(&p, &cfg, &dvector![1.0]).unwrap();
        assert_eq!(res.stop_reason, StopReason::RelIncrement);
        assert!(res.u_final[0].abs() < 1e-10);
        // 9y = 8uⁿ − 2uⁿ⁻¹ has complex roots of modulus √2/3.
        let rate = 2f64.sqrt() / 3.0;
        for (i, rec) in res.trace.iter().enumerate() {
            let bound = 4.0 * (i as f64 + 2.0) * rate.powi(i as i32 + 1);
            assert!(rec.energy.sqrt() * 2f64.sqrt() <= bound, "{i}");
            assert!(rec.violations.is_empty());
        }
        assert_eq!(res.report.total_violations(), 0);
    }

    #[test]
    fn strict_mode_rejects_bounds() {
        let p = scalar_half_square();
        let mut cfg = SolverConfig::new(Anchor::N, 1.0, Preconditioner::exact(1e-15)).strict();
        let lip_p = QuadCubic { lip: 1.0, ..p };
        assert!(matches!(
            Solver::new(&lip_p, cfg.clone(), dvector![1.0]),
            Err(Error::BoundViolation(_))
        ));
        cfg.dt = 0.5;
        cfg.linesearch = Some(LineSearchConfig::default());
        assert!(matches!(
            Solver::new(&lip_p, cfg.clone(), dvector![1.0]),
            Err(Error::BoundViolation(_))
        ));
        cfg.bound_mode = BoundMode::Experiment;
        let s = Solver::new(&lip_p, cfg, dvector![1.0]).unwrap();
        assert_eq!(s.bound_warnings.len(), 1);
    }

    #[test]
    fn every_monitor_fails_on_a_corrupted_step() {
        let b0 = Vector::from_fn(10, |i, _| 0.3 * (i as f64).cos());
        let p = crate::problems::quartic::QuadCubic::chain(2.0, b0, 1.0, 1.5).unwrap();
        let u0 = Vector::from_fn(10, |i, _| 0.5 * (i as f64 * 0.7).sin());
        let dt = 0.5 * dt_bound(p.lipschitz()).unwrap();
        for anchor in [Anchor::N, Anchor::T] {
            let cfg = SolverConfig::new(anchor, dt, Preconditioner::sgs(1))
                .with_linesearch(LineSearchConfig::default().with_lambda_bar_max(0.2));
            let clean = run(&p, &cfg.clone().with_stop(StopCriteria::only_max_iters(6)), &u0).unwrap();
            assert_eq!(clean.report.total_violations(), 0);
            let noisy = negative_control(&p, &cfg, &u0, 3, Corruption::Subproblem { scale: 10.0, seed: 7 }).unwrap();
            for inv in [
                Invariant::DescentI,
                Invariant::DescentIi,
                Invariant::LyapunovDecrease,
                Invariant::PartialSumBound,
            ] {
                assert!(noisy.contains(inv), "{anchor:?}: {} not flagged", inv.name());
            }
            let long = negative_control(&p, &cfg, &u0, 3, Corruption::StepLength(50.0)).unwrap();
            assert!(long.contains(Invariant::ArmijoCertificate), "{anchor:?}");
        }
    }
}
