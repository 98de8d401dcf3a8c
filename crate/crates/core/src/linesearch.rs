//! Armijo backtracking on the surrogate `Eⁿ` along `dⁿ`, started at `yⁿ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::Vector;
use crate::splitting::{Problem, SurrogateState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineSearchMode {
    /// Exhausting the backtracking budget is an error.
    Standard,
    /// Exhausting the budget returns `λ = 0`.
    TilFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineSearchConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_bar_max: f64,
    pub use_quadratic_init: bool,
    /// Probe step for the quadratic interpolation.
    pub lambda_bar: f64,
    pub max_backtracks: usize,
    pub mode: LineSearchMode,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.8,
            lambda_bar_max: 5.0,
            use_quadratic_init: true,
            lambda_bar: 0.618 * 5.0,
            max_backtracks: 50,
            mode: LineSearchMode::Standard,
        }
    }
}

impl LineSearchConfig {
    /// Sets `λ̄_max` and keeps the probe at the same fraction of it.
    pub fn with_lambda_bar_max(mut self, lambda_bar_max: f64) -> Self {
        let ratio = self.lambda_bar / self.lambda_bar_max;
        self.lambda_bar_max = lambda_bar_max;
        self.lambda_bar = ratio * lambda_bar_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.alpha > 0.0) {
            return bad("alpha", format!("must be positive, got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta", format!("must lie in (0, 1), got {}", self.beta));
        }
        if !(self.lambda_bar_max > 0.0) || !self.lambda_bar_max.is_finite() {
            return bad(
                "lambda_bar_max",
                format!("must be positive, got {}", self.lambda_bar_max),
            );
        }
        if !(self.lambda_bar > 0.0 && self.lambda_bar <= self.lambda_bar_max) {
            return bad(
                "lambda_bar",
                format!("must lie in (0, lambda_bar_max], got {}", self.lambda_bar),
            );
        }
        Ok(())
    }
}

/// Vertex of the quadratic `aλ² + bλ + c` through `e(0) = e0`, `e'(0) = de0`
/// and `e(λ̄) = e_bar`. `None` when the fit is not convex or the vertex is not
/// a positive step.
pub fn quad_init(e0: f64, de0: f64, e_bar: f64, lambda_bar: f64) -> Option<f64> {
    let a = (e_bar - e0 - de0 * lambda_bar) / (lambda_bar * lambda_bar);
    if !(a > 0.0) {
        return None;
    }
    let vertex = -de0 / (2.0 * a);
    (vertex > 0.0 && vertex.is_finite()).then_some(vertex)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub lambda: f64,
    /// Number of `Eⁿ` evaluations, including the interpolation probe.
    pub evals: usize,
    /// Budget ran out and the fallback `λ = 0` was taken.
    pub fell_back: bool,
    /// Start of the backtracking sequence.
    pub lambda_start: f64,
    /// `Eⁿ(y + λd)` at the accepted step.
    pub accepted_value: f64,
}

/// Backtracking on a scalar function `e(λ) = Eⁿ(y + λd)`.
///
/// `de0 = e'(0)` is only used by the quadratic warm start.
pub fn armijo_1d(
    e: impl Fn(f64) -> f64,
    e0: f64,
    de0: f64,
    d_norm_sq: f64,
    cfg: &LineSearchConfig,
) -> Result<LineSearchOutcome> {
    backtrack(e, e0, de0, |lambda| cfg.alpha * lambda * d_norm_sq, cfg)
}

/// Backtracking until `e(λ) ≤ e0 − decrease(λ)`.
pub fn backtrack(
    e: impl Fn(f64) -> f64,
    e0: f64,
    de0: f64,
    decrease: impl Fn(f64) -> f64,
    cfg: &LineSearchConfig,
) -> Result<LineSearchOutcome> {
    cfg.validate()?;
    let mut evals = 0;
    let mut lambda_start = cfg.lambda_bar_max;
    if cfg.use_quadratic_init {
        let e_bar = e(cfg.lambda_bar);
        evals += 1;
        let vertex = quad_init(e0, de0, e_bar, cfg.lambda_bar);
        log::debug!(
            "quadratic warm start: vertex {:?}, unsigned-numerator variant {:?}",
            vertex,
            vertex.map(|v| -v)
        );
        if let Some(v) = vertex {
            lambda_start = lambda_start.min(v);
        }
    }
    let mut lambda = lambda_start;
    for _ in 0..=cfg.max_backtracks {
        let trial = e(lambda);
        evals += 1;
        if trial <= e0 - decrease(lambda) {
            return Ok(LineSearchOutcome {
                lambda,
                evals,
                fell_back: false,
                lambda_start,
                accepted_value: trial,
            });
        }
        lambda *= cfg.beta;
    }
    match cfg.mode {
        LineSearchMode::Standard => Err(Error::LineSearchExhausted {
            backtracks: cfg.max_backtracks,
        }),
        LineSearchMode::TilFallback => Ok(LineSearchOutcome {
            lambda: 0.0,
            evals,
            fell_back: true,
            lambda_start,
            accepted_value: e0,
        }),
    }
}

/// Armijo search `Eⁿ(y + λd) ≤ Eⁿ(y) − αλ‖d‖²` on the surrogate energy.
pub fn armijo<P: Problem + ?Sized>(
    s: &SurrogateState,
    p: &P,
    y: &Vector,
    d: &Vector,
    cfg: &LineSearchConfig,
) -> Result<LineSearchOutcome> {
    let e0 = s.energy(p, y);
    let de0 = if cfg.use_quadratic_init {
        s.grad(p, y).dot(d)
    } else {
        0.0
    };
    let trial = |lambda: f64| {
        let mut u = y.clone();
        u.axpy(lambda, d, 1.0);
        s.energy(p, &u)
    };
    armijo_1d(trial, e0, de0, d.norm_squared(), cfg)
}
