//! Runtime monitors for the descent and Lyapunov inequalities, a
//! finite-difference gradient oracle and empirical rate classification.

use serde::Serialize;

pub mod order;

use crate::linops::Vector;
use crate::solver::Anchor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Invariant {
    DescentI,
    DescentIi,
    LyapunovDecrease,
    PartialSumBound,
    ArmijoCertificate,
}

impl Invariant {
    pub const ALL: [Invariant; 5] = [
        Invariant::DescentI,
        Invariant::DescentIi,
        Invariant::LyapunovDecrease,
        Invariant::PartialSumBound,
        Invariant::ArmijoCertificate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Invariant::DescentI => "descent_i",
            Invariant::DescentIi => "descent_ii",
            Invariant::LyapunovDecrease => "lyapunov_decrease",
            Invariant::PartialSumBound => "partial_sum_bound",
            Invariant::ArmijoCertificate => "armijo_certificate",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Bitset of violated invariants for one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(transparent)]
pub struct Violations(u8);

impl Violations {
    pub fn insert(&mut self, inv: Invariant) {
        self.0 |= inv.bit();
    }

    pub fn contains(self, inv: Invariant) -> bool {
        self.0 & inv.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Invariant> {
        Invariant::ALL.into_iter().filter(move |&i| self.contains(i))
    }
}

/// Outcome of evaluating one inequality `lhs ≤ rhs` with slack `tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Check {
    pub invariant: Invariant,
    /// `lhs − rhs`; the check passes when this is at most `tol`.
    pub excess: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.excess <= self.tol
    }
}

/// Scalars describing one step, enough to evaluate the per-step inequalities.
#[derive(Debug, Clone, Copy)]
pub struct StepQuantities {
    pub anchor: Anchor,
    pub dt: f64,
    pub lipschitz: f64,
    /// `Eⁿ(uⁿ)`.
    pub en_u: f64,
    /// `Eⁿ(yⁿ)`.
    pub en_y: f64,
    /// `⟨∇Eⁿ(yⁿ), dⁿ⟩`.
    pub grad_dot_d: f64,
    pub d_norm_sq: f64,
    /// `‖dⁿ‖²_M`.
    pub d_m_norm_sq: f64,
    /// `‖uⁿ − uⁿ⁻¹‖²_M`, used in the `ũ` anchor mode.
    pub prev_m_norm_sq: f64,
    pub lambda: f64,
    pub alpha: f64,
    /// `Eⁿ(uⁿ⁺¹)`.
    pub en_next: f64,
}

impl StepQuantities {
    /// Slack `1e-9·(1 + |Eⁿ(uⁿ)|)` shared by all per-step checks.
    pub fn slack(&self) -> f64 {
        1e-9 * (1.0 + self.en_u.abs())
    }
}

/// Evaluates the descent inequalities and the Armijo certificate.
pub fn check_step_invariants(q: &StepQuantities) -> [Check; 3] {
    let tol = q.slack();
    let c1 = 4.0 / (3.0 * q.dt) - 0.5 * q.lipschitz;
    let c2 = 2.0 / (3.0 * q.dt) - q.lipschitz;
    let (rhs_i, rhs_ii) = match q.anchor {
        Anchor::N => (
            q.en_u - c1 * q.d_norm_sq - q.d_m_norm_sq,
            -c2 * q.d_norm_sq - q.d_m_norm_sq,
        ),
        Anchor::T => {
            let m_terms = -5.0 / 6.0 * q.d_m_norm_sq + q.prev_m_norm_sq / 6.0;
            (q.en_u - c1 * q.d_norm_sq + m_terms, -c2 * q.d_norm_sq + m_terms)
        }
    };
    let armijo_excess = if q.lambda == 0.0 {
        f64::NEG_INFINITY
    } else {
        q.en_next - (q.en_y - q.alpha * q.lambda * q.d_norm_sq)
    };
    [
        Check {
            invariant: Invariant::DescentI,
            excess: q.en_y - rhs_i,
            tol,
        },
        Check {
            invariant: Invariant::DescentIi,
            excess: q.grad_dot_d - rhs_ii,
            tol,
        },
        Check {
            invariant: Invariant::ArmijoCertificate,
            excess: armijo_excess,
            // Exact re-evaluation of the accepted trial point.
            tol: 0.0,
        },
    ]
}

/// Constant `K` with `Σ_{n≥1}‖uⁿ⁺¹ − uⁿ‖² ≤ K·(A₁ − A_{N+1})`, or `None` when
/// the step-size bounds that make it positive do not hold.
pub fn partial_sum_constant(
    anchor: Anchor,
    dt: f64,
    lipschitz: f64,
    alpha: f64,
    lambda_min: f64,
    lambda_max: f64,
) -> Option<f64> {
    let one_plus = (1.0 + lambda_max).powi(2);
    let k = match anchor {
        Anchor::N => {
            let c = 4.0 / (3.0 * dt) - 0.5 * lipschitz - lipschitz * one_plus;
            let denom = alpha * lambda_min + c;
            (c > 0.0 && denom > 0.0).then(|| one_plus / denom)
        }
        Anchor::T => {
            let c1 = (8.0 - 3.0 * dt * lipschitz + 6.0 * dt * alpha * lambda_min) / (6.0 * dt * one_plus) - lipschitz;
            let c2 = 5.0 / (6.0 * one_plus) - 1.0 / 6.0;
            (c1 > 0.0 && c2 >= 0.0).then(|| 1.0 / c1)
        }
    };
    k.filter(|v| v.is_finite())
}

/// Aggregate statistics for one invariant over a run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct InvariantSummary {
    pub checks: usize,
    pub violations: usize,
    /// Largest `excess − tol` observed (negative when every check passed).
    pub worst_margin: Option<f64>,
    pub first_violation: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct InvariantReport {
    pub descent_i: InvariantSummary,
    pub descent_ii: InvariantSummary,
    pub lyapunov_decrease: InvariantSummary,
    pub partial_sum_bound: InvariantSummary,
    pub armijo_certificate: InvariantSummary,
    /// Iterations where the partial-sum constant was undefined because the
    /// observed step sizes exceed the bound that makes it positive.
    pub partial_sum_skipped: usize,
}

impl InvariantReport {
    pub fn summary(&self, inv: Invariant) -> &InvariantSummary {
        match inv {
            Invariant::DescentI => &self.descent_i,
            Invariant::DescentIi => &self.descent_ii,
            Invariant::LyapunovDecrease => &self.lyapunov_decrease,
            Invariant::PartialSumBound => &self.partial_sum_bound,
            Invariant::ArmijoCertificate => &self.armijo_certificate,
        }
    }

    fn summary_mut(&mut self, inv: Invariant) -> &mut InvariantSummary {
        match inv {
            Invariant::DescentI => &mut self.descent_i,
            Invariant::DescentIi => &mut self.descent_ii,
            Invariant::LyapunovDecrease => &mut self.lyapunov_decrease,
            Invariant::PartialSumBound => &mut self.partial_sum_bound,
            Invariant::ArmijoCertificate => &mut self.armijo_certificate,
        }
    }

    /// Folds a check into the report; returns whether it passed.
    pub fn record(&mut self, iteration: usize, check: &Check) -> bool {
        let s = self.summary_mut(check.invariant);
        s.checks += 1;
        let margin = check.excess - check.tol;
        if margin.is_finite() {
            s.worst_margin = Some(s.worst_margin.map_or(margin, |w| w.max(margin)));
        }
        let ok = check.passed();
        if !ok {
            s.violations += 1;
            s.first_violation.get_or_insert(iteration);
        }
        ok
    }

    pub fn total_violations(&self) -> usize {
        Invariant::ALL.iter().map(|&i| self.summary(i).violations).sum()
    }

    pub fn failing(&self) -> Vec<&'static str> {
        Invariant::ALL
            .iter()
            .filter(|&&i| self.summary(i).violations > 0)
            .map(|i| i.name())
            .collect()
    }
}

/// Central differences `(φ(u + heᵢ) − φ(u − heᵢ))/(2h)` with
/// `h = 1e-5·(1 + ‖u‖)`.
pub fn fd_gradient_oracle(phi: impl Fn(&Vector) -> f64, u: &Vector) -> Vector {
    let h = fd_step(u);
    fd_gradient_with_step(phi, u, h)
}

pub fn fd_step(u: &Vector) -> f64 {
    1e-5 * (1.0 + u.norm())
}

pub fn fd_gradient_with_step(phi: impl Fn(&Vector) -> f64, u: &Vector, h: f64) -> Vector {
    let mut x = u.clone();
    Vector::from_fn(u.len(), |i, _| {
        let orig = x[i];
        x[i] = orig + h;
        let plus = phi(&x);
        x[i] = orig - h;
        let minus = phi(&x);
        x[i] = orig;
        (plus - minus) / (2.0 * h)
    })
}

/// True when some coordinate lies within `margin` of one of the given
/// breakpoints (compared on `|uᵢ|`).
pub fn near_kink(u: &Vector, breakpoints: &[f64], margin: f64) -> bool {
    u.iter()
        .any(|v| breakpoints.iter().any(|b| (v.abs() - b).abs() < margin))
}

/// Draws points with `draw` until one is at least `10h` away from every
/// breakpoint; gives up after `max_tries` and returns the last draw.
pub fn sample_away_from_kinks(
    mut draw: impl FnMut() -> Vector,
    breakpoints: &[f64],
    max_tries: usize,
) -> (Vector, usize) {
    let mut resampled = 0;
    loop {
        let u = draw();
        let h = fd_step(&u);
        if !near_kink(&u, breakpoints, 10.0 * h) || resampled >= max_tries {
            return (u, resampled);
        }
        resampled += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum RateClass {
    Inconclusive,
    FiniteTermination { at: usize },
    Linear { eta: f64, r2: f64 },
    Sublinear { exponent: f64, r2: f64 },
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}

/// Classifies an error trace `eₙ = ‖uⁿ − u*‖`, with `trace[i]` the error at
/// `n = i + 1`, as finite termination, linear (`eₙ ≈ cηⁿ`) or sublinear
/// (`eₙ ≈ c n^{−p}`) by comparing log-linear and log-log least-squares fits.
pub fn rate_fit(trace: &[f64]) -> RateClass {
    if trace.len() < 20 {
        return RateClass::Inconclusive;
    }
    let trailing_zeros = trace.iter().rev().take_while(|&&e| e == 0.0).count();
    if trailing_zeros >= 2 {
        return RateClass::FiniteTermination {
            at: trace.len() - trailing_zeros + 1,
        };
    }
    let kept = &trace[..trace.len() - trailing_zeros];
    let peak = kept.iter().cloned().fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = kept
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 1e-12 * peak)
        .map(|(i, &e)| ((i + 1) as f64, e.ln()))
        .collect();
    if pts.len() < 10 {
        return RateClass::Inconclusive;
    }
    let ns: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let logn: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let loge: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (s_lin, _, r2_lin) = linear_fit(&ns, &loge);
    let (s_log, _, r2_log) = linear_fit(&logn, &loge);
    if r2_lin >= r2_log {
        RateClass::Linear {
            eta: s_lin.exp(),
            r2: r2_lin,
        }
    } else {
        RateClass::Sublinear {
            exponent: -s_log,
            r2: r2_log,
        }
    }
}

/// Least-squares slope of `log y` against `log x`, skipping nonpositive pairs.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    (lx.len() >= 2).then(|| linear_fit(&lx, &ly).0)
}
