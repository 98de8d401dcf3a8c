//! Instance construction and per-algorithm dispatch.

use std::time::Instant;

use convsplit::problems::gl::{gl_instance, gl_problem, synthetic_two_disks, GlInstance, QuadraticWell, WellDc};
use convsplit::problems::image::{labels_from_mask, read_image, GrayImage};
use convsplit::problems::scad::{gen_scad, sparsity, L1ScadDc, ScadDc, ScadInstance, ScadProblem};
use convsplit::solver::baselines::{bdca_run, dca_run, pdcae_run, DcSplitting, ProxDcSplitting};
use convsplit::solver::{run, Anchor, SolveResult, SolverConfig, StopCriteria};
use convsplit::splitting::dt_bound;
use convsplit::{Error, Preconditioner, Problem, Vector};
use serde::Serialize;

use crate::config::{Algorithm, GlConfig, ProblemKind, RunConfig, ScadConfig, SolverSection};

/// Errors that mean the request itself cannot be run, as opposed to a run
/// that failed numerically.
pub fn is_setup_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidParameter { .. }
            | Error::InfeasiblePreconditioner(_)
            | Error::MissingAffinePart(_)
            | Error::BoundViolation(_)
            | Error::Image(_)
            | Error::DimensionMismatch { .. }
    )
}

/// The largest representable step below `2/(3L)`, following the usual
/// "just under the bound" choice.
pub fn auto_dt(lipschitz: f64) -> convsplit::Result<f64> {
    Ok(dt_bound(lipschitz)? * (1.0 - 1e-15))
}

/// Scheme configuration for `alg`, or `None` for the DC baselines.
pub fn scheme_config<P: Problem + ?Sized>(
    alg: Algorithm,
    p: &P,
    u0: &Vector,
    section: &SolverSection,
    pc: &Preconditioner,
    stop: &StopCriteria,
) -> convsplit::Result<Option<SolverConfig>> {
    let (anchor, ls, preconditioned) = match alg {
        Algorithm::BapdcaN => (Anchor::N, false, true),
        Algorithm::BapdcaT => (Anchor::T, false, true),
        Algorithm::BapdcaLsN => (Anchor::N, true, true),
        Algorithm::BapdcaLsT => (Anchor::T, true, true),
        Algorithm::Badca => (Anchor::N, false, false),
        Algorithm::BadcaLs => (Anchor::N, true, false),
        Algorithm::Dca | Algorithm::Bdca | Algorithm::Pdcae => return Ok(None),
    };
    let dt = match section.dt {
        Some(dt) => dt,
        None => auto_dt(p.lipschitz_covering(u0).max(p.lipschitz()))?,
    };
    let pc = if preconditioned {
        pc.clone()
    } else {
        Preconditioner::exact(pc.cg_tol)
    };
    let mut cfg = SolverConfig::new(anchor, dt, pc).with_stop(stop.clone());
    if ls {
        cfg = cfg.with_linesearch(section.linesearch.config());
    }
    cfg.bound_mode = section.bound_mode;
    cfg.monitor = section.monitor;
    Ok(Some(cfg))
}

/// Runs one algorithm: the scheme on `p`, or a baseline on `dc`.
pub fn run_algorithm<P, D>(
    alg: Algorithm,
    p: &P,
    dc: &D,
    u0: &Vector,
    section: &SolverSection,
    pc: &Preconditioner,
    stop: &StopCriteria,
) -> convsplit::Result<SolveResult>
where
    P: Problem + ?Sized,
    D: DcSplitting + ProxDcSplitting,
{
    if let Some(cfg) = scheme_config(alg, p, u0, section, pc, stop)? {
        return run(p, &cfg, u0);
    }
    match alg {
        Algorithm::Dca => dca_run(dc, stop, u0),
        Algorithm::Bdca => bdca_run(dc, Some(&section.linesearch.config()), stop, u0),
        Algorithm::Pdcae => pdcae_run(dc, &section.pdcae, stop, u0),
        _ => unreachable!("scheme algorithms are handled above"),
    }
}

/// One row of a results table. `wall_time` is kept last so it can be
/// dropped when comparing outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub problem: &'static str,
    pub size: usize,
    pub seed: u64,
    pub algorithm: String,
    pub criterion: String,
    pub dim: usize,
    pub status: String,
    pub iterations: usize,
    pub stop_reason: String,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub grad_norm: f64,
    pub quality: Option<f64>,
    pub sparsity: Option<usize>,
    pub ls_fallbacks: usize,
    pub violations: usize,
    pub failing: String,
    pub bound_warnings: usize,
    pub wall_time: f64,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Full outcome of one run: the table row plus the solver output, if any.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub result: Option<SolveResult>,
}

pub struct RunKey<'a> {
    pub problem: &'static str,
    pub size: usize,
    pub seed: u64,
    pub algorithm: String,
    pub criterion: &'a str,
    pub dim: usize,
}

/// Turns a solver outcome into a row. Setup errors are passed through;
/// numerical failures become a row with a non-`ok` status.
pub fn record_outcome(
    key: RunKey<'_>,
    outcome: convsplit::Result<SolveResult>,
    energy: impl Fn(&Vector) -> f64,
    grad_norm: impl Fn(&Vector) -> f64,
    sparsity_of: impl Fn(&Vector) -> Option<usize>,
    started: Instant,
) -> convsplit::Result<RunOutput> {
    let base = RunRecord {
        problem: key.problem,
        size: key.size,
        seed: key.seed,
        algorithm: key.algorithm,
        criterion: key.criterion.to_string(),
        dim: key.dim,
        status: "ok".into(),
        iterations: 0,
        stop_reason: String::new(),
        initial_energy: f64::NAN,
        final_energy: f64::NAN,
        grad_norm: f64::NAN,
        quality: None,
        sparsity: None,
        ls_fallbacks: 0,
        violations: 0,
        failing: String::new(),
        bound_warnings: 0,
        wall_time: 0.0,
    };
    match outcome {
        Ok(r) => {
            let record = RunRecord {
                iterations: r.iterations,
                stop_reason: format!("{:?}", r.stop_reason),
                initial_energy: r.initial_energy,
                final_energy: energy(&r.u_final),
                grad_norm: grad_norm(&r.u_final),
                quality: r.trace.last().and_then(|t| t.quality),
                sparsity: sparsity_of(&r.u_final),
                ls_fallbacks: r.trace.iter().filter(|t| t.ls_fallback).count(),
                violations: r.report.total_violations(),
                failing: r.report.failing().join("+"),
                bound_warnings: r.bound_warnings.len(),
                wall_time: r.wall_time,
                ..base
            };
            Ok(RunOutput {
                record,
                result: Some(r),
            })
        }
        Err(e) if is_setup_error(&e) => Err(e),
        Err(e) => Ok(RunOutput {
            record: RunRecord {
                status: format!("error: {e}"),
                wall_time: started.elapsed().as_secs_f64(),
                ..base
            },
            result: None,
        }),
    }
}

/// A SCAD instance with both splittings.
pub struct ScadCase {
    pub size: usize,
    pub seed: u64,
    pub inst: ScadInstance,
    pub problem: ScadProblem,
    pub dc: ScadDc,
}

impl ScadCase {
    pub fn new(cfg: &ScadConfig, size: usize, seed: u64) -> convsplit::Result<Self> {
        let (m, k, s) = cfg.dims(size);
        let inst = gen_scad(m, k, s, seed, cfg.model)?;
        Ok(Self {
            size,
            seed,
            problem: ScadProblem::new(&inst)?,
            dc: ScadDc::new(&inst)?,
            inst,
        })
    }

    pub fn u0(&self) -> Vector {
        Vector::zeros(self.problem.dim())
    }

    pub fn run(&self, alg: Algorithm, cfg: &RunConfig, stop: &StopCriteria) -> convsplit::Result<RunOutput> {
        let started = Instant::now();
        let pc = cfg.solver.preconditioner.resolve(ProblemKind::Scad);
        let u0 = self.u0();
        let outcome = run_algorithm(alg, &self.problem, &self.dc, &u0, &cfg.solver, &pc, stop);
        let tol = cfg.scad.sparsity_tol;
        record_outcome(
            self.key(alg.as_str().to_string()),
            outcome,
            |u| self.problem.energy(u),
            |u| self.problem.gradient(u).norm(),
            |u| Some(sparsity(u, tol)),
            started,
        )
    }

    /// DCA on the ℓ₁-SCAD model, the reference for the sparsity table.
    pub fn run_l1_reference(&self, cfg: &RunConfig, stop: &StopCriteria) -> convsplit::Result<RunOutput> {
        let started = Instant::now();
        let l1 = L1ScadDc::new(&self.inst)?;
        let outcome = dca_run(&l1, stop, &self.u0());
        let tol = cfg.scad.sparsity_tol;
        record_outcome(
            self.key("dca-l1".into()),
            outcome,
            |u| DcSplitting::energy(&l1, u),
            |_| f64::NAN,
            |u| Some(sparsity(u, tol)),
            started,
        )
    }

    fn key(&self, algorithm: String) -> RunKey<'static> {
        RunKey {
            problem: "scad",
            size: self.size,
            seed: self.seed,
            algorithm,
            criterion: "rel",
            dim: self.problem.dim(),
        }
    }
}

/// A graph Ginzburg-Landau instance.
pub struct GlCase {
    pub seed: u64,
    pub image: GrayImage,
    pub inst: GlInstance,
    pub well: QuadraticWell,
    pub dc: WellDc,
}

impl GlCase {
    /// Reads the configured image and labels, or draws the synthetic image.
    pub fn new(cfg: &GlConfig, seed: u64) -> convsplit::Result<Self> {
        let (image, labels, truth) = match (&cfg.image, &cfg.labels) {
            (Some(img), Some(lab)) => {
                let image = read_image(img)?;
                let labels = labels_from_mask(&read_image(lab)?);
                let truth = match &cfg.truth {
                    Some(t) => Some(read_image(t)?.data.iter().map(|&v| v > 0.5).collect()),
                    None => None,
                };
                (image, labels, truth)
            }
            _ => {
                let s = &cfg.synthetic;
                let (image, labels, truth) = synthetic_two_disks(s.size, s.noise, s.label_fraction, seed)?;
                (image, labels, Some(truth))
            }
        };
        let inst = gl_instance(&image, labels, truth, cfg.model)?;
        let well = gl_problem(&inst)?;
        let dc = WellDc::new(&well)?;
        Ok(Self {
            seed,
            image,
            inst,
            well,
            dc,
        })
    }

    pub fn run(
        &self,
        alg: Algorithm,
        cfg: &RunConfig,
        criterion: &str,
        stop: &StopCriteria,
    ) -> convsplit::Result<RunOutput> {
        let started = Instant::now();
        let pc = cfg.solver.preconditioner.resolve(ProblemKind::Gl);
        let u0 = self.inst.initial_guess();
        let outcome = run_algorithm(alg, &self.well, &self.dc, &u0, &cfg.solver, &pc, stop);
        record_outcome(
            RunKey {
                problem: "gl",
                size: self.inst.len(),
                seed: self.seed,
                algorithm: alg.as_str().to_string(),
                criterion,
                dim: self.inst.len(),
            },
            outcome,
            |u| self.well.energy(u),
            |u| self.well.gradient(u).norm(),
            |_| None,
            started,
        )
    }
}
