//! The `scad-bench`, `gl-segment` and `solve` commands.

use std::fs;
use std::path::Path;

use anyhow::Context;
use convsplit::problems::gl::threshold_seg;
use convsplit::problems::image::{encode_pgm, encode_pgm_mask};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{parse_criterion, Algorithm, ProblemKind, RunConfig};
use crate::output::{aggregate, summary_json, write_csv, write_json, Aggregate};
use crate::runner::{GlCase, RunOutput, RunRecord, ScadCase};

/// What a command produced, for callers that inspect results directly.
#[derive(Debug)]
pub struct CommandOutcome {
    pub rows: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
    pub summary: Value,
    pub outputs: Vec<RunOutput>,
}

impl CommandOutcome {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| !r.ok())
    }
}

/// Runs `f` on a pool with the configured thread count.
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(f))
}

fn algorithm_rank(name: &str) -> usize {
    Algorithm::ALL
        .iter()
        .position(|a| a.as_str() == name)
        .unwrap_or(Algorithm::ALL.len())
}

fn sort_outputs(outputs: &mut [RunOutput], criteria: &[String]) {
    let crit_rank = |c: &str| criteria.iter().position(|x| x == c).unwrap_or(usize::MAX);
    outputs.sort_by(|a, b| {
        let (a, b) = (&a.record, &b.record);
        (
            a.size,
            a.seed,
            algorithm_rank(&a.algorithm),
            &a.algorithm,
            crit_rank(&a.criterion),
        )
            .cmp(&(
                b.size,
                b.seed,
                algorithm_rank(&b.algorithm),
                &b.algorithm,
                crit_rank(&b.criterion),
            ))
    });
}

fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_traces(dir: &Path, outputs: &[RunOutput]) -> anyhow::Result<()> {
    let tdir = dir.join("traces");
    prepare_dir(&tdir)?;
    for o in outputs {
        if let Some(r) = &o.result {
            let rec = &o.record;
            let name = format!(
                "{}_{}_size{}_seed{}_{}.csv",
                rec.problem,
                rec.algorithm,
                rec.size,
                rec.seed,
                rec.criterion.replace(['=', '.'], "_")
            );
            write_csv(&tdir.join(name), &r.trace)?;
        }
    }
    Ok(())
}

fn invariant_details(outputs: &[RunOutput]) -> Value {
    let reports: Vec<Value> = outputs
        .iter()
        .filter_map(|o| {
            let r = o.result.as_ref()?;
            Some(json!({
                "size": o.record.size,
                "seed": o.record.seed,
                "algorithm": o.record.algorithm,
                "criterion": o.record.criterion,
                "report": r.report,
                "bound_warnings": r.bound_warnings,
            }))
        })
        .collect();
    Value::Array(reports)
}

#[derive(Debug, Serialize)]
struct SparsityRow<'a> {
    size: usize,
    seed: u64,
    model: &'static str,
    algorithm: &'a str,
    dim: usize,
    sparsity: Option<usize>,
}

/// Random SCAD instances for every size and seed, each solved by every
/// configured algorithm.
pub fn scad_bench(cfg: &RunConfig) -> anyhow::Result<CommandOutcome> {
    let cfg = RunConfig {
        problem: ProblemKind::Scad,
        ..cfg.clone()
    };
    cfg.validate()?;
    let keys: Vec<(usize, u64)> = cfg
        .scad
        .sizes
        .iter()
        .flat_map(|&i| (0..cfg.instances as u64).map(move |j| (i, j)))
        .map(|(i, j)| (i, cfg.seed + j))
        .collect();
    let mut outputs = with_pool(cfg.threads, || -> convsplit::Result<Vec<RunOutput>> {
        let cases = keys
            .par_iter()
            .map(|&(i, seed)| ScadCase::new(&cfg.scad, i, seed))
            .collect::<convsplit::Result<Vec<_>>>()?;
        let mut jobs: Vec<(usize, Option<Algorithm>)> = Vec::new();
        for c in 0..cases.len() {
            jobs.extend(cfg.solver.algorithms.iter().map(|&a| (c, Some(a))));
            if cfg.scad.l1_reference {
                jobs.push((c, None));
            }
        }
        jobs.par_iter()
            .map(|&(c, alg)| match alg {
                Some(a) => cases[c].run(a, &cfg, &cfg.solver.stop),
                None => cases[c].run_l1_reference(&cfg, &cfg.solver.stop),
            })
            .collect()
    })??;
    sort_outputs(&mut outputs, &[]);
    let rows: Vec<RunRecord> = outputs.iter().map(|o| o.record.clone()).collect();
    let aggregates = aggregate(&rows);

    let sparsity: Vec<SparsityRow> = rows
        .iter()
        .map(|r| SparsityRow {
            size: r.size,
            seed: r.seed,
            model: if r.algorithm == "dca-l1" {
                "l1-scad"
            } else {
                "huber-scad"
            },
            algorithm: &r.algorithm,
            dim: r.dim,
            sparsity: r.sparsity,
        })
        .collect();
    let details = json!({
        "sizes": cfg.scad.sizes.iter().map(|&i| cfg.scad.dims(i)).collect::<Vec<_>>(),
        "invariants": invariant_details(&outputs),
    });
    let summary = summary_json("scad-bench", &cfg, &rows, &aggregates, details)?;

    let dir = &cfg.output.dir;
    prepare_dir(dir)?;
    if cfg.output.csv {
        write_csv(&dir.join("scad_runs.csv"), &rows)?;
        write_csv(&dir.join("scad_aggregate.csv"), &aggregates)?;
        write_csv(&dir.join("scad_sparsity.csv"), &sparsity)?;
    }
    if cfg.output.json {
        write_json(&dir.join("scad_summary.json"), &summary)?;
    }
    if cfg.output.traces {
        write_traces(dir, &outputs)?;
    }
    Ok(CommandOutcome {
        rows,
        aggregates,
        summary,
        outputs,
    })
}

/// Graph Ginzburg-Landau segmentation run to each configured criterion.
pub fn gl_segment(cfg: &RunConfig) -> anyhow::Result<CommandOutcome> {
    let cfg = RunConfig {
        problem: ProblemKind::Gl,
        ..cfg.clone()
    };
    cfg.validate()?;
    let criteria: Vec<(String, convsplit::solver::StopCriteria)> = cfg
        .gl
        .criteria
        .iter()
        .map(|c| Ok((c.clone(), parse_criterion(c, &cfg.solver.stop)?)))
        .collect::<anyhow::Result<_>>()?;
    // A given image is the same for every seed.
    let instances = if cfg.gl.image.is_some() { 1 } else { cfg.instances };
    let seeds: Vec<u64> = (0..instances as u64).map(|j| cfg.seed + j).collect();
    let (cases, mut outputs) = with_pool(cfg.threads, || -> convsplit::Result<_> {
        let cases = seeds
            .par_iter()
            .map(|&s| GlCase::new(&cfg.gl, s))
            .collect::<convsplit::Result<Vec<_>>>()?;
        let nk = criteria.len();
        let jobs: Vec<(usize, Algorithm, usize)> = (0..cases.len())
            .flat_map(|c| {
                cfg.solver
                    .algorithms
                    .iter()
                    .flat_map(move |&a| (0..nk).map(move |k| (c, a, k)))
            })
            .collect();
        let outputs = jobs
            .par_iter()
            .map(|&(c, a, k)| cases[c].run(a, &cfg, &criteria[k].0, &criteria[k].1))
            .collect::<convsplit::Result<Vec<_>>>()?;
        Ok((cases, outputs))
    })??;
    sort_outputs(&mut outputs, &cfg.gl.criteria);
    let rows: Vec<RunRecord> = outputs.iter().map(|o| o.record.clone()).collect();
    let aggregates = aggregate(&rows);
    let details = json!({
        "images": cases.iter().map(|c| json!({
            "seed": c.seed,
            "width": c.inst.width,
            "height": c.inst.height,
            "edges": c.inst.edges.len(),
            "sigma2": c.inst.sigma2,
        })).collect::<Vec<_>>(),
        "invariants": invariant_details(&outputs),
    });
    let summary = summary_json("gl-segment", &cfg, &rows, &aggregates, details)?;

    let dir = &cfg.output.dir;
    prepare_dir(dir)?;
    if cfg.output.csv {
        write_csv(&dir.join("gl_runs.csv"), &rows)?;
        write_csv(&dir.join("gl_aggregate.csv"), &aggregates)?;
    }
    if cfg.output.json {
        write_json(&dir.join("gl_summary.json"), &summary)?;
    }
    if cfg.output.traces {
        write_traces(dir, &outputs)?;
    }
    // Masks from the last criterion of each run.
    let last = cfg.gl.criteria.last().cloned().unwrap_or_default();
    for case in &cases {
        if cfg.gl.image.is_none() {
            fs::write(
                dir.join(format!("image_seed{}.pgm", case.seed)),
                encode_pgm(&case.image),
            )?;
        }
        for o in outputs
            .iter()
            .filter(|o| o.record.seed == case.seed && o.record.criterion == last)
        {
            if let Some(r) = &o.result {
                let mask = encode_pgm_mask(&threshold_seg(&r.u_final), case.inst.width, case.inst.height)?;
                fs::write(
                    dir.join(format!("mask_{}_seed{}.pgm", o.record.algorithm, case.seed)),
                    mask,
                )?;
            }
        }
    }
    Ok(CommandOutcome {
        rows,
        aggregates,
        summary,
        outputs,
    })
}

/// One run of the first configured algorithm on the first instance, with its
/// full trace and final iterate.
pub fn solve(cfg: &RunConfig) -> anyhow::Result<CommandOutcome> {
    cfg.validate()?;
    let alg = cfg.solver.algorithms[0];
    let output = match cfg.problem {
        ProblemKind::Scad => ScadCase::new(&cfg.scad, cfg.scad.sizes[0], cfg.seed)?.run(alg, cfg, &cfg.solver.stop)?,
        ProblemKind::Gl => {
            let criterion = cfg.gl.criteria.first().cloned().unwrap_or_else(|| "rel=1e-12".into());
            let stop = parse_criterion(&criterion, &cfg.solver.stop)?;
            GlCase::new(&cfg.gl, cfg.seed)?.run(alg, cfg, &criterion, &stop)?
        }
    };
    let rows = vec![output.record.clone()];
    let aggregates = aggregate(&rows);
    let details = json!({ "invariants": invariant_details(std::slice::from_ref(&output)) });
    let summary = summary_json("solve", cfg, &rows, &aggregates, details)?;
    let dir = &cfg.output.dir;
    prepare_dir(dir)?;
    if let Some(r) = &output.result {
        write_csv(&dir.join("trace.csv"), &r.trace)?;
        let values: Vec<String> = r.u_final.iter().map(|v| v.to_string()).collect();
        fs::write(dir.join("solution.txt"), values.join("\n") + "\n")?;
    }
    if cfg.output.csv {
        write_csv(&dir.join("solve_run.csv"), &rows)?;
    }
    if cfg.output.json {
        write_json(&dir.join("solve_summary.json"), &summary)?;
    }
    Ok(CommandOutcome {
        rows,
        aggregates,
        summary,
        outputs: vec![output],
    })
}
