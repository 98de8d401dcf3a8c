//! Run configuration, read from TOML. Unknown keys are rejected everywhere.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use convsplit::linesearch::{LineSearchConfig, LineSearchMode};
use convsplit::problems::gl::GlParams;
use convsplit::problems::scad::ScadParams;
use convsplit::solver::baselines::PdcaeConfig;
use convsplit::solver::{BoundMode, StopCriteria};
use convsplit::{Preconditioner, PreconditionerKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    BapdcaN,
    BapdcaT,
    BapdcaLsN,
    BapdcaLsT,
    Badca,
    BadcaLs,
    Dca,
    Bdca,
    Pdcae,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Dca,
        Algorithm::Bdca,
        Algorithm::Pdcae,
        Algorithm::Badca,
        Algorithm::BadcaLs,
        Algorithm::BapdcaN,
        Algorithm::BapdcaT,
        Algorithm::BapdcaLsN,
        Algorithm::BapdcaLsT,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::BapdcaN => "bapdca-n",
            Algorithm::BapdcaT => "bapdca-t",
            Algorithm::BapdcaLsN => "bapdca-ls-n",
            Algorithm::BapdcaLsT => "bapdca-ls-t",
            Algorithm::Badca => "badca",
            Algorithm::BadcaLs => "badca-ls",
            Algorithm::Dca => "dca",
            Algorithm::Bdca => "bdca",
            Algorithm::Pdcae => "pdcae",
        }
    }

    /// Whether the run goes through the preconditioned scheme (and so has
    /// invariant monitors) rather than a DC baseline.
    pub fn is_scheme(self) -> bool {
        !matches!(self, Algorithm::Dca | Algorithm::Bdca | Algorithm::Pdcae)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim())
            .with_context(|| {
                let names: Vec<_> = Algorithm::ALL.iter().map(|a| a.as_str()).collect();
                format!("unknown algorithm {s:?}; expected one of {}", names.join(", "))
            })
    }
}

/// Comma-separated algorithm list.
pub fn parse_algorithms(list: &str) -> anyhow::Result<Vec<Algorithm>> {
    let algs = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<anyhow::Result<Vec<_>>>()?;
    if algs.is_empty() {
        bail!("empty algorithm list");
    }
    Ok(algs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Scad,
    Gl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScadConfig {
    /// Base tuple `(m, k, s)`; size `i` uses `i·scale` times each entry.
    pub m: usize,
    pub k: usize,
    pub s: usize,
    pub sizes: Vec<usize>,
    pub scale: f64,
    pub model: ScadParams,
    /// Threshold for counting a coefficient as nonzero.
    pub sparsity_tol: f64,
    /// Also solve the ℓ₁-SCAD model by DCA for the sparsity table.
    pub l1_reference: bool,
}

impl Default for ScadConfig {
    fn default() -> Self {
        Self {
            m: 720,
            k: 2560,
            s: 80,
            sizes: vec![1],
            scale: 0.25,
            model: ScadParams::default(),
            sparsity_tol: 1e-6,
            l1_reference: true,
        }
    }
}

impl ScadConfig {
    /// `(m, k, s)` for size index `i`, rounded to the nearest integer.
    pub fn dims(&self, i: usize) -> (usize, usize, usize) {
        let f = |v: usize| ((v * i) as f64 * self.scale).round() as usize;
        (f(self.m), f(self.k), f(self.s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub size: usize,
    pub noise: f64,
    pub label_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            size: 64,
            noise: 0.05,
            label_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlConfig {
    /// Grayscale image (PGM or CSV). Without it a synthetic two-disk image is
    /// generated from the seed.
    pub image: Option<PathBuf>,
    /// Label mask: white pixels are foreground seeds, black background.
    pub labels: Option<PathBuf>,
    /// Ground-truth mask for DICE.
    pub truth: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub model: GlParams,
    /// Termination criteria, each run separately: `dice=0.993`,
    /// `grad=1e-1`, `incr=1e-5`, `rel=1e-12`.
    pub criteria: Vec<String>,
}

impl Default for GlConfig {
    fn default() -> Self {
        Self {
            image: None,
            labels: None,
            truth: None,
            synthetic: SyntheticConfig::default(),
            model: GlParams::default(),
            criteria: vec!["dice=0.993".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreconditionerConfig {
    /// Defaults to the Richardson shift for SCAD and Jacobi for GL.
    pub kind: Option<PreconditionerKind>,
    /// Defaults to 1 for SCAD and 50 for GL.
    pub sweeps: Option<usize>,
    pub c_tilde: Option<f64>,
    pub shift: Option<f64>,
    pub cg_tol: f64,
}

impl Default for PreconditionerConfig {
    fn default() -> Self {
        Self {
            kind: None,
            sweeps: None,
            c_tilde: None,
            shift: None,
            cg_tol: 1e-10,
        }
    }
}

impl PreconditionerConfig {
    pub fn resolve(&self, problem: ProblemKind) -> Preconditioner {
        let (kind, sweeps) = match problem {
            ProblemKind::Scad => (PreconditionerKind::RichardsonShift, 1),
            ProblemKind::Gl => (PreconditionerKind::Jacobi, 50),
        };
        Preconditioner {
            kind: self.kind.unwrap_or(kind),
            sweeps: self.sweeps.unwrap_or(sweeps),
            cg_tol: self.cg_tol,
            c_tilde: self.c_tilde,
            shift: self.shift,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub algorithms: Vec<Algorithm>,
    /// Time step; unset means just below `2/(3L)`.
    pub dt: Option<f64>,
    pub bound_mode: BoundMode,
    pub monitor: bool,
    pub preconditioner: PreconditionerConfig,
    pub linesearch: LineSearchSection,
    pub stop: StopCriteria,
    pub pdcae: PdcaeConfig,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            algorithms: vec![
                Algorithm::Dca,
                Algorithm::Bdca,
                Algorithm::BapdcaN,
                Algorithm::BapdcaT,
                Algorithm::BapdcaLsN,
                Algorithm::BapdcaLsT,
            ],
            dt: None,
            bound_mode: BoundMode::Experiment,
            monitor: true,
            preconditioner: PreconditionerConfig::default(),
            linesearch: LineSearchSection::default(),
            stop: StopCriteria::default(),
            pdcae: PdcaeConfig::default(),
        }
    }
}

/// Line-search settings. An unset `lambda_bar` follows `lambda_bar_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineSearchSection {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_bar_max: f64,
    pub use_quadratic_init: bool,
    pub lambda_bar: Option<f64>,
    pub max_backtracks: usize,
    pub mode: LineSearchMode,
}

impl Default for LineSearchSection {
    fn default() -> Self {
        let d = LineSearchConfig::default();
        Self {
            alpha: d.alpha,
            beta: d.beta,
            lambda_bar_max: d.lambda_bar_max,
            use_quadratic_init: d.use_quadratic_init,
            lambda_bar: None,
            max_backtracks: d.max_backtracks,
            mode: d.mode,
        }
    }
}

impl LineSearchSection {
    pub fn config(&self) -> LineSearchConfig {
        let d = LineSearchConfig::default();
        LineSearchConfig {
            alpha: self.alpha,
            beta: self.beta,
            lambda_bar_max: self.lambda_bar_max,
            use_quadratic_init: self.use_quadratic_init,
            lambda_bar: self
                .lambda_bar
                .unwrap_or(d.lambda_bar / d.lambda_bar_max * self.lambda_bar_max),
            max_backtracks: self.max_backtracks,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub csv: bool,
    pub json: bool,
    /// Write per-iteration traces next to the summary.
    pub traces: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            csv: true,
            json: true,
            traces: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagSection {
    /// Inject a corrupted step into a strict run; the audit must then fail.
    pub corrupt: bool,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Number of instances; instance `j` uses seed `seed + j`.
    pub instances: usize,
    /// Worker threads for independent runs; 0 lets rayon decide.
    pub threads: usize,
    pub problem: ProblemKind,
    pub scad: ScadConfig,
    pub gl: GlConfig,
    pub solver: SolverSection,
    pub output: OutputSection,
    pub diag: DiagSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 5,
            threads: 0,
            problem: ProblemKind::Scad,
            scad: ScadConfig::default(),
            gl: GlConfig::default(),
            solver: SolverSection::default(),
            output: OutputSection::default(),
            diag: DiagSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Structural checks that do not need an instance.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.instances == 0 {
            bail!("instances must be at least 1");
        }
        if self.solver.algorithms.is_empty() {
            bail!("solver.algorithms is empty");
        }
        if let Some(dt) = self.solver.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                bail!("solver.dt must be positive, got {dt}");
            }
        }
        if self.solver.stop.max_iters == 0 {
            bail!("solver.stop.max_iters must be at least 1");
        }
        self.solver.linesearch.config().validate()?;
        self.solver.preconditioner.resolve(self.problem).validate()?;
        let s = &self.scad;
        if !(s.scale > 0.0 && s.scale.is_finite()) {
            bail!("scad.scale must be positive, got {}", s.scale);
        }
        if s.sizes.is_empty() || s.sizes.contains(&0) {
            bail!("scad.sizes must be a nonempty list of positive integers");
        }
        s.model.validate()?;
        self.gl.model.validate()?;
        for c in &self.gl.criteria {
            parse_criterion(c, &self.solver.stop)?;
        }
        if self.gl.image.is_some() != self.gl.labels.is_some() {
            bail!("gl.image and gl.labels must be given together");
        }
        Ok(())
    }

    /// The config as embedded in reports. The output directory and thread
    /// count do not change results and are left out.
    pub fn report_value(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["output"].as_object_mut().map(|o| o.remove("dir"));
        v.as_object_mut().map(|o| o.remove("threads"));
        v
    }

    /// Canonical JSON used for hashing.
    pub fn canonical_json(&self) -> String {
        self.report_value().to_string()
    }

    /// Hex SHA-256 of [`RunConfig::canonical_json`].
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// A named GL termination criterion. Only the chosen test is active; the
/// iteration cap comes from `base`.
pub fn parse_criterion(spec: &str, base: &StopCriteria) -> anyhow::Result<StopCriteria> {
    let (key, value) = spec
        .split_once('=')
        .with_context(|| format!("criterion {spec:?} is not key=value"))?;
    let v: f64 = value
        .trim()
        .parse()
        .with_context(|| format!("criterion {spec:?}: bad number"))?;
    if !(v > 0.0 && v.is_finite()) {
        bail!("criterion {spec:?}: value must be positive");
    }
    let mut stop = StopCriteria::only_max_iters(base.max_iters);
    match key.trim() {
        "dice" => stop.quality_bound = Some(v),
        "grad" => stop.grad_norm_tol = Some(v),
        "incr" => stop.increment_tol = Some(v),
        "rel" => stop.rel_increment_tol = Some(v),
        other => bail!("unknown criterion {other:?}; expected dice, grad, incr or rel"),
    }
    Ok(stop)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sead = 3").is_err());
        assert!(RunConfig::from_toml("[solver]\ndtt = 1.0").is_err());
        assert!(RunConfig::from_toml("[solver.linesearch]\ngamma = 1.0").is_err());
        assert!(RunConfig::from_toml("[scad.model]\nmu = 5e-4\nnu = 1").is_err());
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 7
            problem = "gl"
            [solver]
            algorithms = ["bapdca-ls-t", "dca"]
            dt = 1.0
            bound_mode = "strict-theory"
            [solver.preconditioner]
            kind = "sgs"
            [solver.linesearch]
            lambda_bar_max = 1.0
            [gl]
            criteria = ["dice=0.99", "grad=1e-1"]
            [gl.model]
            epsilon = 5.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.solver.algorithms, vec![Algorithm::BapdcaLsT, Algorithm::Dca]);
        assert_eq!(cfg.solver.bound_mode, BoundMode::StrictTheory);
        assert_eq!(cfg.gl.model.epsilon, 5.0);
        let pc = cfg.solver.preconditioner.resolve(ProblemKind::Gl);
        assert_eq!((pc.kind, pc.sweeps), (PreconditionerKind::Sgs, 50));
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(RunConfig::from_toml("instances = 0").is_err());
        assert!(RunConfig::from_toml("[solver]\ndt = -1.0").is_err());
        assert!(RunConfig::from_toml("[scad.model]\nhuber_alpha = 1.0").is_err());
        assert!(RunConfig::from_toml("[gl]\ncriteria = [\"dice\"]").is_err());
        assert!(RunConfig::from_toml("[gl]\nimage = \"a.pgm\"").is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!(
            parse_algorithms("dca, bdca").unwrap(),
            vec![Algorithm::Dca, Algorithm::Bdca]
        );
        assert!(parse_algorithms("dca,foo").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn scaled_dims() {
        let s = ScadConfig::default();
        assert_eq!(s.dims(1), (180, 640, 20));
        assert_eq!(s.dims(2), (360, 1280, 40));
    }

    #[test]
    fn criteria() {
        let base = StopCriteria::default();
        let c = parse_criterion("incr = 1e-5", &base).unwrap();
        assert_eq!(c.increment_tol, Some(1e-5));
        assert_eq!(c.rel_increment_tol, None);
        assert!(parse_criterion("speed=1", &base).is_err());
        assert!(parse_criterion("grad=-1", &base).is_err());
    }
}
