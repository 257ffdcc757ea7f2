//! Experiment configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{DirectParams, Generator, OptimizerConfig, SplatParams};
use crate::guidance::{Combiner, CombinerKind};
use crate::oracle::{GmmOracle, OracleSpec};
use crate::presets::preset;
use crate::schedule::{NoiseSchedule, ScheduleFamily, WeightRule};

/// Where the oracle comes from: a shipped preset or an inline mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OracleSource {
    Preset { preset: String },
    Inline(OracleSpec),
}

impl OracleSource {
    pub fn spec(&self) -> Result<OracleSpec> {
        match self {
            OracleSource::Preset { preset: name } => preset(name),
            OracleSource::Inline(spec) => Ok(spec.clone()),
        }
    }
}

impl Default for OracleSource {
    fn default() -> Self {
        OracleSource::Preset {
            preset: "two-class-2d".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    #[default]
    ScaledLinear,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub family: FamilyName,
    #[serde(default = "default_timesteps")]
    pub timesteps: usize,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    /// Cosine offset `s`.
    #[serde(default = "default_offset")]
    pub offset: f64,
    /// Defaults to the interior window of the schedule.
    #[serde(default)]
    pub t_min: Option<usize>,
    #[serde(default)]
    pub t_max: Option<usize>,
    #[serde(default)]
    pub weight: WeightRule,
}

fn default_timesteps() -> usize {
    1000
}
fn default_beta_start() -> f64 {
    1e-4
}
fn default_beta_end() -> f64 {
    2e-2
}
fn default_offset() -> f64 {
    0.008
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            family: FamilyName::default(),
            timesteps: default_timesteps(),
            beta_start: default_beta_start(),
            beta_end: default_beta_end(),
            offset: default_offset(),
            t_min: None,
            t_max: None,
            weight: WeightRule::default(),
        }
    }
}

impl ScheduleConfig {
    pub fn family(&self) -> ScheduleFamily {
        match self.family {
            FamilyName::ScaledLinear => ScheduleFamily::ScaledLinear {
                beta_start: self.beta_start,
                beta_end: self.beta_end,
            },
            FamilyName::Cosine => ScheduleFamily::Cosine { offset: self.offset },
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.timesteps, self.family())
    }

    pub fn window(&self, schedule: &NoiseSchedule) -> Result<(usize, usize)> {
        let (lo, hi) = schedule.interior_window();
        let w = (self.t_min.unwrap_or(lo), self.t_max.unwrap_or(hi));
        if w.0 < 1 || w.0 > w.1 || w.1 > schedule.timesteps() {
            return Err(Error::Config(format!(
                "timestep window [{}, {}] must satisfy 1 <= t_min <= t_max <= {}",
                w.0,
                w.1,
                schedule.timesteps()
            )));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedInit {
    GlobalMean,
    Zeros,
}

/// Starting point of a direct parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DirectInit {
    Named(NamedInit),
    Point(Vec<f64>),
}

impl Default for DirectInit {
    fn default() -> Self {
        DirectInit::Named(NamedInit::GlobalMean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorConfig {
    Direct {
        #[serde(default)]
        init: DirectInit,
        /// Set for image-valued oracles so snapshots are written as PPM.
        #[serde(default)]
        image: Option<[usize; 2]>,
    },
    Splat {
        width: usize,
        height: usize,
        count: usize,
        #[serde(default = "default_init_scale")]
        init_scale: f64,
    },
}

fn default_init_scale() -> f64 {
    0.05
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::Direct {
            init: DirectInit::default(),
            image: None,
        }
    }
}

/// Stream separation for splat initialisation relative to the run seed.
const SPLAT_INIT_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

impl GeneratorConfig {
    pub fn build(&self, oracle: &GmmOracle, seed: u64) -> Result<Generator> {
        let g = match self {
            GeneratorConfig::Direct { init, image } => {
                let x = match init {
                    DirectInit::Named(NamedInit::GlobalMean) => oracle.global_mean(),
                    DirectInit::Named(NamedInit::Zeros) => vec![0.0; oracle.dim()],
                    DirectInit::Point(p) => p.clone(),
                };
                let mut d = DirectParams::new(x)?;
                if let Some([w, h]) = image {
                    d = d.with_image_shape(*w, *h)?;
                }
                Generator::Direct(d)
            }
            GeneratorConfig::Splat {
                width,
                height,
                count,
                init_scale,
            } => Generator::Splat(SplatParams::random_init(
                *width,
                *height,
                *count,
                *init_scale,
                seed ^ SPLAT_INIT_STREAM,
            )?),
        };
        Ok(g)
    }
}

/// Settings for `angle-census`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensusConfig {
    /// `(t, eps)` draws per evaluation point.
    #[serde(default = "default_draws")]
    pub draws: usize,
    /// Cosine histogram bins over `[-1, 1]`.
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Evaluation points along the reference trajectory.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Balance weight of the reference trajectory when the configured
    /// combiner is not the balanced one.
    #[serde(default = "default_reference_lambda")]
    pub reference_lambda: f64,
}

fn default_draws() -> usize {
    2000
}
fn default_bins() -> usize {
    20
}
fn default_checkpoints() -> usize {
    10
}
fn default_reference_lambda() -> f64 {
    crate::guidance::DEFAULT_LAMBDA
}

impl Default for CensusConfig {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            bins: default_bins(),
            checkpoints: default_checkpoints(),
            reference_lambda: default_reference_lambda(),
        }
    }
}

/// One experiment: oracle, schedule, generator, combiner, optimizer, seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Nominal step budget.
    pub steps: usize,
    /// The run executes `round(steps * overtrain_factor)` steps.
    #[serde(default = "one")]
    pub overtrain_factor: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Target class index.
    #[serde(default)]
    pub class: usize,
    /// Trailing window for the nominal convergence point.
    #[serde(default = "default_convergence_window")]
    pub convergence_window: usize,
    /// Allowed drop of final `log p(x|y)` below its best windowed value.
    #[serde(default = "default_overtrain_slack")]
    pub overtrain_slack: f64,
    #[serde(default)]
    pub oracle: OracleSource,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default = "default_combiner")]
    pub combiner: Combiner,
    /// Adam with step 0.01 for direct generators and 0.005 for splats
    /// when unset.
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub census: CensusConfig,
    /// Combiners for `compare`; defaults to balanced, SDS and CSD.
    #[serde(default)]
    pub compare: Vec<Combiner>,
    /// Balance weights for `sweep-lambda`.
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
}

fn one() -> f64 {
    1.0
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_record_every() -> usize {
    1
}
fn default_convergence_window() -> usize {
    50
}
fn default_overtrain_slack() -> f64 {
    0.5
}
fn default_combiner() -> Combiner {
    Combiner::bsd(crate::guidance::DEFAULT_LAMBDA)
}
fn default_lambdas() -> Vec<f64> {
    vec![5.0, 15.0, 25.0, 35.0]
}

/// Everything a run needs, built and cross-checked from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub oracle: GmmOracle,
    pub schedule: NoiseSchedule,
    pub window: (usize, usize),
    pub total_steps: usize,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        self.optimizer.unwrap_or(match self.generator {
            GeneratorConfig::Direct { .. } => OptimizerConfig::adam(0.01),
            GeneratorConfig::Splat { .. } => OptimizerConfig::adam(0.005),
        })
    }

    pub fn total_steps(&self) -> usize {
        (self.steps as f64 * self.overtrain_factor).round() as usize
    }

    pub fn compare_combiners(&self) -> Vec<Combiner> {
        if self.compare.is_empty() {
            vec![
                Combiner::bsd(crate::guidance::DEFAULT_LAMBDA),
                Combiner::sds(crate::guidance::DEFAULT_CFG_SCALE),
                Combiner::csd(),
            ]
        } else {
            self.compare.clone()
        }
    }

    /// Checks every field and builds the oracle and schedule. Touches the
    /// filesystem only to confirm `output_dir` is writable.
    pub fn prepare(&self) -> Result<Prepared> {
        let bad = |m: String| Err(Error::Config(m));
        if self.steps < 1 {
            return bad("steps must be >= 1".into());
        }
        if !(self.overtrain_factor >= 1.0 && self.overtrain_factor.is_finite()) {
            return bad(format!(
                "overtrain_factor must be a finite value >= 1, got {}",
                self.overtrain_factor
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct".into());
        }
        if self.record_every < 1 {
            return bad("record_every must be >= 1".into());
        }
        if self.convergence_window < 1 {
            return bad("convergence_window must be >= 1".into());
        }
        if !(self.overtrain_slack >= 0.0) {
            return bad("overtrain_slack must be >= 0".into());
        }
        if self.census.draws < 1 || self.census.bins < 1 || self.census.checkpoints < 1 {
            return bad("census draws, bins and checkpoints must be >= 1".into());
        }
        if !(self.census.reference_lambda > 0.0 && self.census.reference_lambda.is_finite()) {
            return bad("census reference_lambda must be finite and > 0".into());
        }
        if self.lambdas.is_empty() {
            return bad("lambdas must be non-empty".into());
        }
        for l in &self.lambdas {
            Combiner::new(CombinerKind::Bsd { lambda: *l })?;
        }
        self.combiner.validate()?;
        for c in &self.compare {
            c.validate()?;
        }
        self.optimizer().validate()?;
        let oracle = GmmOracle::new(&self.oracle.spec()?)?;
        oracle.check_label(crate::oracle::Label::Class(self.class))?;
        let schedule = self.schedule.build()?;
        let window = self.schedule.window(&schedule)?;
        let generator = self.generator.build(&oracle, self.seeds[0])?;
        use crate::generator::Parameterization;
        if generator.output_dim() != oracle.dim() {
            return bad(format!(
                "generator output dimension {} does not match oracle dimension {}",
                generator.output_dim(),
                oracle.dim()
            ));
        }
        ensure_writable(&self.output_dir)?;
        Ok(Prepared {
            oracle,
            schedule,
            window,
            total_steps: self.total_steps(),
        })
    }
}

fn ensure_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-check");
    std::fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(dir: &Path) -> RunConfig {
        RunConfig::from_toml_str(&format!(
            "steps = 3\noutput_dir = {:?}\n",
            dir.to_string_lossy()
        ))
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let dir = tempfile::tempdir().unwrap();
        let c = minimal(dir.path());
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.total_steps(), 3);
        let p = c.prepare().unwrap();
        assert_eq!(p.window, (20, 980));
        assert_eq!(p.oracle.dim(), 2);
        assert_eq!(c.optimizer(), OptimizerConfig::adam(0.01));
        let mut splat = c.clone();
        splat.generator = GeneratorConfig::Splat {
            width: 2,
            height: 1,
            count: 1,
            init_scale: default_init_scale(),
        };
        assert_eq!(splat.optimizer(), OptimizerConfig::adam(0.005));
    }

    #[test]
    fn full_config_parses() {
        let c = RunConfig::from_toml_str(
            r#"
            steps = 10
            overtrain_factor = 2.5
            seeds = [1, 2]
            record_every = 5
            [oracle]
            prior = [1.0]
            [[oracle.classes]]
            components = [{ weight = 1.0, mean = [0.0, 0.0, 0.0], scale = 1.0 }]
            [schedule]
            family = "cosine"
            timesteps = 500
            t_min = 50
            weight = "constant"
            [generator]
            kind = "direct"
            init = [0.5, 0.5, 0.5]
            [combiner]
            kind = "sds"
            cfg_scale = 7.5
            subtract_eps = false
            [optimizer]
            kind = "sgd"
            lr = 0.1
            [[compare]]
            kind = "csd"
            "#,
        )
        .unwrap();
        assert_eq!(c.total_steps(), 25);
        assert_eq!(c.schedule.family(), ScheduleFamily::cosine());
        assert_eq!(c.schedule.weight, WeightRule::Constant);
        assert!(!c.combiner.subtract_eps());
        assert_eq!(c.compare_combiners(), vec![Combiner::csd()]);
    }

    #[test]
    fn invalid_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = minimal(dir.path());
        let mut c = base.clone();
        c.seeds.clear();
        assert!(c.prepare().is_err());
        let mut c = base.clone();
        c.seeds = vec![3, 3];
        assert!(c.prepare().is_err());
        let mut c = base.clone();
        c.overtrain_factor = 0.5;
        assert!(c.prepare().is_err());
        let mut c = base.clone();
        c.class = 7;
        assert!(c.prepare().is_err());
        let mut c = base.clone();
        c.generator = GeneratorConfig::Direct {
            init: DirectInit::Point(vec![0.0; 3]),
            image: None,
        };
        assert!(c.prepare().is_err());
        let mut c = base;
        c.schedule.t_min = Some(990);
        assert!(c.prepare().is_err());
        assert!(RunConfig::from_toml_str("steps = 1\nbogus = 2\n").is_err());
    }
}
