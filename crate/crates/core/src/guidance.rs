//! Splitting a distillation step into classifier and smoothing guidance, and
//! the rules that turn the two into one update direction.
//!
//! All guidance vectors are loss gradients with respect to the noised sample:
//! `delta_cg = -grad log p_t(y | x_t)` and `delta_sg = -grad log p_t(x_t)`.
//! Descending along them raises the class posterior and the unconditional
//! density respectively.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mgda::{pareto_stationarity_gap, solve_mgda_pair};
use crate::oracle::GmmOracle;
use crate::schedule::NoiseSchedule;
use crate::vecops::{dot, lin_comb, norm};

pub const DEFAULT_LAMBDA: f64 = 25.0;
pub const DEFAULT_CFG_SCALE: f64 = 100.0;

/// One step's classifier and smoothing guidance.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidancePair {
    /// `(eps(x_t, t, y) - eps(x_t, t, null)) / sigma_t`
    pub delta_cg: Vec<f64>,
    /// `eps(x_t, t, null) / sigma_t`
    pub delta_sg: Vec<f64>,
    /// `(eps(x_t, t, null) - eps) / sigma_t`
    pub delta_sg_residual: Vec<f64>,
    pub t: usize,
    pub eps: Vec<f64>,
}

impl GuidancePair {
    pub fn dot(&self) -> f64 {
        dot(&self.delta_cg, &self.delta_sg)
    }

    pub fn dot_residual(&self) -> f64 {
        dot(&self.delta_cg, &self.delta_sg_residual)
    }

    /// Smoothing term in plain or `-eps` residual form.
    pub fn smoothing(&self, residual: bool) -> &[f64] {
        if residual {
            &self.delta_sg_residual
        } else {
            &self.delta_sg
        }
    }
}

/// Noises `x0` to level `t` and splits the conditional score.
pub fn decompose(
    oracle: &GmmOracle,
    schedule: &NoiseSchedule,
    x0: &[f64],
    t: usize,
    class: usize,
    eps: &[f64],
) -> Result<GuidancePair> {
    schedule.check_t(t, 1)?;
    let x_t = schedule.add_noise(x0, t, eps)?;
    let (eps_cond, eps_null) = oracle.predict_eps_pair(schedule, &x_t, t, class)?;
    let inv_sigma = 1.0 / schedule.sigma(t);
    let delta_cg = eps_cond
        .iter()
        .zip(&eps_null)
        .map(|(c, n)| (c - n) * inv_sigma)
        .collect();
    let delta_sg: Vec<f64> = eps_null.iter().map(|n| n * inv_sigma).collect();
    let delta_sg_residual = eps_null
        .iter()
        .zip(eps)
        .map(|(n, e)| (n - e) * inv_sigma)
        .collect();
    Ok(GuidancePair {
        delta_cg,
        delta_sg,
        delta_sg_residual,
        t,
        eps: eps.to_vec(),
    })
}

/// Combination rule, as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CombinerKind {
    /// `cfg_scale * delta_cg + smoothing`
    Sds {
        #[serde(default = "default_cfg")]
        cfg_scale: f64,
    },
    /// classifier guidance alone
    Csd,
    /// `u * delta_cg + v * smoothing`
    FixedRatio { u: f64, v: f64 },
    /// min-norm blend of `lambda * delta_cg` and smoothing
    Bsd {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
}

fn default_cfg() -> f64 {
    DEFAULT_CFG_SCALE
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Combiner {
    #[serde(flatten)]
    pub kind: CombinerKind,
    /// Use `delta_sg_residual` in place of `delta_sg`. Defaults to true for
    /// SDS and false otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subtract_eps: Option<bool>,
}

impl Combiner {
    pub fn new(kind: CombinerKind) -> Result<Self> {
        let c = Self {
            kind,
            subtract_eps: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn sds(cfg_scale: f64) -> Self {
        Self::new(CombinerKind::Sds { cfg_scale }).expect("invalid cfg scale")
    }

    pub fn csd() -> Self {
        Self::new(CombinerKind::Csd).expect("csd is always valid")
    }

    pub fn fixed_ratio(u: f64, v: f64) -> Self {
        Self::new(CombinerKind::FixedRatio { u, v }).expect("invalid ratio")
    }

    pub fn bsd(lambda: f64) -> Self {
        Self::new(CombinerKind::Bsd { lambda }).expect("invalid lambda")
    }

    pub fn with_subtract_eps(mut self, subtract: bool) -> Self {
        self.subtract_eps = Some(subtract);
        self
    }

    /// Same `subtract_eps` choice, different rule.
    pub fn with_kind(mut self, kind: CombinerKind) -> Result<Self> {
        self.kind = kind;
        self.validate()?;
        Ok(self)
    }

    pub fn subtract_eps(&self) -> bool {
        self.subtract_eps
            .unwrap_or(matches!(self.kind, CombinerKind::Sds { .. }))
    }

    /// `lambda` for BSD, `None` otherwise.
    pub fn lambda(&self) -> Option<f64> {
        match self.kind {
            CombinerKind::Bsd { lambda } => Some(lambda),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            CombinerKind::Sds { cfg_scale } => cfg_scale > 0.0 && cfg_scale.is_finite(),
            CombinerKind::Csd => true,
            CombinerKind::FixedRatio { u, v } => {
                u >= 0.0 && v >= 0.0 && u + v > 0.0 && u.is_finite() && v.is_finite()
            }
            CombinerKind::Bsd { lambda } => lambda > 0.0 && lambda.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Combiner(format!("invalid parameters: {:?}", self.kind)))
        }
    }

    /// Short label used in file names and CSV columns.
    pub fn label(&self) -> String {
        let base = match self.kind {
            CombinerKind::Sds { cfg_scale } => format!("sds-cfg{cfg_scale}"),
            CombinerKind::Csd => "csd".to_string(),
            CombinerKind::FixedRatio { u, v } => format!("ratio-u{u}-v{v}"),
            CombinerKind::Bsd { lambda } => format!("bsd-lambda{lambda}"),
        };
        let default_residual = matches!(self.kind, CombinerKind::Sds { .. });
        match self.subtract_eps {
            Some(s) if s != default_residual && !matches!(self.kind, CombinerKind::Csd) => {
                format!("{base}-{}", if s { "residual" } else { "plain" })
            }
            _ => base,
        }
    }
}

/// Combined per-step direction (before the `omega(t)` weight).
#[derive(Debug, Clone, PartialEq)]
pub struct StepDirection {
    pub direction: Vec<f64>,
    /// BSD weight on `lambda * delta_cg`.
    pub alpha_mgda: Option<f64>,
    pub dot_cg_sg: f64,
    pub norm_cg: f64,
    pub norm_sg: f64,
}

pub fn combine(pair: &GuidancePair, combiner: &Combiner) -> Result<StepDirection> {
    combiner.validate()?;
    let smooth = pair.smoothing(combiner.subtract_eps());
    let cg = &pair.delta_cg;
    let (direction, alpha_mgda) = match combiner.kind {
        CombinerKind::Sds { cfg_scale } => (lin_comb(cfg_scale, cg, 1.0, smooth), None),
        CombinerKind::Csd => (cg.clone(), None),
        CombinerKind::FixedRatio { u, v } => (lin_comb(u, cg, v, smooth), None),
        CombinerKind::Bsd { lambda } => {
            let g1: Vec<f64> = cg.iter().map(|v| lambda * v).collect();
            let sol = solve_mgda_pair(&g1, smooth)?;
            (sol.direction, Some(sol.weights[0]))
        }
    };
    Ok(StepDirection {
        direction,
        alpha_mgda,
        dot_cg_sg: pair.dot(),
        norm_cg: norm(cg),
        norm_sg: norm(&pair.delta_sg),
    })
}

/// Geometry of one step, as streamed to step records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStatistics {
    /// `delta_cg . delta_sg < 0`
    pub angle_obtuse: bool,
    pub angle_obtuse_residual: bool,
    pub dot_cg_sg: f64,
    pub proj_cg: f64,
    pub proj_sg: f64,
    pub norm_cg: f64,
    pub norm_sg: f64,
    pub norm_sg_residual: f64,
    pub norm_direction: f64,
    pub t: usize,
}

pub fn step_statistics(pair: &GuidancePair, dir: &StepDirection) -> StepStatistics {
    let dot_cg_sg = pair.dot();
    StepStatistics {
        angle_obtuse: dot_cg_sg < 0.0,
        angle_obtuse_residual: pair.dot_residual() < 0.0,
        dot_cg_sg,
        proj_cg: dot(&dir.direction, &pair.delta_cg),
        proj_sg: dot(&dir.direction, &pair.delta_sg),
        norm_cg: norm(&pair.delta_cg),
        norm_sg: norm(&pair.delta_sg),
        norm_sg_residual: norm(&pair.delta_sg_residual),
        norm_direction: norm(&dir.direction),
        t: pair.t,
    }
}

/// Min-norm gap of the pair `(lambda * delta_cg, smoothing)`.
pub fn pair_pareto_gap(pair: &GuidancePair, lambda: f64, residual: bool) -> Result<f64> {
    let g1: Vec<f64> = pair.delta_cg.iter().map(|v| lambda * v).collect();
    let g2 = pair.smoothing(residual);
    let sol = solve_mgda_pair(&g1, g2)?;
    Ok(pareto_stationarity_gap(&[&g1, g2], &sol.weights))
}

/// Cosine of the angle between two vectors, `None` if either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    (na > 0.0 && nb > 0.0).then(|| (dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
