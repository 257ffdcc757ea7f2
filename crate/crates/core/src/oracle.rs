//! Analytic stand-in for a pretrained conditional diffusion model.
//!
//! The data distribution is a labeled mixture of isotropic Gaussians. Under
//! the forward process a component `N(mu, tau^2 I)` becomes
//! `N(alpha_t mu, (alpha_t^2 tau^2 + sigma_t^2) I)`, so every noised density,
//! score and noise prediction is available in closed form. The null label is
//! the prior-weighted mixture over all classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::vecops::{all_finite, dist_sq, log_sum_exp};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Conditioning signal: a class index or the null condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Class(usize),
    Null,
}

/// One isotropic Gaussian component `N(mean, scale^2 I)` with its in-class weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub components: Vec<Component>,
}

/// Serializable description of an oracle, as found in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub prior: Vec<f64>,
    pub classes: Vec<ClassSpec>,
}

#[derive(Debug, Clone)]
struct FlatComponent {
    class: usize,
    /// log of the in-class weight
    log_weight: f64,
    mean: Vec<f64>,
    var: f64,
}

/// Labeled Gaussian-mixture data distribution with exact noised scores.
#[derive(Debug, Clone)]
pub struct GmmOracle {
    dim: usize,
    log_prior: Vec<f64>,
    prior: Vec<f64>,
    components: Vec<FlatComponent>,
}

/// Noise prediction for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsPrediction {
    pub eps_hat: Vec<f64>,
    pub t: usize,
    pub label: Label,
}

/// Per-component log terms and Gaussian scores at one noised point.
struct Evaluated {
    log_norm: Vec<f64>,
    scores: Vec<Vec<f64>>,
}

impl GmmOracle {
    pub fn new(spec: &OracleSpec) -> Result<Self> {
        let k = spec.classes.len();
        if k == 0 {
            return Err(Error::Oracle("at least one class is required".into()));
        }
        if spec.prior.len() != k {
            return Err(Error::Oracle(format!(
                "{} prior entries for {k} classes",
                spec.prior.len()
            )));
        }
        if spec.prior.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Oracle("class prior entries must be positive".into()));
        }
        let prior_sum: f64 = spec.prior.iter().sum();
        if (prior_sum - 1.0).abs() > 1e-12 {
            return Err(Error::Oracle(format!("class prior sums to {prior_sum}, not 1")));
        }
        let dim = spec.classes[0]
            .components
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| Error::Oracle("class 0 has no components".into()))?;
        if dim == 0 {
            return Err(Error::Oracle("dimension must be positive".into()));
        }
        let mut components = Vec::new();
        for (class, cs) in spec.classes.iter().enumerate() {
            if cs.components.is_empty() {
                return Err(Error::Oracle(format!("class {class} has no components")));
            }
            let wsum: f64 = cs.components.iter().map(|c| c.weight).sum();
            if (wsum - 1.0).abs() > 1e-12 {
                return Err(Error::Oracle(format!(
                    "class {class} component weights sum to {wsum}, not 1"
                )));
            }
            for c in &cs.components {
                if c.mean.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: c.mean.len(),
                    });
                }
                if !(c.weight > 0.0) || !(c.scale > 0.0 && c.scale.is_finite()) {
                    return Err(Error::Oracle(format!(
                        "class {class}: weights and scales must be positive"
                    )));
                }
                if !all_finite(&c.mean) {
                    return Err(Error::Oracle(format!("class {class}: non-finite mean")));
                }
                components.push(FlatComponent {
                    class,
                    log_weight: c.weight.ln(),
                    mean: c.mean.clone(),
                    var: c.scale * c.scale,
                });
            }
        }
        Ok(Self {
            dim,
            log_prior: spec.prior.iter().map(|p| p.ln()).collect(),
            prior: spec.prior.clone(),
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.prior.len()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn log_prior(&self, class: usize) -> f64 {
        self.log_prior[class]
    }

    /// Mean of the unconditional data distribution.
    pub fn global_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            let w = self.prior[c.class] * c.log_weight.exp();
            for (mi, ci) in m.iter_mut().zip(&c.mean) {
                *mi += w * ci;
            }
        }
        m
    }

    pub fn check_label(&self, label: Label) -> Result<()> {
        match label {
            Label::Class(class) if class >= self.num_classes() => Err(Error::Label {
                class,
                classes: self.num_classes(),
            }),
            _ => Ok(()),
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if !all_finite(x) {
            return Err(Error::NonFinite("oracle query point".into()));
        }
        Ok(())
    }

    /// Mixture weight (in log space) of component `c` under `label`.
    fn log_mix_weight(&self, c: &FlatComponent, label: Label) -> Option<f64> {
        match label {
            Label::Class(y) if c.class == y => Some(c.log_weight),
            Label::Class(_) => None,
            Label::Null => Some(self.log_prior[c.class] + c.log_weight),
        }
    }

    fn evaluate(&self, schedule: &NoiseSchedule, x_t: &[f64], t: usize, with_scores: bool) -> Evaluated {
        let a = schedule.alpha(t);
        let s2 = schedule.sigma(t).powi(2);
        let d = self.dim as f64;
        let mut log_norm = Vec::with_capacity(self.components.len());
        let mut scores = Vec::new();
        for c in &self.components {
            let v = a * a * c.var + s2;
            let r2: f64 = x_t
                .iter()
                .zip(&c.mean)
                .map(|(x, m)| (x - a * m).powi(2))
                .sum();
            log_norm.push(-0.5 * d * (LN_2PI + v.ln()) - 0.5 * r2 / v);
            if with_scores {
                scores.push(
                    x_t.iter()
                        .zip(&c.mean)
                        .map(|(x, m)| -(x - a * m) / v)
                        .collect(),
                );
            }
        }
        Evaluated { log_norm, scores }
    }

    fn log_density_from(&self, ev: &Evaluated, label: Label) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&ev.log_norm)
            .filter_map(|(c, ln)| self.log_mix_weight(c, label).map(|lw| lw + ln))
            .collect();
        log_sum_exp(&terms)
    }

    fn score_from(&self, ev: &Evaluated, label: Label) -> Vec<f64> {
        let mut idx = Vec::new();
        let mut terms = Vec::new();
        for (i, (c, ln)) in self.components.iter().zip(&ev.log_norm).enumerate() {
            if let Some(lw) = self.log_mix_weight(c, label) {
                idx.push(i);
                terms.push(lw + ln);
            }
        }
        let lse = log_sum_exp(&terms);
        let mut out = vec![0.0; self.dim];
        for (i, term) in idx.into_iter().zip(terms) {
            let r = (term - lse).exp();
            for (o, s) in out.iter_mut().zip(&ev.scores[i]) {
                *o += r * s;
            }
        }
        out
    }

    /// `log p_t(x_t | label)`; `t = 0` gives the data density.
    pub fn log_density_t(
        &self,
        schedule: &NoiseSchedule,
        x_t: &[f64],
        t: usize,
        label: Label,
    ) -> Result<f64> {
        schedule.check_t(t, 0)?;
        self.check_label(label)?;
        self.check_point(x_t)?;
        let ev = self.evaluate(schedule, x_t, t, false);
        Ok(self.log_density_from(&ev, label))
    }

    /// `grad_{x_t} log p_t(x_t | label)` via responsibility-weighted Gaussian scores.
    pub fn score_t(
        &self,
        schedule: &NoiseSchedule,
        x_t: &[f64],
        t: usize,
        label: Label,
    ) -> Result<Vec<f64>> {
        schedule.check_t(t, 0)?;
        self.check_label(label)?;
        self.check_point(x_t)?;
        let ev = self.evaluate(schedule, x_t, t, true);
        Ok(self.score_from(&ev, label))
    }

    /// Bayes-optimal noise prediction `-sigma_t * score_t`.
    pub fn predict_eps(
        &self,
        schedule: &NoiseSchedule,
        x_t: &[f64],
        t: usize,
        label: Label,
    ) -> Result<EpsPrediction> {
        schedule.check_t(t, 1)?;
        let sigma = schedule.sigma(t);
        let score = self.score_t(schedule, x_t, t, label)?;
        Ok(EpsPrediction {
            eps_hat: score.into_iter().map(|s| -sigma * s).collect(),
            t,
            label,
        })
    }

    /// Conditional and null noise predictions from a single pass over the components.
    pub fn predict_eps_pair(
        &self,
        schedule: &NoiseSchedule,
        x_t: &[f64],
        t: usize,
        class: usize,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        schedule.check_t(t, 1)?;
        self.check_label(Label::Class(class))?;
        self.check_point(x_t)?;
        let sigma = schedule.sigma(t);
        let ev = self.evaluate(schedule, x_t, t, true);
        let cond = self.score_from(&ev, Label::Class(class));
        let null = self.score_from(&ev, Label::Null);
        Ok((
            cond.into_iter().map(|s| -sigma * s).collect(),
            null.into_iter().map(|s| -sigma * s).collect(),
        ))
    }

    /// Time-zero log densities of a clean sample under a target class.
    pub fn data_log_densities(&self, schedule: &NoiseSchedule, x: &[f64], class: usize) -> Result<DataLogDensities> {
        self.check_label(Label::Class(class))?;
        self.check_point(x)?;
        let ev = self.evaluate(schedule, x, 0, false);
        let conditional = self.log_density_from(&ev, Label::Class(class));
        let marginal = self.log_density_from(&ev, Label::Null);
        Ok(DataLogDensities {
            conditional,
            marginal,
            posterior: conditional + self.log_prior[class] - marginal,
        })
    }

    /// Squared distance from `x` to the nearest component mean of `class`.
    pub fn nearest_mean_dist_sq(&self, x: &[f64], class: usize) -> f64 {
        self.components
            .iter()
            .filter(|c| c.class == class)
            .map(|c| dist_sq(x, &c.mean))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `log p_0(x|y)`, `log p_0(x)` and `log p_0(y|x)` for one clean sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataLogDensities {
    pub conditional: f64,
    pub marginal: f64,
    pub posterior: f64,
}
