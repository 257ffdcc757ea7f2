//! Differentiable parameterizations `theta -> x` and the distillation step
//! that pushes combined guidance back through them.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{combine, decompose, pair_pareto_gap, step_statistics, Combiner};
use crate::oracle::GmmOracle;
use crate::schedule::{NoiseSchedule, TimestepSampler, WeightRule};
use crate::vecops::all_finite;

/// Rendered sample plus whatever the VJP needs from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: Vec<f64>,
    cache: RenderCache,
}

#[derive(Debug, Clone, PartialEq)]
enum RenderCache {
    None,
    /// Unweighted Gaussian kernel of every splat at every pixel, `[k][p]`.
    Kernels(Vec<Vec<f64>>),
}

/// A differentiable map from a flat parameter vector to a sample.
pub trait Parameterization {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn output_dim(&self) -> usize;
    fn render(&self) -> RenderOutput;
    /// Gradient of `<render(params), cotangent>` w.r.t. the parameters,
    /// reusing the forward pass in `out`.
    fn vjp_with(&self, out: &RenderOutput, cotangent: &[f64]) -> Vec<f64>;
    /// `(width, height)` when the output is an RGB image.
    fn image_shape(&self) -> Option<(usize, usize)> {
        None
    }

    fn vjp(&self, cotangent: &[f64]) -> Result<Vec<f64>> {
        if cotangent.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: cotangent.len(),
            });
        }
        Ok(self.vjp_with(&self.render(), cotangent))
    }
}

/// The sample itself is the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectParams {
    pub x: Vec<f64>,
    shape: Option<(usize, usize)>,
}

impl DirectParams {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() || !all_finite(&x) {
            return Err(Error::Generator("direct params must be non-empty and finite".into()));
        }
        Ok(Self { x, shape: None })
    }

    /// Treat the vector as a `width x height` RGB image (for snapshots).
    pub fn with_image_shape(mut self, width: usize, height: usize) -> Result<Self> {
        if width * height * 3 != self.x.len() {
            return Err(Error::Generator(format!(
                "{} values cannot form a {width}x{height} RGB image",
                self.x.len()
            )));
        }
        self.shape = Some((width, height));
        Ok(self)
    }
}

impl Parameterization for DirectParams {
    fn params(&self) -> &[f64] {
        &self.x
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.x
    }

    fn output_dim(&self) -> usize {
        self.x.len()
    }

    fn render(&self) -> RenderOutput {
        RenderOutput {
            image: self.x.clone(),
            cache: RenderCache::None,
        }
    }

    fn vjp_with(&self, _out: &RenderOutput, cotangent: &[f64]) -> Vec<f64> {
        cotangent.to_vec()
    }

    fn image_shape(&self) -> Option<(usize, usize)> {
        self.shape
    }
}

/// One isotropic 2D Gaussian splat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    /// Position in `[0, 1]^2` image coordinates.
    pub center: [f64; 2],
    /// `ln s`, with `s` in image-width units.
    pub log_scale: f64,
    pub color: [f64; 3],
    pub opacity_logit: f64,
}

const SPLAT_STRIDE: usize = 7;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Additively composited isotropic Gaussian splats on a `W x H` RGB canvas.
///
/// Parameters are stored flat, seven per splat:
/// `[cx, cy, log_scale, r, g, b, opacity_logit]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatParams {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl SplatParams {
    pub fn new(width: usize, height: usize, splats: &[Splat]) -> Result<Self> {
        if splats.is_empty() {
            return Err(Error::Generator("at least one splat is required".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::Generator("canvas must be non-empty".into()));
        }
        let mut data = Vec::with_capacity(splats.len() * SPLAT_STRIDE);
        for s in splats {
            data.extend_from_slice(&[
                s.center[0],
                s.center[1],
                s.log_scale,
                s.color[0],
                s.color[1],
                s.color[2],
                s.opacity_logit,
            ]);
        }
        if !all_finite(&data) {
            return Err(Error::Generator("splat parameters must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Uniform-random centers, the given scale, mid-gray colors and
    /// `sigmoid(opacity) = 0.5`.
    pub fn random_init(width: usize, height: usize, count: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let splats: Vec<Splat> = (0..count)
            .map(|_| Splat {
                center: [rng.random::<f64>(), rng.random::<f64>()],
                log_scale: scale.ln(),
                color: [0.5; 3],
                opacity_logit: 0.0,
            })
            .collect();
        Self::new(width, height, &splats)
    }

    pub fn len(&self) -> usize {
        self.data.len() / SPLAT_STRIDE
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn splat(&self, k: usize) -> Splat {
        let p = &self.data[k * SPLAT_STRIDE..(k + 1) * SPLAT_STRIDE];
        Splat {
            center: [p[0], p[1]],
            log_scale: p[2],
            color: [p[3], p[4], p[5]],
            opacity_logit: p[6],
        }
    }

    /// Pixel center in image coordinates, and the y-axis factor that keeps
    /// distances in width units.
    fn pixel(&self, p: usize) -> (f64, f64) {
        let (i, j) = (p % self.width, p / self.width);
        (
            (i as f64 + 0.5) / self.width as f64,
            (j as f64 + 0.5) / self.height as f64,
        )
    }

    fn aspect(&self) -> f64 {
        self.height as f64 / self.width as f64
    }

    fn kernels(&self) -> Vec<Vec<f64>> {
        let npix = self.width * self.height;
        let aspect = self.aspect();
        (0..self.len())
            .map(|k| {
                let s = self.splat(k);
                let inv_two_s2 = 0.5 * (-2.0 * s.log_scale).exp();
                (0..npix)
                    .map(|p| {
                        let (px, py) = self.pixel(p);
                        let dx = px - s.center[0];
                        let dy = (py - s.center[1]) * aspect;
                        (-(dx * dx + dy * dy) * inv_two_s2).exp()
                    })
                    .collect()
            })
            .collect()
    }
}

impl Parameterization for SplatParams {
    fn params(&self) -> &[f64] {
        &self.data
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn output_dim(&self) -> usize {
        self.width * self.height * 3
    }

    fn render(&self) -> RenderOutput {
        let kernels = self.kernels();
        let mut image = vec![0.0; self.output_dim()];
        for (k, kern) in kernels.iter().enumerate() {
            let s = self.splat(k);
            let op = sigmoid(s.opacity_logit);
            for (p, &kv) in kern.iter().enumerate() {
                let w = op * kv;
                for c in 0..3 {
                    image[3 * p + c] += w * s.color[c];
                }
            }
        }
        RenderOutput {
            image,
            cache: RenderCache::Kernels(kernels),
        }
    }

    fn vjp_with(&self, out: &RenderOutput, cotangent: &[f64]) -> Vec<f64> {
        let owned;
        let kernels = match &out.cache {
            RenderCache::Kernels(k) => k,
            RenderCache::None => {
                owned = self.kernels();
                &owned
            }
        };
        let aspect = self.aspect();
        let mut grad = vec![0.0; self.data.len()];
        for (k, kern) in kernels.iter().enumerate() {
            let s = self.splat(k);
            let op = sigmoid(s.opacity_logit);
            let inv_s2 = (-2.0 * s.log_scale).exp();
            let g = &mut grad[k * SPLAT_STRIDE..(k + 1) * SPLAT_STRIDE];
            // d/d(kernel) of <image, c>, without the opacity factor
            let mut d_center = [0.0; 2];
            let mut d_log_scale = 0.0;
            let mut d_color = [0.0; 3];
            let mut d_opacity = 0.0;
            for (p, &kv) in kern.iter().enumerate() {
                let c = &cotangent[3 * p..3 * p + 3];
                let a = c[0] * s.color[0] + c[1] * s.color[1] + c[2] * s.color[2];
                for ch in 0..3 {
                    d_color[ch] += c[ch] * kv;
                }
                d_opacity += a * kv;
                let (px, py) = self.pixel(p);
                let dx = px - s.center[0];
                let dy = (py - s.center[1]) * aspect;
                let ak = a * kv * inv_s2;
                d_center[0] += ak * dx;
                d_center[1] += ak * dy * aspect;
                d_log_scale += ak * (dx * dx + dy * dy);
            }
            g[0] = op * d_center[0];
            g[1] = op * d_center[1];
            g[2] = op * d_log_scale;
            for ch in 0..3 {
                g[3 + ch] = op * d_color[ch];
            }
            g[6] = op * (1.0 - op) * d_opacity;
        }
        grad
    }

    fn image_shape(&self) -> Option<(usize, usize)> {
        Some((self.width, self.height))
    }
}

/// Either generator, chosen at run time from a config.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Direct(DirectParams),
    Splat(SplatParams),
}

impl Parameterization for Generator {
    fn params(&self) -> &[f64] {
        match self {
            Generator::Direct(g) => g.params(),
            Generator::Splat(g) => g.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Generator::Direct(g) => g.params_mut(),
            Generator::Splat(g) => g.params_mut(),
        }
    }

    fn output_dim(&self) -> usize {
        match self {
            Generator::Direct(g) => g.output_dim(),
            Generator::Splat(g) => g.output_dim(),
        }
    }

    fn render(&self) -> RenderOutput {
        match self {
            Generator::Direct(g) => g.render(),
            Generator::Splat(g) => g.render(),
        }
    }

    fn vjp_with(&self, out: &RenderOutput, cotangent: &[f64]) -> Vec<f64> {
        match self {
            Generator::Direct(g) => g.vjp_with(out, cotangent),
            Generator::Splat(g) => g.vjp_with(out, cotangent),
        }
    }

    fn image_shape(&self) -> Option<(usize, usize)> {
        match self {
            Generator::Direct(g) => g.image_shape(),
            Generator::Splat(g) => g.image_shape(),
        }
    }
}

/// Writes an RGB image as binary PPM (P6), clamping to `[0, 255]`.
pub fn write_ppm(path: &Path, width: usize, height: usize, image: &[f64]) -> Result<()> {
    let bytes = encode_ppm(width, height, image)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_ppm(width: usize, height: usize, image: &[f64]) -> Result<Vec<u8>> {
    if image.len() != width * height * 3 {
        return Err(Error::DimensionMismatch {
            expected: width * height * 3,
            got: image.len(),
        });
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(image.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

/// First-order optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
    Sgd {
        lr: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
            OptimizerConfig::Sgd { lr } => lr > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer {self:?}")))
        }
    }
}

/// Optimizer state for one run.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            steps: 0,
        }
    }

    /// Descends one step along `grad`.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.steps);
                let bc2 = 1.0 - beta2.powi(self.steps);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// Everything a distillation step reads but never mutates.
#[derive(Debug, Clone, Copy)]
pub struct DistillContext<'a> {
    pub oracle: &'a GmmOracle,
    pub schedule: &'a NoiseSchedule,
    pub combiner: Combiner,
    pub weight: WeightRule,
    /// Target class `y`.
    pub class: usize,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: usize,
    pub weight: f64,
    pub alpha_mgda: Option<f64>,
    pub dot_cg_sg: f64,
    pub norm_cg: f64,
    pub norm_sg: f64,
    pub norm_sg_residual: f64,
    /// `d . delta_cg`
    pub proj_cg: f64,
    /// `d .` the smoothing term the combiner used
    pub proj_sg: f64,
    pub norm_direction: f64,
    pub pareto_gap: f64,
    pub obtuse: bool,
    pub obtuse_residual: bool,
    /// `log p_0(x | y)` of the sample after this step's update
    pub log_p_x_given_y: f64,
    pub log_p_x: f64,
    pub log_p_y_given_x: f64,
}

/// Samples `t` and `eps`, renders, decomposes, combines and applies one
/// optimizer update of `omega(t) * vjp(d)`. Densities in the record are
/// those of the updated sample.
pub fn distill_step<G: Parameterization>(
    generator: &mut G,
    optimizer: &mut Optimizer,
    ctx: &DistillContext<'_>,
    sampler: &mut TimestepSampler,
    rng: &mut ChaCha8Rng,
    step: usize,
) -> Result<StepRecord> {
    let out = generator.render();
    let dim = out.image.len();
    if dim != ctx.oracle.dim() {
        return Err(Error::DimensionMismatch {
            expected: ctx.oracle.dim(),
            got: dim,
        });
    }
    let t = sampler.sample();
    let eps: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let pair = decompose(ctx.oracle, ctx.schedule, &out.image, t, ctx.class, &eps)?;
    let dir = combine(&pair, &ctx.combiner)?;
    let stats = step_statistics(&pair, &dir);
    let residual = ctx.combiner.subtract_eps();
    let proj_sg = if residual {
        crate::vecops::dot(&dir.direction, &pair.delta_sg_residual)
    } else {
        stats.proj_sg
    };
    let gap = pair_pareto_gap(&pair, ctx.combiner.lambda().unwrap_or(1.0), residual)?;

    let w = ctx.weight.weight(ctx.schedule, t);
    let cot: Vec<f64> = dir.direction.iter().map(|d| w * d).collect();
    let grad = generator.vjp_with(&out, &cot);
    if !all_finite(&grad) {
        return Err(Error::NonFiniteGradient { step, t });
    }
    optimizer.apply(generator.params_mut(), &grad);
    let dens = ctx
        .oracle
        .data_log_densities(ctx.schedule, &generator.render().image, ctx.class)?;

    Ok(StepRecord {
        step,
        t,
        weight: w,
        alpha_mgda: dir.alpha_mgda,
        dot_cg_sg: stats.dot_cg_sg,
        norm_cg: stats.norm_cg,
        norm_sg: stats.norm_sg,
        norm_sg_residual: stats.norm_sg_residual,
        proj_cg: stats.proj_cg,
        proj_sg,
        norm_direction: stats.norm_direction,
        pareto_gap: gap,
        obtuse: stats.angle_obtuse,
        obtuse_residual: stats.angle_obtuse_residual,
        log_p_x_given_y: dens.conditional,
        log_p_x: dens.marginal,
        log_p_y_given_x: dens.posterior,
    })
}

/// A seeded distillation run: generator, optimizer and both random streams.
#[derive(Debug, Clone)]
pub struct DistillRun<G> {
    pub generator: G,
    optimizer: Optimizer,
    sampler: TimestepSampler,
    rng: ChaCha8Rng,
    steps_done: usize,
}

/// Stream separation for the noise RNG relative to the timestep RNG.
const EPS_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

impl<G: Parameterization> DistillRun<G> {
    pub fn new(
        generator: G,
        optimizer: OptimizerConfig,
        schedule: &NoiseSchedule,
        window: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        optimizer.validate()?;
        let n = generator.params().len();
        Ok(Self {
            generator,
            optimizer: Optimizer::new(optimizer, n),
            sampler: TimestepSampler::new(schedule, window.0, window.1, seed)?,
            rng: ChaCha8Rng::seed_from_u64(seed ^ EPS_STREAM),
            steps_done: 0,
        })
    }

    pub fn step(&mut self, ctx: &DistillContext<'_>) -> Result<StepRecord> {
        let rec = distill_step(
            &mut self.generator,
            &mut self.optimizer,
            ctx,
            &mut self.sampler,
            &mut self.rng,
            self.steps_done,
        )?;
        self.steps_done += 1;
        Ok(rec)
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn sampler(&self) -> &TimestepSampler {
        &self.sampler
    }
}
