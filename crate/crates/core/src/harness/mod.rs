//! Seeded experiment runner and its CSV/PPM artifacts.
//!
//! Output layout for one combiner in `dir`:
//!
//! - `steps_seed{S}.csv`: one row per recorded step, columns as in [`StepRow`]
//! - `norms_seed{S}.csv`: mean smoothing norms per run-progress decile and
//!   timestep decile, columns as in [`NormRow`]
//! - `snapshot_seed{S}_converged.{csv,ppm}` and `snapshot_seed{S}_final.{csv,ppm}`
//! - `metrics.csv`: one [`MetricsRow`] per seed, in seed order
//!
//! `compare` writes one such directory per combiner plus `compare.csv`;
//! `sweep-lambda` writes one per balance weight plus `sweep.csv`.

pub mod census;
pub mod config;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

pub use census::{angle_census, CensusReport};
pub use config::{CensusConfig, GeneratorConfig, OracleSource, Prepared, RunConfig, ScheduleConfig};

use crate::error::{Error, Result};
use crate::generator::{write_ppm, DistillContext, DistillRun, Parameterization, StepRecord};
use crate::guidance::{Combiner, CombinerKind};
use crate::schedule::timestep_decile;

/// Timestep deciles and run-progress deciles of the norm table.
pub const BINS: usize = 10;

/// Column order of `steps_seed{S}.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct StepRow {
    pub step: usize,
    pub t: usize,
    pub weight: f64,
    pub alpha_mgda: Option<f64>,
    pub dot_cg_sg: f64,
    pub norm_cg: f64,
    pub norm_sg: f64,
    pub norm_sg_residual: f64,
    pub proj_cg: f64,
    pub proj_sg: f64,
    pub norm_direction: f64,
    pub pareto_gap: f64,
    pub obtuse: u8,
    pub obtuse_residual: u8,
    pub log_p_x_given_y: f64,
    pub log_p_x: f64,
    pub log_p_y_given_x: f64,
}

impl From<&StepRecord> for StepRow {
    fn from(r: &StepRecord) -> Self {
        Self {
            step: r.step,
            t: r.t,
            weight: r.weight,
            alpha_mgda: r.alpha_mgda,
            dot_cg_sg: r.dot_cg_sg,
            norm_cg: r.norm_cg,
            norm_sg: r.norm_sg,
            norm_sg_residual: r.norm_sg_residual,
            proj_cg: r.proj_cg,
            proj_sg: r.proj_sg,
            norm_direction: r.norm_direction,
            pareto_gap: r.pareto_gap,
            obtuse: r.obtuse as u8,
            obtuse_residual: r.obtuse_residual as u8,
            log_p_x_given_y: r.log_p_x_given_y,
            log_p_x: r.log_p_x,
            log_p_y_given_x: r.log_p_y_given_x,
        }
    }
}

/// Sums of smoothing norms, indexed `[progress_decile][t_decile]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormTable {
    pub count: [[u64; BINS]; BINS],
    pub sum_sg: [[f64; BINS]; BINS],
    pub sum_sg_residual: [[f64; BINS]; BINS],
}

impl NormTable {
    pub fn add(&mut self, progress: usize, t_decile: usize, sg: f64, sg_residual: f64) {
        self.count[progress][t_decile] += 1;
        self.sum_sg[progress][t_decile] += sg;
        self.sum_sg_residual[progress][t_decile] += sg_residual;
    }

    /// `(mean |delta_sg|, mean |delta_sg_residual|)` of one cell.
    pub fn mean(&self, progress: usize, t_decile: usize) -> Option<(f64, f64)> {
        let n = self.count[progress][t_decile];
        (n > 0).then(|| {
            (
                self.sum_sg[progress][t_decile] / n as f64,
                self.sum_sg_residual[progress][t_decile] / n as f64,
            )
        })
    }

    pub fn rows(&self) -> Vec<NormRow> {
        let mut out = Vec::with_capacity(BINS * BINS);
        for p in 0..BINS {
            for t in 0..BINS {
                let m = self.mean(p, t);
                out.push(NormRow {
                    progress_decile: p,
                    t_decile: t,
                    count: self.count[p][t],
                    mean_norm_sg: m.map(|m| m.0),
                    mean_norm_sg_residual: m.map(|m| m.1),
                });
            }
        }
        out
    }
}

/// Column order of `norms_seed{S}.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct NormRow {
    pub progress_decile: usize,
    pub t_decile: usize,
    pub count: u64,
    pub mean_norm_sg: Option<f64>,
    pub mean_norm_sg_residual: Option<f64>,
}

/// Per-seed summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub combiner: String,
    pub steps: usize,
    /// Step whose trailing-window mean of `log p(x|y)` is largest.
    pub convergence_step: usize,
    pub obtuse_fraction: f64,
    pub obtuse_fraction_residual: f64,
    pub final_log_p_x_given_y: f64,
    pub final_log_p_x: f64,
    pub final_log_p_y_given_x: f64,
    /// Largest trailing-window mean of `log p(x|y)`.
    pub best_log_p_x_given_y: f64,
    pub converged_log_p_x: f64,
    pub converged_log_p_y_given_x: f64,
    pub mean_pareto_gap: f64,
    pub final_pareto_gap: f64,
    /// `best_log_p_x_given_y - final_log_p_x_given_y`
    pub overtrain_drop: f64,
    pub overtrain_stable: bool,
    /// Pareto gap at every step.
    pub pareto_gaps: Vec<f64>,
    pub norm_table: NormTable,
    pub final_sample: Vec<f64>,
}

/// Column order of `metrics.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub combiner: String,
    pub steps: usize,
    pub convergence_step: usize,
    pub obtuse_fraction: f64,
    pub obtuse_fraction_residual: f64,
    pub final_log_p_x_given_y: f64,
    pub final_log_p_x: f64,
    pub final_log_p_y_given_x: f64,
    pub best_log_p_x_given_y: f64,
    pub converged_log_p_x: f64,
    pub converged_log_p_y_given_x: f64,
    pub mean_pareto_gap: f64,
    pub final_pareto_gap: f64,
    pub overtrain_drop: f64,
    pub overtrain_stable: u8,
}

impl From<&RunMetrics> for MetricsRow {
    fn from(m: &RunMetrics) -> Self {
        Self {
            seed: m.seed,
            combiner: m.combiner.clone(),
            steps: m.steps,
            convergence_step: m.convergence_step,
            obtuse_fraction: m.obtuse_fraction,
            obtuse_fraction_residual: m.obtuse_fraction_residual,
            final_log_p_x_given_y: m.final_log_p_x_given_y,
            final_log_p_x: m.final_log_p_x,
            final_log_p_y_given_x: m.final_log_p_y_given_x,
            best_log_p_x_given_y: m.best_log_p_x_given_y,
            converged_log_p_x: m.converged_log_p_x,
            converged_log_p_y_given_x: m.converged_log_p_y_given_x,
            mean_pareto_gap: m.mean_pareto_gap,
            final_pareto_gap: m.final_pareto_gap,
            overtrain_drop: m.overtrain_drop,
            overtrain_stable: m.overtrain_stable as u8,
        }
    }
}

/// Medians over seeds for one combiner; a row of `compare.csv` / `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub combiner: String,
    pub lambda: Option<f64>,
    pub seeds: usize,
    pub median_log_p_x_given_y: f64,
    pub median_log_p_x: f64,
    pub median_log_p_y_given_x: f64,
    pub median_obtuse_fraction: f64,
    pub median_overtrain_drop: f64,
    pub median_mean_pareto_gap: f64,
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl SummaryRow {
    pub fn from_metrics(combiner: &Combiner, metrics: &[RunMetrics]) -> Self {
        let col = |f: fn(&RunMetrics) -> f64| median(&metrics.iter().map(f).collect::<Vec<_>>());
        Self {
            combiner: combiner.label(),
            lambda: combiner.lambda(),
            seeds: metrics.len(),
            median_log_p_x_given_y: col(|m| m.final_log_p_x_given_y),
            median_log_p_x: col(|m| m.final_log_p_x),
            median_log_p_y_given_x: col(|m| m.final_log_p_y_given_x),
            median_obtuse_fraction: col(|m| m.obtuse_fraction),
            median_overtrain_drop: col(|m| m.overtrain_drop),
            median_mean_pareto_gap: col(|m| m.mean_pareto_gap),
        }
    }
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_snapshot(dir: &Path, stem: &str, shape: Option<(usize, usize)>, image: &[f64]) -> Result<()> {
    match shape {
        Some((w, h)) => write_ppm(&dir.join(format!("{stem}.ppm")), w, h, image),
        None => {
            #[derive(Serialize)]
            struct Entry {
                index: usize,
                value: f64,
            }
            write_csv(
                &dir.join(format!("{stem}.csv")),
                image.iter().enumerate().map(|(index, &value)| Entry { index, value }),
            )
        }
    }
}

/// Runs one seed with one combiner, writing its per-seed files into `dir`.
pub fn run_seed(
    config: &RunConfig,
    prepared: &Prepared,
    combiner: Combiner,
    seed: u64,
    dir: &Path,
) -> Result<RunMetrics> {
    let generator = config.generator.build(&prepared.oracle, seed)?;
    let shape = generator.image_shape();
    let mut run = DistillRun::new(
        generator,
        config.optimizer(),
        &prepared.schedule,
        prepared.window,
        seed,
    )?;
    let ctx = DistillContext {
        oracle: &prepared.oracle,
        schedule: &prepared.schedule,
        combiner,
        weight: config.schedule.weight,
        class: config.class,
    };
    let total = prepared.total_steps;
    let (t_lo, t_hi) = prepared.window;
    let win = config.convergence_window;

    let steps_path = dir.join(format!("steps_seed{seed}.csv"));
    let mut steps_csv = csv::Writer::from_path(&steps_path)?;
    let mut table = NormTable::default();
    let mut history: Vec<f64> = Vec::with_capacity(total);
    let mut gaps: Vec<f64> = Vec::with_capacity(total);
    let mut obtuse = 0usize;
    let mut obtuse_residual = 0usize;
    let mut window_sum = 0.0;
    let mut best: Option<(f64, usize, f64, f64, Vec<f64>)> = None;
    let mut last: Option<StepRecord> = None;

    for k in 0..total {
        let rec = run.step(&ctx)?;
        if k % config.record_every == 0 || k + 1 == total {
            steps_csv.serialize(StepRow::from(&rec))?;
        }
        obtuse += rec.obtuse as usize;
        obtuse_residual += rec.obtuse_residual as usize;
        gaps.push(rec.pareto_gap);
        table.add(
            k * BINS / total,
            timestep_decile(rec.t, t_lo, t_hi),
            rec.norm_sg,
            rec.norm_sg_residual,
        );

        history.push(rec.log_p_x_given_y);
        window_sum += rec.log_p_x_given_y;
        if k >= win {
            window_sum -= history[k - win];
        }
        let trailing = window_sum / (k + 1).min(win) as f64;
        if best.as_ref().is_none_or(|b| trailing > b.0) {
            best = Some((
                trailing,
                k,
                rec.log_p_x,
                rec.log_p_y_given_x,
                run.generator.render().image,
            ));
        }
        last = Some(rec);
    }
    steps_csv.flush().map_err(|e| Error::io(&steps_path, e))?;

    let last = last.expect("total_steps >= 1");
    let (best_val, conv_step, conv_px, conv_pyx, conv_img) = best.expect("total_steps >= 1");
    let final_img = run.generator.render().image;
    write_snapshot(dir, &format!("snapshot_seed{seed}_converged"), shape, &conv_img)?;
    write_snapshot(dir, &format!("snapshot_seed{seed}_final"), shape, &final_img)?;
    write_csv(&dir.join(format!("norms_seed{seed}.csv")), table.rows())?;

    let tail = &gaps[gaps.len().saturating_sub(win)..];
    let drop = best_val - last.log_p_x_given_y;
    Ok(RunMetrics {
        seed,
        combiner: combiner.label(),
        steps: total,
        convergence_step: conv_step,
        obtuse_fraction: obtuse as f64 / total as f64,
        obtuse_fraction_residual: obtuse_residual as f64 / total as f64,
        final_log_p_x_given_y: last.log_p_x_given_y,
        final_log_p_x: last.log_p_x,
        final_log_p_y_given_x: last.log_p_y_given_x,
        best_log_p_x_given_y: best_val,
        converged_log_p_x: conv_px,
        converged_log_p_y_given_x: conv_pyx,
        mean_pareto_gap: gaps.iter().sum::<f64>() / total as f64,
        final_pareto_gap: tail.iter().sum::<f64>() / tail.len() as f64,
        overtrain_drop: drop,
        overtrain_stable: drop <= config.overtrain_slack,
        pareto_gaps: gaps,
        norm_table: table,
        final_sample: final_img,
    })
}

/// Runs every seed (in parallel) with `combiner` and writes `dir/metrics.csv`.
pub fn run_combiner(
    config: &RunConfig,
    prepared: &Prepared,
    combiner: Combiner,
    dir: &Path,
) -> Result<Vec<RunMetrics>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics: Vec<RunMetrics> = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, prepared, combiner, seed, dir))
        .collect::<Result<_>>()?;
    write_csv(&dir.join("metrics.csv"), metrics.iter().map(MetricsRow::from))?;
    Ok(metrics)
}

/// `run`: the configured combiner over all seeds, artifacts in `output_dir`.
pub fn run_experiment(config: &RunConfig) -> Result<Vec<RunMetrics>> {
    let prepared = config.prepare()?;
    run_combiner(config, &prepared, config.combiner, &config.output_dir)
}

fn check_unique_labels(combiners: &[Combiner]) -> Result<()> {
    for (i, a) in combiners.iter().enumerate() {
        if combiners[..i].iter().any(|b| b.label() == a.label()) {
            return Err(Error::Config(format!("duplicate combiner '{}'", a.label())));
        }
    }
    Ok(())
}

/// Runs each combiner into `output_dir/<label>` and writes `file` with one
/// median row per combiner.
fn run_many(config: &RunConfig, combiners: &[Combiner], file: &str) -> Result<Vec<SummaryRow>> {
    check_unique_labels(combiners)?;
    let prepared = config.prepare()?;
    let mut rows = Vec::with_capacity(combiners.len());
    for c in combiners {
        let dir: PathBuf = config.output_dir.join(c.label());
        let metrics = run_combiner(config, &prepared, *c, &dir)?;
        rows.push(SummaryRow::from_metrics(c, &metrics));
    }
    write_csv(&config.output_dir.join(file), rows.iter())?;
    Ok(rows)
}

/// `compare`: every combiner of [`RunConfig::compare_combiners`].
pub fn compare(config: &RunConfig) -> Result<Vec<SummaryRow>> {
    run_many(config, &config.compare_combiners(), "compare.csv")
}

/// `sweep-lambda`: the balanced combiner at each of `config.lambdas`.
/// Keeps the configured `subtract_eps` choice when the configured combiner
/// is itself balanced.
pub fn sweep_lambda(config: &RunConfig) -> Result<Vec<SummaryRow>> {
    let base = match config.combiner.kind {
        CombinerKind::Bsd { .. } => config.combiner,
        _ => Combiner::bsd(crate::guidance::DEFAULT_LAMBDA),
    };
    let combiners = config
        .lambdas
        .iter()
        .map(|&lambda| base.with_kind(CombinerKind::Bsd { lambda }))
        .collect::<Result<Vec<_>>>()?;
    run_many(config, &combiners, "sweep.csv")
}
