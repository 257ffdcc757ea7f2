//! Angle census: the geometry of `(delta_cg, delta_sg)` on a fixed bank of
//! `(t, eps)` draws, at the initial sample and along a reference trajectory.
//!
//! Files written to `output_dir`:
//!
//! - `census_frozen.csv`: obtuse fractions per timestep decile at the initial
//!   sample ([`DecileRow`])
//! - `census_histogram.csv`: cosine histogram at the initial sample
//!   ([`HistogramRow`])
//! - `census_trajectory.csv`: per checkpoint and timestep decile, mean
//!   smoothing norms and obtuse fractions on the same draws ([`TrajectoryRow`])
//! - `census_summary.csv`: one [`CensusSummaryRow`] line

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::config::RunConfig;
use super::{write_csv, BINS};
use crate::error::Result;
use crate::generator::{DistillContext, DistillRun, Parameterization};
use crate::guidance::{cosine, decompose, Combiner, CombinerKind};
use crate::oracle::GmmOracle;
use crate::schedule::{timestep_decile, NoiseSchedule, TimestepSampler};
use crate::vecops::norm;

/// Stream separation for the census draw bank relative to the run seed.
const CENSUS_STREAM: u64 = 0x2545_F491_4F6C_DD1D;

/// Obtuse counts for one group of draws. Draws where a cosine is undefined
/// (a zero vector) are excluded from that fraction's denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AngleCounts {
    pub draws: usize,
    pub excluded: usize,
    pub obtuse: usize,
    pub excluded_residual: usize,
    pub obtuse_residual: usize,
}

impl AngleCounts {
    fn add(&mut self, cos: Option<f64>, cos_residual: Option<f64>) {
        self.draws += 1;
        match cos {
            None => self.excluded += 1,
            Some(c) => self.obtuse += (c < 0.0) as usize,
        }
        match cos_residual {
            None => self.excluded_residual += 1,
            Some(c) => self.obtuse_residual += (c < 0.0) as usize,
        }
    }

    /// Zero when every draw was excluded.
    pub fn obtuse_fraction(&self) -> f64 {
        ratio(self.obtuse, self.draws - self.excluded)
    }

    pub fn obtuse_fraction_residual(&self) -> f64 {
        ratio(self.obtuse_residual, self.draws - self.excluded_residual)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One evaluation point along the reference trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Optimizer steps taken before this evaluation.
    pub step: usize,
    pub angles: [AngleCounts; BINS],
    /// Mean `|delta_sg|` and `|delta_sg_residual|` per timestep decile.
    pub mean_norm_sg: [Option<f64>; BINS],
    pub mean_norm_sg_residual: [Option<f64>; BINS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CensusReport {
    /// Per timestep decile, at the initial sample.
    pub frozen: [AngleCounts; BINS],
    pub frozen_total: AngleCounts,
    /// `(lo, hi, count, count_residual)` over cosine bins.
    pub histogram: Vec<(f64, f64, usize, usize)>,
    pub trajectory: Vec<Checkpoint>,
    /// Coefficient of variation across timestep deciles of the mean norm,
    /// pooled over checkpoints.
    pub cv_norm_sg: f64,
    pub cv_norm_sg_residual: f64,
    pub reference: String,
}

struct Draw {
    t: usize,
    eps: Vec<f64>,
}

struct Evaluation {
    angles: [AngleCounts; BINS],
    sum_sg: [f64; BINS],
    sum_sg_residual: [f64; BINS],
    cosines: Vec<(Option<f64>, Option<f64>)>,
}

fn evaluate(
    oracle: &GmmOracle,
    schedule: &NoiseSchedule,
    x: &[f64],
    class: usize,
    bank: &[Draw],
    window: (usize, usize),
) -> Result<Evaluation> {
    let mut ev = Evaluation {
        angles: [AngleCounts::default(); BINS],
        sum_sg: [0.0; BINS],
        sum_sg_residual: [0.0; BINS],
        cosines: Vec::with_capacity(bank.len()),
    };
    for d in bank {
        let pair = decompose(oracle, schedule, x, d.t, class, &d.eps)?;
        let c = cosine(&pair.delta_cg, &pair.delta_sg);
        let cr = cosine(&pair.delta_cg, &pair.delta_sg_residual);
        let b = timestep_decile(d.t, window.0, window.1);
        ev.angles[b].add(c, cr);
        ev.sum_sg[b] += norm(&pair.delta_sg);
        ev.sum_sg_residual[b] += norm(&pair.delta_sg_residual);
        ev.cosines.push((c, cr));
    }
    Ok(ev)
}

/// Population coefficient of variation of the defined entries.
fn coefficient_of_variation(values: &[Option<f64>]) -> f64 {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if mean == 0.0 {
        0.0
    } else {
        var.sqrt() / mean.abs()
    }
}

#[derive(Serialize)]
pub struct DecileRow {
    pub t_decile: usize,
    pub draws: usize,
    pub excluded: usize,
    pub obtuse_fraction: f64,
    pub excluded_residual: usize,
    pub obtuse_fraction_residual: f64,
}

#[derive(Serialize)]
pub struct HistogramRow {
    pub cos_lo: f64,
    pub cos_hi: f64,
    pub count: usize,
    pub count_residual: usize,
}

#[derive(Serialize)]
pub struct TrajectoryRow {
    pub checkpoint: usize,
    pub step: usize,
    pub t_decile: usize,
    pub draws: usize,
    pub mean_norm_sg: Option<f64>,
    pub mean_norm_sg_residual: Option<f64>,
    pub obtuse_fraction: f64,
    pub obtuse_fraction_residual: f64,
}

#[derive(Serialize)]
pub struct CensusSummaryRow {
    pub reference: String,
    pub draws: usize,
    pub excluded: usize,
    pub obtuse_fraction: f64,
    pub obtuse_fraction_residual: f64,
    pub cv_norm_sg: f64,
    pub cv_norm_sg_residual: f64,
}

/// Runs the census for the first configured seed. The reference trajectory
/// uses the configured combiner when it is the balanced one, otherwise the
/// balanced combiner at `census.reference_lambda`.
pub fn angle_census(config: &RunConfig) -> Result<CensusReport> {
    let prepared = config.prepare()?;
    let (oracle, schedule, window) = (&prepared.oracle, &prepared.schedule, prepared.window);
    let seed = config.seeds[0];
    let cc = &config.census;

    let mut sampler = TimestepSampler::new(schedule, window.0, window.1, seed ^ CENSUS_STREAM)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ CENSUS_STREAM.rotate_left(17));
    let dim = oracle.dim();
    let bank: Vec<Draw> = (0..cc.draws)
        .map(|_| Draw {
            t: sampler.sample(),
            eps: (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
        })
        .collect();

    let reference = match config.combiner.kind {
        CombinerKind::Bsd { .. } => config.combiner,
        _ => Combiner::bsd(cc.reference_lambda),
    };
    let generator = config.generator.build(oracle, seed)?;
    let mut run = DistillRun::new(generator, config.optimizer(), schedule, window, seed)?;
    let ctx = DistillContext {
        oracle,
        schedule,
        combiner: reference,
        weight: config.schedule.weight,
        class: config.class,
    };

    let x0 = run.generator.render().image;
    let frozen = evaluate(oracle, schedule, &x0, config.class, &bank, window)?;

    let mut histogram: Vec<(f64, f64, usize, usize)> = (0..cc.bins)
        .map(|i| {
            let w = 2.0 / cc.bins as f64;
            (-1.0 + i as f64 * w, -1.0 + (i + 1) as f64 * w, 0, 0)
        })
        .collect();
    let bin_of = |c: f64| (((c + 1.0) / 2.0 * cc.bins as f64) as usize).min(cc.bins - 1);
    for (c, cr) in &frozen.cosines {
        if let Some(c) = c {
            histogram[bin_of(*c)].2 += 1;
        }
        if let Some(c) = cr {
            histogram[bin_of(*c)].3 += 1;
        }
    }

    let total = prepared.total_steps;
    let n_cp = cc.checkpoints;
    let targets: Vec<usize> = (0..n_cp)
        .map(|c| if n_cp == 1 { 0 } else { c * total / (n_cp - 1) })
        .collect();
    let mut trajectory = Vec::with_capacity(n_cp);
    let mut pooled_sg = [(0.0, 0usize); BINS];
    let mut pooled_res = [0.0; BINS];
    for &target in &targets {
        while run.steps_done() < target {
            run.step(&ctx)?;
        }
        let x = run.generator.render().image;
        let ev = evaluate(oracle, schedule, &x, config.class, &bank, window)?;
        let mut mean_sg = [None; BINS];
        let mut mean_res = [None; BINS];
        for b in 0..BINS {
            let n = ev.angles[b].draws;
            if n > 0 {
                mean_sg[b] = Some(ev.sum_sg[b] / n as f64);
                mean_res[b] = Some(ev.sum_sg_residual[b] / n as f64);
                pooled_sg[b].0 += ev.sum_sg[b];
                pooled_sg[b].1 += n;
                pooled_res[b] += ev.sum_sg_residual[b];
            }
        }
        trajectory.push(Checkpoint {
            step: target,
            angles: ev.angles,
            mean_norm_sg: mean_sg,
            mean_norm_sg_residual: mean_res,
        });
    }
    let pooled = |sums: [f64; BINS]| -> Vec<Option<f64>> {
        (0..BINS)
            .map(|b| (pooled_sg[b].1 > 0).then(|| sums[b] / pooled_sg[b].1 as f64))
            .collect()
    };
    let cv_norm_sg = coefficient_of_variation(&pooled(pooled_sg.map(|p| p.0)));
    let cv_norm_sg_residual = coefficient_of_variation(&pooled(pooled_res));

    let mut frozen_total = AngleCounts::default();
    for a in &frozen.angles {
        frozen_total.draws += a.draws;
        frozen_total.excluded += a.excluded;
        frozen_total.obtuse += a.obtuse;
        frozen_total.excluded_residual += a.excluded_residual;
        frozen_total.obtuse_residual += a.obtuse_residual;
    }

    let report = CensusReport {
        frozen: frozen.angles,
        frozen_total,
        histogram,
        trajectory,
        cv_norm_sg,
        cv_norm_sg_residual,
        reference: reference.label(),
    };
    write_report(config, &report)?;
    Ok(report)
}

fn write_report(config: &RunConfig, r: &CensusReport) -> Result<()> {
    let dir = &config.output_dir;
    write_csv(
        &dir.join("census_frozen.csv"),
        r.frozen.iter().enumerate().map(|(b, a)| DecileRow {
            t_decile: b,
            draws: a.draws,
            excluded: a.excluded,
            obtuse_fraction: a.obtuse_fraction(),
            excluded_residual: a.excluded_residual,
            obtuse_fraction_residual: a.obtuse_fraction_residual(),
        }),
    )?;
    write_csv(
        &dir.join("census_histogram.csv"),
        r.histogram.iter().map(|&(cos_lo, cos_hi, count, count_residual)| HistogramRow {
            cos_lo,
            cos_hi,
            count,
            count_residual,
        }),
    )?;
    write_csv(
        &dir.join("census_trajectory.csv"),
        r.trajectory.iter().enumerate().flat_map(|(i, cp)| {
            (0..BINS).map(move |b| TrajectoryRow {
                checkpoint: i,
                step: cp.step,
                t_decile: b,
                draws: cp.angles[b].draws,
                mean_norm_sg: cp.mean_norm_sg[b],
                mean_norm_sg_residual: cp.mean_norm_sg_residual[b],
                obtuse_fraction: cp.angles[b].obtuse_fraction(),
                obtuse_fraction_residual: cp.angles[b].obtuse_fraction_residual(),
            })
        }),
    )?;
    write_csv(
        &dir.join("census_summary.csv"),
        [CensusSummaryRow {
            reference: r.reference.clone(),
            draws: r.frozen_total.draws,
            excluded: r.frozen_total.excluded,
            obtuse_fraction: r.frozen_total.obtuse_fraction(),
            obtuse_fraction_residual: r.frozen_total.obtuse_fraction_residual(),
            cv_norm_sg: r.cv_norm_sg,
            cv_norm_sg_residual: r.cv_norm_sg_residual,
        }],
    )
}
