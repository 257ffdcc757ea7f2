#![allow(dead_code)]

use balanced_distill::generator::{Splat, SplatParams};
use balanced_distill::oracle::{ClassSpec, Component, GmmOracle, OracleSpec};
use balanced_distill::schedule::{NoiseSchedule, ScheduleFamily};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn default_schedule() -> NoiseSchedule {
    NoiseSchedule::new(1000, ScheduleFamily::default()).unwrap()
}

/// Random mixture with `classes` classes in `dim` dimensions.
pub fn random_spec(rng: &mut ChaCha8Rng, dim: usize, classes: usize) -> OracleSpec {
    let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut prior: Vec<f64> = raw.iter().map(|p| p / total).collect();
    // exact unit sum
    let head: f64 = prior[..classes - 1].iter().sum();
    prior[classes - 1] = 1.0 - head;
    let classes = (0..classes)
        .map(|_| {
            let k = rng.random_range(1..=3usize);
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
            let ws: f64 = w.iter().sum();
            ClassSpec {
                name: None,
                components: w
                    .iter()
                    .map(|wi| Component {
                        weight: wi / ws,
                        mean: (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect(),
                        scale: rng.random_range(0.3..2.0),
                    })
                    .collect(),
            }
        })
        .collect();
    OracleSpec { prior, classes }
}

pub fn random_oracle(seed: u64, dim: usize, classes: usize) -> GmmOracle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GmmOracle::new(&random_spec(&mut rng, dim, classes)).unwrap()
}

/// Proptest strategy: (oracle seed, dim, classes).
pub fn oracle_params() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..5, 1usize..4)
}

pub fn vec_in(dim: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(lo..hi, dim)
}

/// `|a - b| / max(1, |b|)` per coordinate, maximised.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn two_class_1d() -> GmmOracle {
    GmmOracle::new(&OracleSpec {
        prior: vec![0.3, 0.7],
        classes: vec![
            ClassSpec {
                name: None,
                components: vec![
                    Component { weight: 0.4, mean: vec![-2.0], scale: 0.5 },
                    Component { weight: 0.6, mean: vec![1.0], scale: 0.8 },
                ],
            },
            ClassSpec {
                name: None,
                components: vec![Component { weight: 1.0, mean: vec![2.5], scale: 1.2 }],
            },
        ],
    })
    .unwrap()
}

/// Random canvas of 2 to 7 pixels a side with 1 to 4 splats.
pub fn random_splats(rng: &mut ChaCha8Rng) -> SplatParams {
    let w = rng.random_range(2..=7usize);
    let h = rng.random_range(2..=7usize);
    let n = rng.random_range(1..=4usize);
    let splats: Vec<Splat> = (0..n)
        .map(|_| Splat {
            center: [rng.random_range(-0.1..1.1), rng.random_range(-0.1..1.1)],
            log_scale: rng.random_range(0.08f64..0.6).ln(),
            color: [rng.random(), rng.random(), rng.random()],
            opacity_logit: rng.random_range(-2.0..2.0),
        })
        .collect();
    SplatParams::new(w, h, &splats).unwrap()
}
