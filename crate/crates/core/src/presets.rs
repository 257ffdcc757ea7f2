//! Named oracles shipped with the crate.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::oracle::{ClassSpec, Component, OracleSpec};

/// Names accepted by [`preset`].
pub const PRESET_NAMES: &[&str] = &[
    "two-class-2d",
    "single-gaussian",
    "grid-9",
    "two-moons-gmm",
    "image-8x8",
];

fn comp(weight: f64, mean: Vec<f64>, scale: f64) -> Component {
    Component { weight, mean, scale }
}

fn class(name: &str, components: Vec<Component>) -> ClassSpec {
    ClassSpec {
        name: Some(name.to_string()),
        components,
    }
}

/// Looks up a shipped oracle by name.
pub fn preset(name: &str) -> Result<OracleSpec> {
    match name {
        "two-class-2d" => Ok(two_class_2d()),
        "single-gaussian" => Ok(OracleSpec {
            prior: vec![1.0],
            classes: vec![class("only", vec![comp(1.0, vec![0.0, 0.0], 1.0)])],
        }),
        "grid-9" => Ok(grid_9()),
        "two-moons-gmm" => Ok(two_moons()),
        "image-8x8" => Ok(image_8x8()),
        other => Err(Error::Config(format!(
            "unknown oracle preset '{other}' (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Target class 0 sits between two lobes of class 1, one of them far out
/// along the same axis. Pushing `log p(y=0|x)` up drives samples past the
/// class-0 mode toward the gap before the outer lobe.
pub fn two_class_2d() -> OracleSpec {
    OracleSpec {
        prior: vec![0.5, 0.5],
        classes: vec![
            class("target", vec![comp(1.0, vec![1.0, 0.0], 0.8)]),
            class(
                "other",
                vec![comp(0.5, vec![-1.0, 0.0], 1.0), comp(0.5, vec![4.5, 0.0], 1.0)],
            ),
        ],
    }
}

fn grid_9() -> OracleSpec {
    let mut classes = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            let mean = vec![2.0 * i as f64 - 2.0, 2.0 * j as f64 - 2.0];
            classes.push(class(&format!("cell-{i}{j}"), vec![comp(1.0, mean, 0.3)]));
        }
    }
    OracleSpec {
        prior: vec![1.0 / 9.0; 9],
        classes,
    }
}

fn two_moons() -> OracleSpec {
    let n = 6;
    let arc = |upper: bool| -> Vec<Component> {
        (0..n)
            .map(|k| {
                let th = PI * k as f64 / (n - 1) as f64;
                let mean = if upper {
                    vec![th.cos(), th.sin()]
                } else {
                    vec![1.0 - th.cos(), 0.5 - th.sin()]
                };
                comp(1.0 / n as f64, mean, 0.15)
            })
            .collect()
    };
    OracleSpec {
        prior: vec![0.5, 0.5],
        classes: vec![class("upper", arc(true)), class("lower", arc(false))],
    }
}

/// Two 8x8 RGB image classes (dim 192): a warm vertical gradient and a cool
/// flat field with a bright centre.
fn image_8x8() -> OracleSpec {
    let (w, h) = (8usize, 8usize);
    let mut warm = Vec::with_capacity(w * h * 3);
    let mut cool = Vec::with_capacity(w * h * 3);
    for j in 0..h {
        for i in 0..w {
            let v = (j as f64 + 0.5) / h as f64;
            warm.extend([0.85, 0.25 + 0.45 * v, 0.15]);
            let dx = (i as f64 + 0.5) / w as f64 - 0.5;
            let dy = v - 0.5;
            let glow = (-(dx * dx + dy * dy) / 0.05).exp();
            cool.extend([0.15 + 0.5 * glow, 0.35 + 0.4 * glow, 0.75]);
        }
    }
    OracleSpec {
        prior: vec![0.5, 0.5],
        classes: vec![
            class("warm", vec![comp(1.0, warm, 0.1)]),
            class("cool", vec![comp(1.0, cool, 0.2)]),
        ],
    }
}
