mod common;

use balanced_distill::guidance::{combine, decompose, Combiner, CombinerKind, GuidancePair};
use balanced_distill::mgda::solve_mgda_pair;
use balanced_distill::oracle::Label;
use balanced_distill::vecops::{dot, norm, norm_sq};
use common::*;
use proptest::prelude::*;

fn pair_from(
    (seed, dim, k): (u64, usize, usize),
    t: usize,
    x: &[f64],
    e: &[f64],
) -> (balanced_distill::oracle::GmmOracle, GuidancePair) {
    let o = random_oracle(seed, dim, k);
    let s = default_schedule();
    let p = decompose(&o, &s, &x[..dim], t, 0, &e[..dim]).unwrap();
    (o, p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// `delta_cg + delta_sg = -grad log p_t(x_t | y)`.
    #[test]
    fn decomposition_reproduces_conditional_score(
        params in oracle_params(),
        t in 1usize..=1000,
        x in vec_in(4, -4.0, 4.0),
        e in vec_in(4, -3.0, 3.0),
    ) {
        let (o, p) = pair_from(params, t, &x, &e);
        let s = default_schedule();
        let dim = params.1;
        let x_t = s.add_noise(&x[..dim], t, &e[..dim]).unwrap();
        let score = o.score_t(&s, &x_t, t, Label::Class(0)).unwrap();
        for i in 0..dim {
            let lhs = p.delta_cg[i] + p.delta_sg[i];
            prop_assert!((lhs + score[i]).abs() <= 1e-10 * (1.0 + score[i].abs()));
            prop_assert!((p.delta_sg_residual[i] - (p.delta_sg[i] - e[i] / s.sigma(t))).abs() < 1e-9);
        }
    }

    /// The balanced direction is non-negative against both objectives.
    #[test]
    fn bsd_direction_is_min_norm_projection(
        params in oracle_params(),
        t in 1usize..=1000,
        x in vec_in(4, -4.0, 4.0),
        e in vec_in(4, -3.0, 3.0),
        lambda in 0.1..100.0f64,
        residual in any::<bool>(),
    ) {
        let (_, p) = pair_from(params, t, &x, &e);
        let c = Combiner::bsd(lambda).with_subtract_eps(residual);
        let d = combine(&p, &c).unwrap().direction;
        let dd = norm_sq(&d);
        let cg: Vec<f64> = p.delta_cg.iter().map(|v| lambda * v).collect();
        let sg = p.smoothing(residual);
        prop_assert!(dot(&d, &cg) >= dd - 1e-9);
        prop_assert!(dot(&d, sg) >= dd - 1e-9);
        prop_assert!(norm(&d) <= norm(sg) + 1e-9);
    }

    /// Fixed-ratio endpoints reproduce classifier-only and smoothing-only.
    #[test]
    fn fixed_ratio_endpoints(
        params in oracle_params(),
        t in 1usize..=1000,
        x in vec_in(4, -4.0, 4.0),
        e in vec_in(4, -3.0, 3.0),
    ) {
        let (_, p) = pair_from(params, t, &x, &e);
        let cg_only = combine(&p, &Combiner::fixed_ratio(1.0, 0.0)).unwrap().direction;
        prop_assert_eq!(&cg_only, &combine(&p, &Combiner::csd()).unwrap().direction);
        let sg_only = combine(&p, &Combiner::fixed_ratio(0.0, 1.0)).unwrap().direction;
        prop_assert_eq!(sg_only, p.delta_sg.clone());
        let sds = combine(&p, &Combiner::sds(7.0)).unwrap().direction;
        for i in 0..sds.len() {
            let want = 7.0 * p.delta_cg[i] + p.delta_sg_residual[i];
            prop_assert!((sds[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}

/// With an acute pair, large lambda leaves the smoothing term alone and
/// small lambda collapses onto the scaled classifier term.
#[test]
fn lambda_limits() {
    let pair = GuidancePair {
        delta_cg: vec![1.0, 0.2],
        delta_sg: vec![0.5, 1.0],
        delta_sg_residual: vec![0.5, 1.0],
        t: 10,
        eps: vec![0.0, 0.0],
    };
    let big = combine(&pair, &Combiner::bsd(1e6)).unwrap();
    assert_eq!(big.direction, pair.delta_sg);
    assert_eq!(big.alpha_mgda, Some(0.0));

    let lam = 1e-6;
    let small = combine(&pair, &Combiner::bsd(lam)).unwrap();
    assert_eq!(small.alpha_mgda, Some(1.0));
    for (d, c) in small.direction.iter().zip(&pair.delta_cg) {
        assert!((d - lam * c).abs() < 1e-18);
    }
}

/// Scaling the classifier term by `c` is the same as multiplying lambda by `c`.
#[test]
fn lambda_scale_equivariance() {
    let o = random_oracle(9, 3, 2);
    let s = default_schedule();
    let p = decompose(&o, &s, &[0.5, -0.2, 1.0], 300, 0, &[0.3, -1.1, 0.4]).unwrap();
    let mut scaled = p.clone();
    for v in &mut scaled.delta_cg {
        *v *= 2.0;
    }
    let a = combine(&p, &Combiner::bsd(20.0)).unwrap();
    let b = combine(&scaled, &Combiner::bsd(10.0)).unwrap();
    for (x, y) in a.direction.iter().zip(&b.direction) {
        assert!((x - y).abs() < 1e-12);
    }
    let m = solve_mgda_pair(
        &p.delta_cg.iter().map(|v| 20.0 * v).collect::<Vec<_>>(),
        &p.delta_sg,
    )
    .unwrap();
    assert_eq!(m.direction, a.direction);
}

/// A single-class oracle has no classifier signal.
#[test]
fn single_class_has_zero_classifier_term() {
    let o = random_oracle(4, 2, 1);
    let s = default_schedule();
    let p = decompose(&o, &s, &[0.1, 0.2], 500, 0, &[1.0, -1.0]).unwrap();
    assert!(p.delta_cg.iter().all(|v| *v == 0.0));
    let d = combine(&p, &Combiner::bsd(25.0)).unwrap();
    assert!(d.direction.iter().all(|v| *v == 0.0));
    assert!(Combiner::new(CombinerKind::Bsd { lambda: -1.0 }).is_err());
}
