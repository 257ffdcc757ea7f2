mod common;

use balanced_distill::oracle::Label;
use balanced_distill::vecops::log_sum_exp;
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;

fn fd_score(
    o: &balanced_distill::oracle::GmmOracle,
    s: &balanced_distill::schedule::NoiseSchedule,
    x: &[f64],
    t: usize,
    l: Label,
) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += H;
            xm[i] -= H;
            (o.log_density_t(s, &xp, t, l).unwrap() - o.log_density_t(s, &xm, t, l).unwrap()) / (2.0 * H)
        })
        .collect()
}

fn label_for(o: &balanced_distill::oracle::GmmOracle, pick: usize) -> Label {
    if pick % (o.num_classes() + 1) == o.num_classes() {
        Label::Null
    } else {
        Label::Class(pick % (o.num_classes() + 1))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn score_matches_finite_differences(
        (seed, dim, k) in oracle_params(),
        t in 0usize..=1000,
        pick in 0usize..8,
        x in vec_in(4, -5.0, 5.0),
    ) {
        let o = random_oracle(seed, dim, k);
        let s = default_schedule();
        let x = &x[..dim];
        let l = label_for(&o, pick);
        let a = o.score_t(&s, x, t, l).unwrap();
        let n = fd_score(&o, &s, x, t, l);
        prop_assert!(max_rel_err(&a, &n) < 1e-5, "{a:?} vs {n:?}");
    }

    #[test]
    fn eps_prediction_is_scaled_score(
        (seed, dim, k) in oracle_params(),
        t in 1usize..=1000,
        pick in 0usize..8,
        x in vec_in(4, -5.0, 5.0),
    ) {
        let o = random_oracle(seed, dim, k);
        let s = default_schedule();
        let x = &x[..dim];
        let l = label_for(&o, pick);
        let sigma = s.sigma(t);
        let score = o.score_t(&s, x, t, l).unwrap();
        let eps = o.predict_eps(&s, x, t, l).unwrap().eps_hat;
        for (e, sc) in eps.iter().zip(&score) {
            prop_assert_eq!(*e, -sigma * sc);
        }
        let (c, n) = o.predict_eps_pair(&s, x, t, 0).unwrap();
        prop_assert_eq!(c, o.predict_eps(&s, x, t, Label::Class(0)).unwrap().eps_hat);
        prop_assert_eq!(n, o.predict_eps(&s, x, t, Label::Null).unwrap().eps_hat);
    }

    #[test]
    fn null_density_is_prior_mixture(
        (seed, dim, k) in oracle_params(),
        t in 0usize..=1000,
        x in vec_in(4, -6.0, 6.0),
    ) {
        let o = random_oracle(seed, dim, k);
        let s = default_schedule();
        let x = &x[..dim];
        let terms: Vec<f64> = (0..k)
            .map(|c| o.log_prior(c) + o.log_density_t(&s, x, t, Label::Class(c)).unwrap())
            .collect();
        let null = o.log_density_t(&s, x, t, Label::Null).unwrap();
        prop_assert!((log_sum_exp(&terms) - null).abs() < 1e-10);

        // null score is the class-posterior-weighted class score
        let mut mix = vec![0.0; dim];
        for c in 0..k {
            let post = (terms[c] - null).exp();
            let sc = o.score_t(&s, x, t, Label::Class(c)).unwrap();
            for (m, v) in mix.iter_mut().zip(sc) {
                *m += post * v;
            }
        }
        let sn = o.score_t(&s, x, t, Label::Null).unwrap();
        prop_assert!(max_rel_err(&mix, &sn) < 1e-10);

        // posterior identity at t = 0
        let d = o.data_log_densities(&s, x, 0).unwrap();
        prop_assert!((d.posterior - (d.conditional + o.log_prior(0) - d.marginal)).abs() < 1e-10);
        prop_assert!(d.posterior <= 1e-12);
    }
}

#[test]
fn finite_difference_census_thousand_triples() {
    let s = default_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for i in 0..1000u64 {
        let dim = rng.random_range(1..=4usize);
        let k = rng.random_range(1..=3usize);
        let o = random_oracle(i, dim, k);
        let t = rng.random_range(0..=1000usize);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let l = label_for(&o, rng.random_range(0..8));
        let a = o.score_t(&s, &x, t, l).unwrap();
        let n = fd_score(&o, &s, &x, t, l);
        worst = worst.max(max_rel_err(&a, &n));
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

/// `log p_t(x_t | c)` against trapezoid quadrature of
/// `int N(x_t; alpha x0, sigma^2) p_0(x0 | c) dx0` at the level whose signal
/// coefficient is nearest 0.6.
#[test]
fn noised_density_matches_quadrature() {
    let s = default_schedule();
    let o = two_class_1d();
    let t = (1..=1000)
        .min_by(|a, b| (s.alpha(*a) - 0.6).abs().total_cmp(&(s.alpha(*b) - 0.6).abs()))
        .unwrap();
    let (a, sg) = (s.alpha(t), s.sigma(t));
    assert!((a - 0.6).abs() < 2e-3);
    let gauss = |x: f64, m: f64, sd: f64| {
        (-(x - m).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    };
    let p0 = |x0: f64, c: usize| -> f64 {
        match c {
            0 => 0.4 * gauss(x0, -2.0, 0.5) + 0.6 * gauss(x0, 1.0, 0.8),
            _ => gauss(x0, 2.5, 1.2),
        }
    };
    let n = 200_000;
    let (lo, hi) = (-15.0, 15.0);
    let h = (hi - lo) / n as f64;
    for &xt in &[-2.0, -0.3, 0.0, 0.7, 1.9, 4.0] {
        for c in 0..2 {
            let mut acc = 0.0;
            for i in 0..=n {
                let x0 = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                acc += w * gauss(xt, a * x0, sg) * p0(x0, c);
            }
            let quad = (acc * h).ln();
            let exact = o.log_density_t(&s, &[xt], t, Label::Class(c)).unwrap();
            assert!((quad - exact).abs() < 1e-8, "x_t={xt} c={c}: {quad} vs {exact}");
        }
    }
}

/// Tweedie: `E[x0 | x_t, c] = (x_t + sigma^2 score) / alpha`, checked against
/// self-normalised importance sampling from the clean class density.
#[test]
fn tweedie_mean_matches_monte_carlo() {
    let s = default_schedule();
    let o = two_class_1d();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &t in &[100usize, 400, 700] {
        let (a, sg) = (s.alpha(t), s.sigma(t));
        for &xt in &[-1.0, 0.5, 2.0] {
            let score = o.score_t(&s, &[xt], t, Label::Class(0)).unwrap()[0];
            let tweedie = (xt + sg * sg * score) / a;
            let n = 400_000;
            let (mut sw, mut swx) = (0.0, 0.0);
            let (mut sw2, mut sw2x, mut sw2x2) = (0.0, 0.0, 0.0);
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                let x0 = if rng.random::<f64>() < 0.4 { -2.0 + 0.5 * z } else { 1.0 + 0.8 * z };
                let w = (-(xt - a * x0).powi(2) / (2.0 * sg * sg)).exp();
                sw += w;
                swx += w * x0;
                sw2 += w * w;
                sw2x += w * w * x0;
                sw2x2 += w * w * x0 * x0;
            }
            let mc = swx / sw;
            // delta-method standard error of the ratio estimator
            let se = (sw2x2 - 2.0 * mc * sw2x + mc * mc * sw2).max(0.0).sqrt() / sw;
            assert!((mc - tweedie).abs() < 4.0 * se, "t={t} x_t={xt}: mc {mc} tweedie {tweedie} se {se}");
        }
    }
}

/// For one isotropic Gaussian the posterior mean has a closed form.
#[test]
fn tweedie_mean_single_gaussian_closed_form() {
    use balanced_distill::oracle::{ClassSpec, Component, GmmOracle, OracleSpec};
    let s = default_schedule();
    let mu = [1.5, -0.5, 0.25];
    let tau = 0.7;
    let o = GmmOracle::new(&OracleSpec {
        prior: vec![1.0],
        classes: vec![ClassSpec {
            name: None,
            components: vec![Component { weight: 1.0, mean: mu.to_vec(), scale: tau }],
        }],
    })
    .unwrap();
    for &t in &[50usize, 500, 950] {
        let (a, sg) = (s.alpha(t), s.sigma(t));
        let xt = [0.3, -1.2, 2.0];
        let score = o.score_t(&s, &xt, t, Label::Class(0)).unwrap();
        let gain = a * tau * tau / (a * a * tau * tau + sg * sg);
        for i in 0..3 {
            let tweedie = (xt[i] + sg * sg * score[i]) / a;
            let exact = mu[i] + gain * (xt[i] - a * mu[i]);
            assert!((tweedie - exact).abs() < 1e-9, "t={t}: {tweedie} vs {exact}");
        }
    }
}

#[test]
fn far_points_stay_finite() {
    let s = default_schedule();
    let o = random_oracle(5, 2, 3);
    for t in [0usize, 1, 500, 1000] {
        let x = [1e3, -1e3];
        let sc = o.score_t(&s, &x, t, Label::Null).unwrap();
        assert!(sc.iter().all(|v| v.is_finite()));
        assert!(o.log_density_t(&s, &x, t, Label::Class(0)).unwrap().is_finite());
    }
}
