mod common;

use bnnood::data::{gen_toy_gaussians, gen_uniform_ood, split_validation, ToyGaussians};
use bnnood::dataset::{LabeledSet, Origin};
use bnnood::inference::*;
use bnnood::likelihoods::{joint_objective, JointObjective, Likelihood, LikelihoodSpec};
use bnnood::metrics::{accuracy, brier, ConfidenceMode};
use bnnood::models::{predict, Activation, DiagGaussian, Mlp, Posterior};
use bnnood::Matrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn toy() -> LabeledSet {
    gen_toy_gaussians(&ToyGaussians::with_seed(0)).unwrap()
}

fn toy_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 200,
        batch_size: 32,
        lr: 1e-2,
        ..TrainConfig::default()
    }
}

fn sup_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn convex_softmax_regression_reaches_a_stationary_point() {
    let d = toy();
    let spec = LikelihoodSpec::new(Likelihood::Categorical);
    let model = Mlp::init(&[2, 4], Activation::Tanh, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 2000,
        batch_size: d.len(),
        lr: 5e-2,
        weight_decay: 1e-2,
        ..TrainConfig::default()
    };
    let (fit, _) = train_map(&model, &spec, &d, None, &cfg).unwrap();
    let obj = JointObjective::full_batch(&spec, cfg.weight_decay * d.len() as f64, &d, None);
    let g = obj
        .evaluate(&fit, fit.params(), &d, None, true)
        .unwrap()
        .grad
        .unwrap();
    let norm = g
        .iter()
        .map(|v| (v / d.len() as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(norm <= 1e-3, "gradient norm {norm}");
}

#[test]
fn toy_categorical_map_fits_the_clusters() {
    let d = toy();
    let spec = LikelihoodSpec::new(Likelihood::Categorical);
    let model = Mlp::init(&[2, 32, 32, 4], Activation::Tanh, 7).unwrap();
    let (fit, trace) = train_map(&model, &spec, &d, None, &toy_cfg()).unwrap();
    let p = predict(&fit, &Posterior::MapPoint, d.x(), 0).unwrap();
    assert!(accuracy(&p, d.hard_labels().unwrap(), ConfidenceMode::MaxSoftmax).unwrap() >= 0.98);
    assert_eq!(trace.len(), 200 * 13);
}

#[test]
fn map_training_increases_the_objective() {
    let spec = LikelihoodSpec::new(Likelihood::Categorical);
    let spec_means = ToyGaussians {
        means: vec![[-2.0, 0.0], [2.0, 0.0]],
        ..ToyGaussians::with_seed(3)
    };
    let d = gen_toy_gaussians(&spec_means).unwrap();
    let model = Mlp::init(&[2, 8, 2], Activation::Tanh, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        ..toy_cfg()
    };
    let lambda = cfg.weight_decay * d.len() as f64;
    let before = joint_objective(&spec, &model, model.params(), &d, None, lambda).unwrap();
    let (fit, _) = train_map(&model, &spec, &d, None, &cfg).unwrap();
    let after = joint_objective(&spec, &fit, fit.params(), &d, None, lambda).unwrap();
    assert!(after >= before, "{before} -> {after}");
}

#[test]
fn kl_is_non_negative_and_zero_on_the_diagonal() {
    let mut r = common::rng(5);
    for _ in 0..1000 {
        let n = r.random_range(1..8);
        let mut v = || -> Vec<f64> { (0..n).map(|_| r.random_range(-3.0..3.0)).collect() };
        let (qm, pm) = (v(), v());
        let qv: Vec<f64> = v().iter().map(|x: &f64| x.exp()).collect();
        let pv: Vec<f64> = v().iter().map(|x: &f64| x.exp()).collect();
        assert!(kl_diag_gaussian(&qm, &qv, &pm, &pv).unwrap() >= 0.0);
        assert!(kl_diag_gaussian(&qm, &qv, &qm, &qv).unwrap().abs() <= 1e-12);
    }
}

#[test]
fn kl_agrees_with_monte_carlo() {
    let (qm, qv) = ([0.3, -1.0, 2.0], [0.5, 2.0, 0.1]);
    let (pm, pv) = ([0.0, 0.5, 1.5], [1.0, 1.5, 0.4]);
    let exact = kl_diag_gaussian(&qm, &qv, &pm, &pv).unwrap();
    let log_n =
        |x: f64, m: f64, v: f64| -0.5 * ((x - m).powi(2) / v + v.ln() + std::f64::consts::TAU.ln());
    let mut r = common::rng(9);
    let n = 100_000;
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            (0..3)
                .map(|j| {
                    let e: f64 = StandardNormal.sample(&mut r);
                    let x = qm[j] + qv[j].sqrt() * e;
                    log_n(x, qm[j], qv[j]) - log_n(x, pm[j], pv[j])
                })
                .sum()
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!(
        (mean - exact).abs() <= 3.0 * se,
        "{mean} vs {exact} (se {se})"
    );
}

#[test]
fn fisher_is_non_negative_and_grows_with_data() {
    for lik in common::all_variants(4) {
        let case = common::grad_case(lik, 8);
        let small = fisher_diagonal(
            &case.model,
            &case.spec,
            &case.d.truncate(6),
            case.d_out.as_ref(),
            LaplaceScope::Full,
        )
        .unwrap();
        let big = fisher_diagonal(
            &case.model,
            &case.spec,
            &case.d,
            case.d_out.as_ref(),
            LaplaceScope::Full,
        )
        .unwrap();
        assert!(small.iter().all(|&f| f >= 0.0));
        for (s, b) in small.iter().zip(&big) {
            assert!(*b >= s * (1.0 - 1e-12), "{lik:?}: {s} > {b}");
        }
        let last = fisher_diagonal(
            &case.model,
            &case.spec,
            &case.d,
            case.d_out.as_ref(),
            LaplaceScope::LastLayer,
        )
        .unwrap();
        assert_eq!(last.len(), case.model.last_layer_slice().len);
        let offset = case.model.last_layer_slice().offset;
        for (l, f) in last.iter().zip(&big[offset..]) {
            assert!((l - f).abs() <= 1e-12 * f.abs().max(1.0));
        }
    }
}

struct Fitted {
    model: Mlp,
    spec: LikelihoodSpec,
    train: LabeledSet,
    val: LabeledSet,
    out: LabeledSet,
}

fn fitted(lik: Likelihood) -> Fitted {
    let (train, val) = split_validation(&toy(), 40, 1).unwrap();
    let spec = LikelihoodSpec::new(lik);
    let outputs = if lik == Likelihood::NoneClass { 5 } else { 4 };
    let out = gen_uniform_ood(-6.0, 6.0, 2, 360, 2).unwrap();
    let model = Mlp::init(&[2, 16, 16, outputs], Activation::Tanh, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        ..toy_cfg()
    };
    let d_out = spec.uses_ood().then_some(&out);
    let (model, _) = train_map(&model, &spec, &train, d_out, &cfg).unwrap();
    Fitted {
        model,
        spec,
        train,
        val,
        out,
    }
}

#[test]
fn laplace_variance_is_bounded_by_the_prior() {
    for lik in [Likelihood::Categorical, Likelihood::Oe] {
        let f = fitted(lik);
        let fit = fit_laplace(
            &f.model,
            &f.spec,
            &f.train,
            Some(&f.out),
            &LaplaceConfig::default(),
            &f.val,
        )
        .unwrap();
        assert_eq!(fit.scores.len(), 15);
        assert!(fit
            .posterior
            .variance()
            .iter()
            .all(|&v| v > 0.0 && v <= 1.0 / fit.prior_precision));
        assert_eq!(fit.posterior.mean(), f.model.params());
    }
}

#[test]
fn tuned_precision_is_the_exhaustive_brier_minimiser() {
    let f = fitted(Likelihood::Categorical);
    let cfg = LaplaceConfig::default();
    let fit = fit_laplace(&f.model, &f.spec, &f.train, None, &cfg, &f.val).unwrap();
    let labels = f.val.hard_labels().unwrap();
    let mut best = (f64::INFINITY, 0.0);
    for &lambda in &cfg.prior_grid {
        let var = fit.fisher.iter().map(|x| 1.0 / (x + lambda)).collect();
        let q = DiagGaussian::new(
            f.model.full_slice(),
            f.model.params().to_vec(),
            var,
            cfg.predict_samples,
        )
        .unwrap();
        let p = predict(&f.model, &Posterior::DiagGaussian(q), f.val.x(), cfg.seed).unwrap();
        let b = brier(&p, labels).unwrap();
        if b <= best.0 {
            best = (b, lambda);
        }
    }
    assert_eq!(fit.prior_precision, best.1);
}

#[test]
fn brier_profile_has_an_interior_minimum() {
    // overlapping clusters: an overconfident MAP gains from some posterior spread
    let noisy = gen_toy_gaussians(&ToyGaussians {
        std: 1.6,
        ..ToyGaussians::with_seed(4)
    })
    .unwrap();
    let (train, val) = split_validation(&noisy, 100, 1).unwrap();
    let spec = LikelihoodSpec::new(Likelihood::Categorical);
    let model = Mlp::init(&[2, 32, 32, 4], Activation::Tanh, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        weight_decay: 0.0,
        ..toy_cfg()
    };
    let (model, _) = train_map(&model, &spec, &train, None, &cfg).unwrap();
    let fit = fit_laplace(&model, &spec, &train, None, &LaplaceConfig::default(), &val).unwrap();
    let scores: Vec<f64> = fit.scores.iter().map(|s| s.1).collect();
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert!(best > 0 && best < scores.len() - 1, "{scores:?}");
}

#[test]
fn vanishing_posterior_variance_recovers_the_map_predictive() {
    let f = fitted(Likelihood::MixedLabel { gamma: 4.0 });
    let map = predict(&f.model, &Posterior::MapPoint, f.val.x(), 0).unwrap();
    let cfg = LaplaceConfig {
        prior_grid: vec![1e12],
        ..LaplaceConfig::default()
    };
    let fit = fit_laplace(&f.model, &f.spec, &f.train, Some(&f.out), &cfg, &f.val).unwrap();
    let la = predict(&f.model, &fit.to_posterior(), f.val.x(), 1).unwrap();
    assert!(sup_diff(&la, &map) <= 1e-4);

    let slice = f.model.last_layer_slice();
    let q = DiagGaussian::new(
        slice,
        f.model.params()[slice.range()].to_vec(),
        vec![1e-20; slice.len],
        50,
    )
    .unwrap();
    let vb = predict(&f.model, &Posterior::DiagGaussian(q), f.val.x(), 2).unwrap();
    assert!(sup_diff(&vb, &map) <= 1e-9);
}

#[test]
fn vb_elbo_trace_rises_and_posterior_covers_the_head() {
    let f = fitted(Likelihood::Categorical);
    let train = TrainConfig {
        epochs: 40,
        ..toy_cfg()
    };
    let (q, trace) = fit_vb(
        &f.model,
        &f.spec,
        &f.train,
        None,
        &VbConfig::default(),
        &train,
    )
    .unwrap();
    assert_eq!(q.slice(), f.model.last_layer_slice());
    let elbo = trace.elbos();
    assert_eq!(elbo.len(), trace.len());
    let smooth = window_means(&elbo, 50);
    assert!(smooth.last() > smooth.first(), "{smooth:?}");
    let p = predict(&f.model, &Posterior::DiagGaussian(q), f.val.x(), 0).unwrap();
    for row in p.iter_rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn missing_outliers_are_rejected() {
    let d = toy();
    let spec = LikelihoodSpec::new(Likelihood::Oe);
    let model = Mlp::init(&[2, 4, 4], Activation::Tanh, 0).unwrap();
    assert!(train_map(&model, &spec, &d, None, &toy_cfg()).is_err());
    let empty = LabeledSet::hard(Matrix::zeros(0, 2), vec![], 4, Origin::InDistribution).unwrap();
    assert!(train_map(
        &model,
        &LikelihoodSpec::new(Likelihood::Categorical),
        &empty,
        None,
        &toy_cfg()
    )
    .is_err());
}
