use sfd_core::ensembles::{ose, wse};
use sfd_core::evaluation::{evaluate_environments, ood_accuracy_mc, OodMode};
use sfd_core::generative::{id_environment, make_feature_spec, sample_batch, EnvironmentLaw, FeatureSpec};
use sfd_core::models::{closed_form_classifier, column_cosines, fit_classifier_erm, ErmConfig, LinearModel, Predictor};
use sfd_core::numerics::{epsilon_bound, BankMode, RngStream};
use sfd_core::theory::{overlap_example_values, prop1_values, ModelConfig};

fn example(name: &str, mode: BankMode) -> (FeatureSpec, LinearModel, LinearModel) {
    let c = ModelConfig::example(name, 0.9).unwrap();
    let (d_v, d_s) = c.world_dims();
    let spec = make_feature_spec(3, d_v, d_s, 0.01, mode, &mut RngStream::new(5, 0)).unwrap();
    let (a, b) = c.masks(&spec).unwrap();
    let m1 = closed_form_classifier(&spec, &a, false).unwrap();
    let m2 = closed_form_classifier(&spec, &b, false).unwrap();
    (spec, m1, m2)
}

#[test]
fn analytic_and_sampled_agree_on_shared_environments() {
    let (spec, m1, m2) = example("1-1", BankMode::StandardBasis);
    let e = ose(&m1, &m2).unwrap();
    let preds: [&dyn Predictor; 2] = [&m1, &e];
    let law = EnvironmentLaw::new(0.9).unwrap();
    let s = RngStream::new(8, 0);
    let a = evaluate_environments(&preds, &spec, law, 300, OodMode::Analytic, &s, &[]).unwrap();
    let b = evaluate_environments(&preds, &spec, law, 300, OodMode::Sampled { n_per_env: 600 }, &s, &[]).unwrap();
    for i in 0..2 {
        let (x, y) = (a.estimate(i).value, b.estimate(i).value);
        assert!((x - y).abs() < 0.01, "predictor {i}: analytic {x} vs sampled {y}");
    }
}

#[test]
fn random_rotation_does_not_change_accuracy() {
    let (spec_a, m1a, _) = example("1-1", BankMode::StandardBasis);
    let (spec_b, m1b, _) = example("1-1", BankMode::RandomQr);
    let law = EnvironmentLaw::new(0.9).unwrap();
    let s = RngStream::new(9, 0);
    let mode = OodMode::Sampled { n_per_env: 200 };
    let a = ood_accuracy_mc(&m1a, &spec_a, law, 200, mode, &s).unwrap();
    let b = ood_accuracy_mc(&m1b, &spec_b, law, 200, mode, &s).unwrap();
    assert!((a.value - b.value).abs() < 0.02, "{} vs {}", a.value, b.value);
}

#[test]
fn analytic_monte_carlo_matches_closed_forms() {
    let law = EnvironmentLaw::new(0.9).unwrap();
    let s = RngStream::new(10, 0);
    let (spec, m1, m2) = example("1-1", BankMode::StandardBasis);
    let (single, pair) = prop1_values(0.9).unwrap();
    let r1 = ood_accuracy_mc(&m1, &spec, law, 20_000, OodMode::Analytic, &s).unwrap();
    let r2 = ood_accuracy_mc(&ose(&m1, &m2).unwrap(), &spec, law, 20_000, OodMode::Analytic, &s).unwrap();
    assert!(r1.z_distance(single).abs() < 3.0, "{r1:?} vs {single}");
    assert!(r2.z_distance(pair).abs() < 3.0, "{r2:?} vs {pair}");

    // The overlap example: enumeration-supported assignment of the two values.
    let (spec, m1, m2) = example("1-2", BankMode::StandardBasis);
    let ov = overlap_example_values(0.9).unwrap();
    let o = ood_accuracy_mc(&ose(&m1, &m2).unwrap(), &spec, law, 20_000, OodMode::Analytic, &s).unwrap();
    let w = ood_accuracy_mc(&wse(&m1, &m2).unwrap(), &spec, law, 20_000, OodMode::Analytic, &s).unwrap();
    assert!(o.z_distance(ov.ose).abs() < 3.0, "{o:?} vs {}", ov.ose);
    assert!(w.z_distance(ov.wse).abs() < 3.0, "{w:?} vs {}", ov.wse);
}

#[test]
fn evaluation_is_identical_across_thread_counts() {
    let (spec, m1, m2) = example("2-2", BankMode::StandardBasis);
    let e = wse(&m1, &m2).unwrap();
    let preds: [&dyn Predictor; 3] = [&m1, &m2, &e];
    let law = EnvironmentLaw::new(0.9).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            evaluate_environments(&preds, &spec, law, 40, OodMode::Sampled { n_per_env: 100 }, &RngStream::new(1, 1), &[(0, 1, 2)])
                .unwrap()
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn erm_recovers_closed_form_direction() {
    for name in ["1-1", "2-1"] {
        let (spec, m1, _) = example(name, BankMode::StandardBasis);
        let batch = sample_batch(&spec, &id_environment(&spec), 2000, &mut RngStream::new(12, 0)).unwrap();
        let cfg = ErmConfig { steps: 300, lr: 0.5, init_std: 0.0 };
        let fit = fit_classifier_erm(&batch, m1.mask(), &cfg, &mut RngStream::new(13, 0)).unwrap();
        let cos = column_cosines(fit.w(), m1.w(), true).unwrap();
        assert!(cos.iter().all(|&c| c > 0.95), "{name}: {cos:?}");
    }
}

#[test]
fn small_noise_bound_value() {
    // K = 10, σ = 1/100, 20 features.
    let eps = epsilon_bound(0.01, 20, 10).unwrap();
    assert!((eps - 2.867e-6).abs() < 1e-8, "{eps}");
}
