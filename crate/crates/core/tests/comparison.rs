mod common;

use addbart::comparison::{
    classify_psbf, compute_cpo_from_likelihoods, compute_ospe_with, fit_lpml, CpoVector,
    EvidenceBand, Favors, OspeLoss, OspeSettings,
};
use addbart::data::{Dataset, ResponseKind};
use addbart::rng;
use addbart::{
    compare_additivity, compute_cpo, compute_lpml, compute_ospe, fit_bart, make_folds,
    psbf_verdict, r_ospe, AdditiveForm, ComparisonConfig, CovariateSplit, FoldAssignment, Result,
};
use common::*;

#[test]
fn harmonic_mean_cpo_matches_conjugate_loo_predictive() {
    let y = [0.3, -1.1, 0.8, 2.0, -0.2];
    let (est, exact) = conjugate_cpo_case(&y, 1.0, 100_000, 1);
    for (e, x) in est.iter().zip(&exact) {
        assert!((e / x - 1.0).abs() < 0.02, "{e} vs {x}");
    }
}

#[test]
fn cpo_is_invariant_to_draw_order() {
    let mut r = rng::seeded(2);
    let mut ll: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| -rng::exp1(&mut r)).collect()).collect();
    let a = compute_cpo(&ll).unwrap();
    ll.reverse();
    ll.swap(3, 17);
    let b = compute_cpo(&ll).unwrap();
    for (x, y) in a.log_cpo.iter().zip(&b.log_cpo) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn cpo_survives_tiny_likelihoods() {
    // log-likelihoods near -700 where exp underflows relative to one
    let offsets = [[0.3, -1.0], [1.2, 0.0], [-0.5, 2.0]];
    let ll: Vec<Vec<f64>> = offsets.iter().map(|o| o.iter().map(|d| -700.0 + d).collect()).collect();
    let c = compute_cpo(&ll).unwrap();
    for i in 0..2 {
        // log CPO = -700 - log mean exp(-d_s), the second term computed on the small scale
        let m: f64 = offsets.iter().map(|o| (-o[i]).exp()).sum::<f64>() / 3.0;
        let want = -700.0 - m.ln();
        assert!(((c.log_cpo[i] - want) / want).abs() < 1e-10);
        assert!(c.log_cpo[i].is_finite());
    }
    // even far below the smallest normal double
    let deep: Vec<Vec<f64>> = vec![vec![-1e4, -2e4], vec![-1e4 - 1.0, -2e4]];
    let c = compute_cpo(&deep).unwrap();
    assert!(c.log_cpo.iter().all(|v| v.is_finite()));
    assert!((c.log_cpo[1] + 2e4).abs() < 1e-9);
}

#[test]
fn lpml_is_sum_of_log_cpo() {
    let c = CpoVector { log_cpo: vec![-1.0_f64, -2.0] };
    assert!((compute_lpml(&c) + 3.0).abs() < 1e-15);
    assert_eq!(compute_lpml(&CpoVector { log_cpo: vec![0.0_f64; 3] }), 0.0);
    let c = compute_cpo_from_likelihoods(&[vec![0.5, 0.2], vec![0.25, 0.2]]).unwrap();
    assert!((c.lpml() - ((1.0_f64 / 3.0).ln() + 0.2_f64.ln())).abs() < 1e-12);
}

#[test]
fn lpml_grows_linearly_with_sample_size() {
    let mut r = rng::seeded(3);
    let y: Vec<f64> = (0..1600).map(|_| rng::std_normal(&mut r)).collect();
    let lpml = |n: usize| {
        let (est, _) = conjugate_cpo_case(&y[..n], 1.0, 2000, 4);
        est.iter().map(|c| c.ln()).sum::<f64>()
    };
    let (a, b) = (lpml(400), lpml(1600));
    // slope is E log N(y; 0, 1) = -(ln 2π + 1) / 2
    let slope = -0.5 * ((2.0 * std::f64::consts::PI).ln() + 1.0);
    assert!((a / 400.0 / slope - 1.0).abs() < 0.08, "{}", a / 400.0);
    assert!((b / 1600.0 / slope - 1.0).abs() < 0.04, "{}", b / 1600.0);
}

#[test]
fn verdict_bands_follow_the_scale() {
    let v = classify_psbf(25638.04);
    assert_eq!((v.band, v.favors), (EvidenceBand::Decisive, Favors::First));
    let v = classify_psbf(0.09521);
    assert_eq!((v.band, v.favors), (EvidenceBand::Strong, Favors::Second));
    let v = classify_psbf(1.0);
    assert_eq!((v.band, v.favors), (EvidenceBand::Indifferent, Favors::Neither));
    for (psbf, band) in [(2.9, EvidenceBand::Indifferent), (5.0, EvidenceBand::Substantial), (20.0, EvidenceBand::Strong), (50.0, EvidenceBand::VeryStrong), (101.0, EvidenceBand::Decisive)] {
        assert_eq!(classify_psbf(psbf).band, band);
        assert_eq!(classify_psbf(1.0 / psbf).band, band);
    }
}

#[test]
fn verdicts_mirror_when_swapped() {
    let mut r = rng::seeded(5);
    for _ in 0..1000 {
        let a = 20.0 * rng::std_normal(&mut r);
        let b = 20.0 * rng::std_normal(&mut r);
        let (x, y) = (psbf_verdict(a, b), psbf_verdict(b, a));
        assert!((x.psbf * y.psbf - 1.0).abs() < 1e-9);
        assert_eq!(x.band, y.band);
        assert!((x.psbf - (a - b).exp()).abs() <= 1e-12 * x.psbf);
        match x.favors {
            Favors::First => assert_eq!(y.favors, Favors::Second),
            Favors::Second => assert_eq!(y.favors, Favors::First),
            Favors::Neither => assert_eq!(y.favors, Favors::Neither),
        }
    }
}

#[test]
fn self_comparison_is_exactly_even() {
    let x = normals(60, 2, 6);
    let d = dataset(x[0].iter().map(|v| v * v).collect(), x, ResponseKind::Continuous);
    let cfg = short_config(10, 20, 30, 7);
    let a = fit_lpml(&fit_bart(&d, &cfg).unwrap()).unwrap();
    let b = fit_lpml(&fit_bart(&d, &cfg).unwrap()).unwrap();
    let v = psbf_verdict(a, b);
    assert_eq!(v.psbf, 1.0);
    assert_eq!(v.band, EvidenceBand::Indifferent);
}

fn xy(y: Vec<f64>) -> Dataset<f64> {
    let x: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
    dataset(y, vec![x], ResponseKind::Continuous)
}

#[test]
fn ospe_oracle_and_constant_predictors() {
    let mut r = rng::seeded(8);
    let raw: Vec<f64> = (0..2000).map(|_| 3.0 + 2.0 * rng::std_normal(&mut r)).collect();
    let (m, s) = (mean(&raw), sd(&raw));
    let d = xy(raw.iter().map(|v| (v - m) / s).collect());
    let folds = make_folds(d.n(), 5, 9).unwrap();
    let oracle = |_: &Dataset<f64>, test: &Dataset<f64>, _: usize| -> Result<Vec<f64>> { Ok(test.y().to_vec()) };
    assert_eq!(compute_ospe(&d, &oracle, &folds).unwrap(), 0.0);
    let constant = |train: &Dataset<f64>, test: &Dataset<f64>, _: usize| -> Result<Vec<f64>> {
        Ok(vec![mean(train.y()); test.n()])
    };
    let o = compute_ospe(&d, &constant, &folds).unwrap();
    assert!((o - 1.0).abs() < 0.01, "{o}");
}

#[test]
fn ospe_hand_case_and_fold_relabelling() {
    let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let d = xy(y.clone());
    let folds = FoldAssignment { k: 5, fold: vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4] };
    // predict 0.5 everywhere: errors (i - 0.5)²
    let half = |_: &Dataset<f64>, test: &Dataset<f64>, _: usize| -> Result<Vec<f64>> { Ok(vec![0.5; test.n()]) };
    let want = y.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>() / 10.0;
    assert!((compute_ospe(&d, &half, &folds).unwrap() - want).abs() < 1e-12);

    let train_mean = |train: &Dataset<f64>, test: &Dataset<f64>, _: usize| -> Result<Vec<f64>> {
        Ok(vec![mean(train.y()); test.n()])
    };
    let a = compute_ospe(&d, &train_mean, &folds).unwrap();
    // hold out {2k, 2k+1}: training mean is (45 - 4k - 1) / 8
    let mut hand = 0.0;
    for k in 0..5 {
        let mt = (45.0 - (4 * k + 1) as f64) / 8.0;
        hand += ((2 * k) as f64 - mt).powi(2) + ((2 * k + 1) as f64 - mt).powi(2);
    }
    assert!((a - hand / 10.0).abs() < 1e-12);
    let relabelled = FoldAssignment { k: 5, fold: folds.fold.iter().map(|f| (f + 3) % 5).collect() };
    let b = compute_ospe(&d, &train_mean, &relabelled).unwrap();
    assert!((a - b).abs() < 1e-12);

    let wrong = FoldAssignment { k: 2, fold: vec![0, 1, 0] };
    assert!(compute_ospe(&d, &train_mean, &wrong).is_err());
}

#[test]
fn misclassification_loss_counts_errors() {
    let y = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    let d = dataset(y, vec![(0..6).map(f64::from).collect()], ResponseKind::Binary);
    let folds = FoldAssignment { k: 2, fold: vec![0, 1, 0, 1, 0, 1] };
    let p = |_: &Dataset<f64>, test: &Dataset<f64>, _: usize| -> Result<Vec<f64>> { Ok(vec![0.7; test.n()]) };
    let mis = compute_ospe_with(&d, &p, &folds, OspeLoss::Misclassification).unwrap();
    assert!((mis - 0.5).abs() < 1e-15);
    let brier = compute_ospe_with(&d, &p, &folds, OspeLoss::Squared).unwrap();
    assert!((brier - (3.0 * 0.09 + 3.0 * 0.49) / 6.0).abs() < 1e-12);
    let c = xy(vec![0.0; 6]);
    assert!(compute_ospe_with(&c, &p, &folds, OspeLoss::Misclassification).is_err());
}

#[test]
fn ospe_ratio_cases() {
    assert_eq!(r_ospe(2.0, 1.0).unwrap(), 2.0);
    assert_eq!(r_ospe(1.3, 1.3).unwrap(), 1.0);
    assert_eq!(r_ospe(0.8, 1.0).unwrap(), 0.8);
    assert!(r_ospe(1.0, 0.0).is_err());
}

#[test]
fn comparison_driver_reports_consistent_numbers() {
    let x = normals(150, 2, 10);
    let mut r = rng::seeded(11);
    let y: Vec<f64> = (0..150).map(|i| x[0][i] + x[1][i] + 0.3 * rng::std_normal(&mut r)).collect();
    let d = dataset(y, x, ResponseKind::Continuous);
    let form = AdditiveForm::Split { split: CovariateSplit::new(vec![0], vec![1], 2).unwrap() };
    let cfg = ComparisonConfig::from_single(short_config(20, 100, 100, 12)).with_ospe(OspeSettings { folds: 3, seed: 13, loss: OspeLoss::Squared });
    let rep = compare_additivity(&d, &form, &cfg).unwrap();
    assert_eq!(rep.draws, 100);
    assert!((rep.psbf - (rep.lpml_nonadditive - rep.lpml_additive).exp()).abs() <= 1e-12 * rep.psbf);
    let r = rep.r_ospe.unwrap();
    assert!((r - rep.ospe_nonadditive.unwrap() / rep.ospe_additive.unwrap()).abs() < 1e-15);
    assert!(rep.treatment_effect.is_none());
    let again = compare_additivity(&d, &form, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&rep).unwrap(), serde_json::to_string(&again).unwrap());

    let mut uneven = cfg.clone();
    uneven.additive.bart.draws = 50;
    assert!(compare_additivity(&d, &form, &uneven).is_err());
}
