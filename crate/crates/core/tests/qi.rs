mod common;

use common::{assert_within, SEED};
use twinlab_core::estimators::{covariance, SampleSeries};
use twinlab_core::photon::SourceKind;
use twinlab_core::qi::{
    nonclassicality_boundary, predicted_qi_snr, ratio_report, run_discrimination, sample_qi, simulate_qi_frames,
    violates_classical_bound, QiScenario, ThresholdPolicy,
};

fn scenario() -> QiScenario {
    QiScenario {
        source: SourceKind::TwinBeam,
        n: 1.0,
        modes: 10,
        n_b: 30.0,
        m_b: 1000.0,
        eta_p: 1.0,
        eta_r: 1.0,
        target_present: true,
        k_pixels: 1,
    }
}

fn thermal(s: QiScenario) -> QiScenario {
    s.with_source(SourceKind::SplitThermal)
}

#[test]
fn absent_target_leaves_no_covariance() {
    let q = sample_qi(&scenario(), 200_000, 32, SEED).unwrap();
    let c0 = q.covariance(0);
    assert_within("H0", c0.value, c0.standard_error, 0.0, 4.0);
    let dark_probe = QiScenario { eta_p: 0.0, ..scenario() };
    let q = sample_qi(&dark_probe, 200_000, 32, SEED + 1).unwrap();
    let c1 = q.covariance(1);
    assert_within("eta_p = 0", c1.value, c1.standard_error, 0.0, 4.0);
}

#[test]
fn twin_beam_covariance_under_h1() {
    let s = QiScenario { eta_p: 0.5, eta_r: 0.8, ..scenario() };
    let q = sample_qi(&s, 500_000, 32, SEED).unwrap();
    let c = q.covariance(1);
    let pred = s.n * s.eta_p * s.eta_r * (1.0 + s.n / s.modes as f64);
    assert!((s.predicted_covariance() - pred).abs() < 1e-12);
    assert_within("H1", c.value, c.standard_error, pred, 4.0);
}

#[test]
fn discrimination_errors_fall_with_more_shots() {
    let s = scenario();
    let total: Vec<f64> = [50, 200, 800]
        .iter()
        .map(|&shots| {
            let d = run_discrimination(&s, shots, 300, ThresholdPolicy::Midpoint, SEED).unwrap();
            d.type_i + d.type_ii
        })
        .collect();
    assert!(total.windows(2).all(|w| w[1] < w[0]), "error sums {total:?}");
}

#[test]
fn discrimination_snr_ratio_example() {
    let s = scenario();
    let (shots, trials) = (10_000, 400);
    let q = run_discrimination(&s, shots, trials, ThresholdPolicy::Midpoint, SEED).unwrap();
    let c = run_discrimination(&thermal(s), shots, 1000, ThresholdPolicy::Midpoint, SEED + 1).unwrap();
    let ratio = q.snr / c.snr;
    let pred = predicted_qi_snr(&s, shots as f64).unwrap();
    assert!((pred.ratio - 11.0).abs() < 1e-12);
    assert!((ratio - 11.0).abs() <= 0.15 * 11.0, "ratio {ratio} ({} / {})", q.snr, c.snr);
    assert!((q.snr - pred.snr_spdc).abs() <= 0.15 * pred.snr_spdc, "snr {} vs {}", q.snr, pred.snr_spdc);
}

#[test]
fn spatial_statistic_estimates_the_single_shot_covariance() {
    let s = QiScenario { k_pixels: 80, ..scenario() };
    let d = run_discrimination(&s, 1, 5000, ThresholdPolicy::Midpoint, SEED).unwrap();
    for (h, stats, target) in [(0, &d.statistics_h0, 0.0), (1, &d.statistics_h1, s.predicted_covariance())] {
        let (m, se) = common::mean_se(stats);
        assert_within(&format!("H{h}"), m, se, target, 4.0);
    }
}

#[test]
fn ratio_does_not_depend_on_probe_efficiency() {
    let mut ratios = Vec::new();
    for (i, eta_p) in [0.2, 0.5].into_iter().enumerate() {
        let s = QiScenario { n_b: 10.0, eta_p, ..scenario() };
        let seed = SEED + 10 * i as u64;
        let q = sample_qi(&s, 300_000, 32, seed).unwrap().snr_per_sample();
        let c = sample_qi(&thermal(s), 2_000_000, 32, seed + 1).unwrap().snr_per_sample();
        ratios.push(ratio_report(&q, &c));
    }
    let diff = ratios[0].value - ratios[1].value;
    let se = (ratios[0].standard_error.powi(2) + ratios[1].standard_error.powi(2)).sqrt();
    assert!(diff.abs() <= 4.0 * se, "ratios {} and {}", ratios[0].value, ratios[1].value);
}

#[test]
fn epsilon_falls_with_background_and_thermal_stays_classical() {
    let mut last = f64::INFINITY;
    for (i, n_b) in [1.0, 10.0, 100.0].into_iter().enumerate() {
        let s = QiScenario { n: 0.1, modes: 1, m_b: 100.0, n_b, ..scenario() };
        let e = sample_qi(&s, 400_000, 32, SEED + i as u64).unwrap().cauchy_schwarz(1);
        assert!(e.value < last, "epsilon {} at n_B = {n_b}", e.value);
        assert_within(&format!("twin beam n_B = {n_b}"), e.value, e.standard_error, s.predicted_epsilon(), 4.0);
        last = e.value;
        let t = sample_qi(&thermal(s), 400_000, 32, SEED + 100 + i as u64).unwrap().cauchy_schwarz(1);
        assert!(t.value <= 1.0 + 4.0 * t.standard_error, "thermal epsilon {} at n_B = {n_b}", t.value);
    }
}

#[test]
fn covariance_estimator_variance_is_the_product_of_variances() {
    let s = scenario();
    let q = sample_qi(&s, 500_000, 32, SEED).unwrap();
    let m = s.modes as f64;
    let v1 = s.n * (1.0 + s.n / m);
    let predicted = v1 * s.background_variance();
    let measured = q.product_variance(0);
    assert!((measured - predicted).abs() <= 0.15 * predicted, "{measured} vs {predicted}");
}

#[test]
fn boundary_and_bound_examples() {
    let s = QiScenario { n: 0.01, modes: 1, m_b: 1.0, ..scenario() };
    assert!((nonclassicality_boundary(&s).unwrap().simplified - 1.0).abs() < 1e-12);
    let s = QiScenario { eta_p: 0.5, modes: 100, m_b: 400.0, ..scenario() };
    let b = nonclassicality_boundary(&s).unwrap();
    assert!((b.simplified - 100.0).abs() < 1e-9);
    assert!(b.exact >= b.simplified);
    assert!(violates_classical_bound(&s.with_background(0.5 * b.simplified)));
    assert!(!violates_classical_bound(&s.with_background(2.0 * b.exact)));
}

#[test]
fn invalid_scenarios_are_rejected() {
    assert!(sample_qi(&QiScenario { eta_p: 1.5, ..scenario() }, 10, 2, 0).is_err());
    assert!(sample_qi(&scenario().with_source(SourceKind::Coherent), 10, 2, 0).is_err());
    assert!(run_discrimination(&scenario(), 1, 10, ThresholdPolicy::Midpoint, 0).is_err());
}

#[test]
fn persisted_shots_carry_the_h1_covariance() {
    let s = QiScenario { k_pixels: 4, ..scenario() };
    let fs = simulate_qi_frames(&s, 50_000, SEED).unwrap();
    assert_eq!((fs.width(), fs.height(), fs.channels()), (4, 1, 2));
    for p in 0..4 {
        let c = covariance(
            &SampleSeries::new(fs.pixel_series(0, p), "reference"),
            &SampleSeries::new(fs.pixel_series(1, p), "probe"),
        )
        .unwrap();
        assert_within("pixel covariance", c.value, c.standard_error, s.predicted_covariance(), 4.0);
    }
    assert_eq!(fs, simulate_qi_frames(&s, 50_000, SEED).unwrap());
}
