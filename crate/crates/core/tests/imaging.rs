mod common;

use common::{assert_within, mean_se, SEED};
use twinlab_core::detector::DetectorSpec;
use twinlab_core::geometry::EdgeSharedModel;
use twinlab_core::imaging::{
    binning_sweep, estimate_alpha, measured_alpha_uncertainty, pi_mask, pooled_sigma, predicted_alpha_uncertainty,
    simulate_imaging, snr_ratio, AbsorptionObject, ImagingScheme,
};
use twinlab_core::photon::SourceSpec;
use twinlab_core::Error;

const MODES: u32 = 20;

fn occupation(mean_n: f64, eta: f64) -> f64 {
    mean_n / (eta * MODES as f64)
}

/// Measured Δα with its standard error, and the prediction.
fn delta_alpha(scheme: ImagingScheme, src: &SourceSpec, eta: f64, alpha: f64, frames: usize, seed: u64) -> (f64, f64, f64) {
    let det = DetectorSpec::ideal(eta, 16, 16).unwrap();
    let obj = AbsorptionObject::uniform(16, 16, alpha).unwrap();
    let fs = simulate_imaging(src, Some(&obj), &det, scheme, frames, seed).unwrap();
    let cal = simulate_imaging(src, None, &det, scheme, frames, seed + 1).unwrap();
    let m = measured_alpha_uncertainty(&fs, &cal, scheme).unwrap();
    let pm = src.detected_moments(eta, eta);
    let sigma = if scheme == ImagingScheme::Direct { 0.0 } else { pm.nrf() };
    let pred = predicted_alpha_uncertainty(scheme, alpha, pm.fano(0), sigma, pm.mean1).unwrap();
    (m.value, m.standard_error, pred)
}

#[test]
fn empty_field_ssn_frames_show_the_predicted_noise_reduction() {
    for eta in [0.3, 0.8] {
        let src = SourceSpec::twin_beam(0.5, 10).unwrap();
        let det = DetectorSpec::ideal(eta, 16, 16).unwrap();
        let fs = simulate_imaging(&src, None, &det, ImagingScheme::Ssn, 400, SEED).unwrap();
        let (s, se) = pooled_sigma(&fs, 20);
        assert_within(&format!("eta {eta}"), s, se, 1.0 - eta, 4.0);
    }
}

#[test]
fn direct_coherent_mean_example() {
    let (mean_n, eta) = (200.0, 0.9);
    let src = SourceSpec::coherent(mean_n / MODES as f64, MODES).unwrap();
    let det = DetectorSpec::ideal(eta, 8, 8).unwrap();
    let obj = AbsorptionObject::uniform(8, 8, 0.5).unwrap();
    let fs = simulate_imaging(&src, Some(&obj), &det, ImagingScheme::Direct, 500, SEED).unwrap();
    let all: Vec<f64> = (0..fs.frames()).flat_map(|f| fs.values(f, 0)).collect();
    let (m, se) = mean_se(&all);
    assert_within("probe mean", m, se, 0.5 * eta * mean_n, 4.0);
}

#[test]
fn faint_mask_resolved_by_ssn_but_not_direct() {
    let (side, eta, frames) = (48u32, 0.2, 100);
    let src = SourceSpec::twin_beam(occupation(7000.0, eta), MODES).unwrap();
    let det = DetectorSpec::ideal(eta, side, side).unwrap();
    let mask = pi_mask(side, side);
    let obj = AbsorptionObject::from_mask(side, side, &mask, 0.02).unwrap();
    let z = |scheme: ImagingScheme| {
        let fs = simulate_imaging(&src, Some(&obj), &det, scheme, frames, SEED).unwrap();
        let cal = simulate_imaging(&src, None, &det, scheme, frames, SEED + 1).unwrap();
        estimate_alpha(&fs, &cal, scheme, 1).unwrap().median_z(&mask).unwrap()
    };
    let (ssn, direct) = (z(ImagingScheme::Ssn), z(ImagingScheme::Direct));
    assert!(ssn >= 3.0, "ssn median z {ssn}");
    assert!(direct < 3.0, "direct median z {direct}");
}

#[test]
fn delta_alpha_matches_prediction_at_ten_thousand_photons() {
    let mean_n = 1e4;
    let cases = [
        (ImagingScheme::DifferentialClassical, SourceSpec::split_thermal_matched(occupation(mean_n, 0.2), MODES).unwrap(), 0.2),
        (ImagingScheme::Ssn, SourceSpec::twin_beam(occupation(mean_n, 0.2), MODES).unwrap(), 0.2),
        (ImagingScheme::Ssn, SourceSpec::twin_beam(occupation(mean_n, 0.6), MODES).unwrap(), 0.6),
    ];
    for (i, (scheme, src, eta)) in cases.iter().enumerate() {
        for alpha in [0.01, 0.3] {
            let (m, _, p) = delta_alpha(*scheme, src, *eta, alpha, 300, SEED + 10 * i as u64);
            assert!((m - p).abs() <= 0.10 * p, "{scheme:?} eta={eta} alpha={alpha}: {m} vs {p}");
        }
    }
}

#[test]
fn estimates_are_unbiased() {
    let (mean_n, alpha) = (1000.0, 0.3);
    let cases = [
        (ImagingScheme::Direct, SourceSpec::coherent(mean_n / MODES as f64, MODES).unwrap(), 1.0),
        (ImagingScheme::DifferentialClassical, SourceSpec::split_thermal_matched(occupation(mean_n, 0.5), MODES).unwrap(), 0.5),
        (ImagingScheme::Ssn, SourceSpec::twin_beam(occupation(mean_n, 0.5), MODES).unwrap(), 0.5),
    ];
    // Pooled over independent runs so the test resolves biases well below
    // the single-run error.
    let runs = 8u64;
    for (scheme, src, eta) in cases {
        let det = DetectorSpec::ideal(eta, 8, 8).unwrap();
        let obj = AbsorptionObject::uniform(8, 8, alpha).unwrap();
        let (mut sum, mut var, mut n) = (0.0, 0.0, 0.0);
        for r in 0..runs {
            let fs = simulate_imaging(&src, Some(&obj), &det, scheme, 300, SEED + 2 * r).unwrap();
            let cal = simulate_imaging(&src, None, &det, scheme, 300, SEED + 2 * r + 1).unwrap();
            let img = estimate_alpha(&fs, &cal, scheme, 1).unwrap();
            sum += img.alpha.iter().sum::<f64>();
            var += img.standard_error.iter().map(|s| s * s).sum::<f64>();
            n += img.alpha.len() as f64;
        }
        assert_within(&format!("{scheme:?}"), sum / n, var.sqrt() / n, alpha, 3.0);
    }
}

#[test]
fn scheme_ordering_follows_the_noise_reduction() {
    let (mean_n, alpha, k) = (1000.0, 0.01, 300);
    let direct = delta_alpha(ImagingScheme::Direct, &SourceSpec::coherent(mean_n / MODES as f64, MODES).unwrap(), 1.0, alpha, k, SEED);
    let dc = delta_alpha(
        ImagingScheme::DifferentialClassical,
        &SourceSpec::split_thermal_matched(occupation(mean_n, 0.2), MODES).unwrap(),
        0.2,
        alpha,
        k,
        SEED + 2,
    );
    let ssn_08 = delta_alpha(ImagingScheme::Ssn, &SourceSpec::twin_beam(occupation(mean_n, 0.2), MODES).unwrap(), 0.2, alpha, k, SEED + 4);
    let ssn_04 = delta_alpha(ImagingScheme::Ssn, &SourceSpec::twin_beam(occupation(mean_n, 0.6), MODES).unwrap(), 0.6, alpha, k, SEED + 6);
    let below = |a: (f64, f64, f64), b: (f64, f64, f64)| b.0 - a.0 > 4.0 * (a.1.powi(2) + b.1.powi(2)).sqrt();
    assert!(below(ssn_08, dc), "sigma 0.8 should beat the classical differential scheme");
    assert!(below(ssn_04, dc));
    assert!(below(ssn_04, direct), "sigma 0.4 < 1/2 should beat direct imaging");
    assert!(below(direct, ssn_08), "sigma 0.8 > 1/2 should lose to direct imaging");
    assert!(snr_ratio(ImagingScheme::Ssn, ImagingScheme::Direct, alpha, 0.4).unwrap() < 1.0);
    assert!(snr_ratio(ImagingScheme::Ssn, ImagingScheme::Direct, alpha, 0.8).unwrap() > 1.0);
}

#[test]
fn binning_sweep_tracks_the_binned_model() {
    let model = EdgeSharedModel { x: 3, mu: 0.5, eta: 0.8 };
    let fs = model.simulate(24, 24, 150, SEED).unwrap();
    let rows = binning_sweep(&fs, &[1, 2, 3, 4], 15).unwrap();
    for r in &rows {
        assert_within(&format!("d={}", r.d), r.sigma, r.sigma_se, model.binned_nrf(r.d), 4.0);
        assert!((r.ratio_ssn_dc - snr_ratio(ImagingScheme::Ssn, ImagingScheme::DifferentialClassical, 0.01, r.sigma).unwrap()).abs() < 1e-12);
    }
    assert!(rows[1].sigma < rows[0].sigma);
}

#[test]
fn scheme_source_mismatch_is_rejected() {
    let det = DetectorSpec::ideal(0.5, 4, 4).unwrap();
    let thermal = SourceSpec::split_thermal_matched(1.0, 2).unwrap();
    let twb = SourceSpec::twin_beam(1.0, 2).unwrap();
    assert!(matches!(simulate_imaging(&thermal, None, &det, ImagingScheme::Ssn, 10, 0), Err(Error::Domain(_))));
    assert!(simulate_imaging(&twb, None, &det, ImagingScheme::DifferentialClassical, 10, 0).is_err());
    let wrong = AbsorptionObject::uniform(5, 4, 0.1).unwrap();
    assert!(matches!(simulate_imaging(&twb, Some(&wrong), &det, ImagingScheme::Ssn, 10, 0), Err(Error::Data(_))));
}
