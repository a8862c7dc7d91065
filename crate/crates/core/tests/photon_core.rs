mod common;

use common::{assert_within, mean_se, rng, to_f64, var_se};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};
use twinlab_core::estimators::{covariance, SampleSeries};
use twinlab_core::photon::{
    apply_loss, loss_moments, sample_pair, split_beam_nrf, thermal_pmf, thin, twb_detected_moments, LossChannel,
    MomentPair, MomentRole, PixelSampler, SourceKind, SourceSpec,
};

#[test]
fn thermal_pmf_matches_geometric_form_and_normalizes() {
    let mu: f64 = 0.5;
    let mut total = 0.0;
    for n in 0..=60u64 {
        let p = thermal_pmf(mu, n).unwrap();
        let oracle = mu.powi(n as i32) / (1.0 + mu).powi(n as i32 + 1);
        assert!((p - oracle).abs() <= 1e-12 * oracle, "n = {n}: {p} vs {oracle}");
        total += p;
    }
    assert!((total - 1.0).abs() < 1e-9, "sum {total}");
}

#[test]
fn negative_or_nan_occupation_is_rejected() {
    assert!(thermal_pmf(-0.1, 0).is_err());
    assert!(thermal_pmf(f64::NAN, 0).is_err());
    assert!(SourceSpec::twin_beam(0.1, 0).is_err());
    assert!(SourceSpec::split_thermal(1.0, 1, 1.5).is_err());
}

#[test]
fn split_thermal_covariance_example() {
    let src = SourceSpec::split_thermal(1.0, 1, 0.5).unwrap();
    let mut r = rng("split-thermal-cov");
    let (a, b): (Vec<u64>, Vec<u64>) = (0..1_000_000).map(|_| sample_pair(&src, &mut r)).unzip();
    let c = covariance(&SampleSeries::from_counts(&a, "1"), &SampleSeries::from_counts(&b, "2")).unwrap();
    assert_within("split thermal covariance", c.value, c.standard_error, 0.25, 3.0);
}

#[test]
fn fock_state_under_loss_is_binomial() {
    let ch = LossChannel::new(0.7).unwrap();
    let mut r = rng("fock-loss");
    let x: Vec<f64> = (0..1_000_000).map(|_| apply_loss(20, ch, &mut r) as f64).collect();
    let (m, se_m) = mean_se(&x);
    let (v, se_v) = var_se(&x);
    assert_within("mean", m, se_m, 14.0, 3.0);
    assert_within("variance", v, se_v, 4.2, 3.0);
    let fock = MomentPair::new(20.0, 0.0, MomentRole::PreDetection).unwrap();
    let pred = loss_moments(fock, ch);
    assert!((pred.mean - 14.0).abs() < 1e-12 && (pred.variance - 4.2).abs() < 1e-12);
}

#[test]
fn split_beam_nrf_examples() {
    assert!((split_beam_nrf(1.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
    assert!((split_beam_nrf(3.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
    assert!((split_beam_nrf(3.0, 1.0).unwrap() - 3.0).abs() < 1e-15);
    assert!(split_beam_nrf(1.0, 1.2).is_err());
}

#[test]
fn sampled_moments_agree_with_closed_forms() {
    let kinds = [SourceKind::TwinBeam, SourceKind::SplitThermal, SourceKind::Coherent];
    let k = 20_000;
    for kind in kinds {
        for mu in [0.05, 0.5, 5.0] {
            for eta in [0.3, 0.7, 1.0] {
                let src = SourceSpec::new(kind, mu, 4, 0.5).unwrap();
                let sampler = PixelSampler::new(&src);
                let mut r = rng(&format!("moments-{kind:?}-{mu}-{eta}"));
                let (a, b): (Vec<u64>, Vec<u64>) = (0..k)
                    .map(|_| {
                        let (x, y) = sampler.sample(&mut r);
                        (thin(x, eta, &mut r), thin(y, eta, &mut r))
                    })
                    .unzip();
                let pred = src.detected_moments(eta, eta);
                let label = format!("{kind:?} mu={mu} eta={eta}");
                let (m1, se_m1) = mean_se(&to_f64(&a));
                let (m2, se_m2) = mean_se(&to_f64(&b));
                let (v1, se_v1) = var_se(&to_f64(&a));
                let (v2, se_v2) = var_se(&to_f64(&b));
                let c = covariance(&SampleSeries::from_counts(&a, "1"), &SampleSeries::from_counts(&b, "2")).unwrap();
                assert_within(&format!("{label} mean1"), m1, se_m1, pred.mean1, 4.0);
                assert_within(&format!("{label} mean2"), m2, se_m2, pred.mean2, 4.0);
                assert_within(&format!("{label} var1"), v1, se_v1, pred.var1, 4.0);
                assert_within(&format!("{label} var2"), v2, se_v2, pred.var2, 4.0);
                // Coherent arms are independent, so the covariance SE is the only scale.
                assert_within(&format!("{label} cov"), c.value, c.standard_error, pred.cov, 4.0);
            }
        }
    }
}

#[test]
fn thinning_composes_in_distribution() {
    let (n, e1, e2) = (12u64, 0.8, 0.5);
    let draws = 200_000;
    let mut r = rng("thinning-semigroup");
    let mut twice = vec![0u64; n as usize + 1];
    let mut once = vec![0u64; n as usize + 1];
    for _ in 0..draws {
        twice[thin(thin(n, e1, &mut r), e2, &mut r) as usize] += 1;
        once[thin(n, e1 * e2, &mut r) as usize] += 1;
    }
    let pmf = Binomial::new(e1 * e2, n).unwrap();
    for (label, hist) in [("two-stage", &twice), ("one-stage", &once)] {
        let mut chi2 = 0.0;
        let mut dof = 0;
        for (k, &obs) in hist.iter().enumerate() {
            let expected = draws as f64 * pmf.pmf(k as u64);
            if expected >= 5.0 {
                chi2 += (obs as f64 - expected).powi(2) / expected;
                dof += 1;
            }
        }
        let p = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 1e-3, "{label}: chi2 {chi2} on {} dof, p = {p}", dof - 1);
    }
}

#[test]
fn loss_moments_compose_and_keep_thermal_form() {
    let mu = 2.0;
    let thermal = MomentPair::new(mu, mu * (1.0 + mu), MomentRole::PreDetection).unwrap();
    let (a, b) = (LossChannel::new(0.6).unwrap(), LossChannel::new(0.3).unwrap());
    let two = loss_moments(loss_moments(thermal, a), b);
    let one = loss_moments(thermal, a.then(b));
    assert!((two.mean - one.mean).abs() < 1e-12 && (two.variance - one.variance).abs() < 1e-12);
    let m = one.mean;
    assert!((one.variance - m * (1.0 + m)).abs() < 1e-12);
}

#[test]
fn twin_beam_covariance_scales_with_both_efficiencies() {
    let src = SourceSpec::twin_beam(0.5, 5).unwrap();
    let sampler = PixelSampler::new(&src);
    let base = twb_detected_moments(0.5, 5.0, 1.0, 1.0).cov;
    for (e1, e2) in [(1.0, 1.0), (0.5, 0.8), (0.9, 0.2)] {
        let mut r = rng(&format!("cov-scaling-{e1}-{e2}"));
        let (a, b): (Vec<u64>, Vec<u64>) = (0..100_000)
            .map(|_| {
                let (x, y) = sampler.sample(&mut r);
                (thin(x, e1, &mut r), thin(y, e2, &mut r))
            })
            .unzip();
        let c = covariance(&SampleSeries::from_counts(&a, "1"), &SampleSeries::from_counts(&b, "2")).unwrap();
        assert_within(&format!("cov at ({e1}, {e2})"), c.value, c.standard_error, e1 * e2 * base, 4.0);
    }
}

#[test]
fn lossless_twin_beam_arms_are_identical() {
    let src = SourceSpec::twin_beam(3.0, 7).unwrap();
    let sampler = PixelSampler::new(&src);
    let mut r = rng("identical-arms");
    assert!((0..10_000).all(|_| {
        let (a, b) = sampler.sample(&mut r);
        a == b
    }));
}

#[test]
fn zero_occupation_gives_empty_frames() {
    let src = SourceSpec::twin_beam(0.0, 10).unwrap();
    let sampler = PixelSampler::new(&src);
    let mut r = rng("vacuum");
    assert!((0..1000).all(|_| sampler.sample(&mut r) == (0, 0)));
}

#[test]
fn same_seed_gives_same_draws() {
    let src = SourceSpec::split_thermal(1.0, 3, 0.3).unwrap();
    let sampler = PixelSampler::new(&src);
    let draw = || {
        let mut r = rng("repeatable");
        (0..1000).map(|_| sampler.sample(&mut r)).collect::<Vec<_>>()
    };
    assert_eq!(draw(), draw());
}
