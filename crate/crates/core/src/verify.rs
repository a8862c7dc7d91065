//! The acceptance suite: nine criteria, each a set of checks against
//! closed-form targets with tolerances pinned below.

use std::time::Instant;

use serde::Serialize;

use crate::calibration::{
    analog_calibration, emccd_threshold_calibration, klyshko_efficiency, pnr_efficiencies, simulate_klyshko,
    simulate_pnr, EmGainModel, EmccdSetup, KlyshkoSetup, PnrSetup,
};
use crate::calibration::emccd::{predicted_click_efficiency, simulate_click_table};
use crate::calibration::pnr::Background;
use crate::detector::{apply_read_noise, DetectorSpec};
use crate::error::Result;
use crate::estimators::{cauchy_schwarz, nrf, EstimateReport, SampleSeries};
use crate::exact::detected_joint_pmf;
use crate::frames::FrameSet;
use crate::geometry::{collection_efficiency, predicted_nrf, simulate_layout_frames, EdgeSharedModel, ModeLayout};
use crate::ghost::{measure_gi_snr, predicted_gi_snr, simulate_gi_streaming, GiObject};
use crate::imaging::{
    estimate_alpha, measured_alpha_uncertainty, phi_mask, pooled_sigma, predicted_alpha_uncertainty,
    simulate_imaging, AbsorptionObject, ImagingScheme,
};
use crate::io::frameset::{from_bytes, load, save, to_bytes};
use crate::photon::{twb_nrf, SourceKind, SourceSpec};
use crate::qi::{nonclassicality_boundary, predicted_qi_snr, ratio_report, sample_qi, QiScenario};

/// Agreement in standard errors for statistical checks.
pub const SE_TOLERANCE: f64 = 4.0;
pub const NRF_RUNTIME_LIMIT_S: f64 = 10.0;
pub const BOUNDARY_FACTOR: f64 = 1.5;
pub const ABSORPTION_REL_TOL: f64 = 0.10;
pub const DETECTION_Z: f64 = 3.0;
pub const QI_RATIO_REL_TOL: f64 = 0.15;
pub const SLOPE_SE_TOLERANCE: f64 = 3.0;
pub const GI_SNR_REL_TOL: f64 = 0.15;
pub const GI_LIMIT_REL_TOL: f64 = 0.10;
pub const KLYSHKO_REL_TOL: f64 = 0.01;
pub const PNR_SE_TOLERANCE: f64 = 3.0;
pub const PNR_MIN_P_VALUE: f64 = 1e-3;
pub const ANALOG_REL_TOL: f64 = 0.02;
pub const EMCCD_REL_TOL: f64 = 0.03;
pub const EXACT_TOL: f64 = 1e-6;

pub const CRITERIA: [(u8, &str); 9] = [
    (1, "twin-beam noise reduction"),
    (2, "geometry model"),
    (3, "cauchy-schwarz"),
    (4, "absorption imaging"),
    (5, "quantum illumination"),
    (6, "ghost imaging"),
    (7, "calibration closures"),
    (8, "exact enumeration oracle"),
    (9, "determinism"),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub label: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(label: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { label: label.into(), pass, detail: detail.into() }
    }

    /// Value against prediction within `k` standard errors.
    fn within_se(label: impl Into<String>, r: &EstimateReport, prediction: f64, k: f64) -> Self {
        let z = (r.value - prediction) / r.standard_error;
        Self::new(
            label,
            z.abs() <= k,
            format!("{:.5} ± {:.5} vs {prediction:.5} (z = {z:+.2})", r.value, r.standard_error),
        )
    }

    fn relative(label: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        let rel = (value - target).abs() / target.abs();
        Self::new(label, rel <= tol, format!("{value:.5} vs {target:.5} ({:.2}% off)", 100.0 * rel))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub seconds: f64,
    pub checks: Vec<Check>,
}

impl CriterionResult {
    /// One line: "criterion N name: PASS (k/n checks, t s)".
    pub fn summary(&self) -> String {
        let passed = self.checks.iter().filter(|c| c.pass).count();
        format!(
            "criterion {} {}: {} ({passed}/{} checks, {:.1} s)",
            self.id,
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.checks.len(),
            self.seconds
        )
    }
}

fn seed_for(seed: u64, id: u8, i: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(((id as u64) << 32) + i)
}

/// Runs one criterion. A simulation error is reported as a failed check.
pub fn run(id: u8, seed: u64) -> CriterionResult {
    let name = CRITERIA.iter().find(|c| c.0 == id).map_or("unknown", |c| c.1);
    let start = Instant::now();
    let s = |i| seed_for(seed, id, i);
    let outcome = match id {
        1 => twb_noise_reduction(s),
        2 => geometry_model(s),
        3 => cauchy_schwarz_checks(s),
        4 => absorption_imaging(s),
        5 => quantum_illumination(s),
        6 => ghost_imaging(s),
        7 => calibration_closures(s),
        8 => exact_oracle(),
        9 => determinism(s),
        _ => Ok(vec![Check::new("known criterion", false, format!("no criterion {id}"))]),
    };
    let checks = outcome.unwrap_or_else(|e| vec![Check::new("ran without error", false, e.to_string())]);
    CriterionResult {
        id,
        name: name.into(),
        pass: !checks.is_empty() && checks.iter().all(|c| c.pass),
        seconds: start.elapsed().as_secs_f64(),
        checks,
    }
}

pub fn run_all(seed: u64) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|&(id, _)| run(id, seed)).collect()
}

fn pixel_pair(fs: &FrameSet) -> (SampleSeries, SampleSeries) {
    (SampleSeries::new(fs.pixel_series(0, 0), "probe"), SampleSeries::new(fs.pixel_series(1, 0), "reference"))
}

fn twb_noise_reduction(seed: impl Fn(u64) -> u64) -> Result<Vec<Check>> {
    let source = SourceSpec::twin_beam(0.1, 100)?;
    let mut checks = Vec::new();
    for (i, eta) in [0.3, 0.6, 0.9].into_iter().enumerate() {
        let start = Instant::now();
        let det = DetectorSpec::ideal(eta, 1, 1)?;
        let fs = simulate_imaging(&source, None, &det, ImagingScheme::Ssn, 100_000, seed(i as u64))?;
        let (a, b) = pixel_pair(&fs);
        let r = nrf(&a, &b)?;
        let elapsed = start.elapsed().as_secs_f64();
        checks.push(Check::within_se(format!("sigma at eta = {eta}"), &r, 1.0 - eta, SE_TOLERANCE));
        checks.push(Check::new(
            format!("runtime at eta = {eta}"),
            elapsed < NRF_RUNTIME_LIMIT_S,
            format!("{elapsed:.2} s"),
        ));
    }
    Ok(checks)
}

fn geometry_model(seed: impl Fn(u64) -> u64) -> Result<Vec<Check>> {
    let (mu, eta) = (0.5, 0.8);
    let mut checks = Vec::new();
    let mut i = 0;
    for x in [3.0, 6.0, 12.0] {
        for d in [0.0, 0.25] {
            let layout = ModeLayout::dimensionless(x, d, 0.5)?;
            let a = collection_efficiency(&layout, mu)?.value;
            let fs = simulate_layout_frames(&layout, mu, eta, eta, 64, 64, 100, seed(i))?;
            let (sigma, se) = pooled_sigma(&fs, 20);
            let r = EstimateReport::new(crate::estimators::EstimatorKind::Nrf, sigma, se, fs.frames());
            checks.push(Check::within_se(format!("sigma at X = {x}, D = {d}"), &r, predicted_nrf(eta, a)?, SE_TOLERANCE));
            i += 1;
        }
    }
    // Binning trade-off with edge-shared modes.
    let model = EdgeSharedModel { x: 3, mu, eta };
    let base = model.simulate(48, 48, 100, seed(i))?;
    let mut previous = f64::INFINITY;
    let mut trend = Vec::new();
    for d in [1, 2, 3, 4, 6] {
        let (sigma, se) = pooled_sigma(&base.bin(d)?, 20);
        let r = EstimateReport::new(crate::estimators::EstimatorKind::Nrf, sigma, se, base.frames());
        checks.push(Check::within_se(format!("binned sigma at d = {d}"), &r, model.binned_nrf(d), SE_TOLERANCE));
        trend.push((sigma, previous));
        previous = sigma;
    }
    let decreasing = trend.iter().all(|(s, p)| s < p);
    let values: Vec<String> = trend.iter().map(|(s, _)| format!("{s:.4}")).collect();
    checks.push(Check::new("sigma decreases with binned pixel size", decreasing, values.join(" > ")));
    Ok(checks)
}

fn qi_crossing(points: &[(f64, f64)]) -> Option<f64> {
    points.windows(2).find(|w| w[0].1 >= 1.0 && w[1].1 < 1.0).map(|w| {
        let ((x0, e0), (x1, e1)) = (w[0], w[1]);
        let t = (e0 - 1.0) / (e0 - e1);
        (x0.ln() + t * (x1.ln() - x0.ln())).exp()
    })
}

fn cauchy_schwarz_checks(seed: impl Fn(u64) -> u64) -> Result<Vec<Check>> {
    let mu = 0.1;
    let det = DetectorSpec::ideal(0.9, 1, 1)?;
    let mut checks = Vec::new();
    let cases = [
        ("twin beam", SourceSpec::twin_beam(mu, 1)?, ImagingScheme::Ssn, 1.0 / mu + 1.0),
        ("split thermal", SourceSpec::split_thermal_matched(mu, 1)?, ImagingScheme::DifferentialClassical, 1.0),
    ];
    for (i, (label, source, scheme, target)) in cases.into_iter().enumerate() {
        let fs = simulate_imaging(&source, None, &det, scheme, 1_000_000, seed(i as u64))?;
        let (a, b) = pixel_pair(&fs);
        match cauchy_schwarz(&a, &b)?.report() {
            Some(r) => checks.push(Check::within_se(format!("epsilon, {label}"), r, target, SE_TOLERANCE)),
            None => checks.push(Check::new(format!("epsilon, {label}"), false, "sub-Poissonian marginal")),
        }
    }
    let scenario = QiScenario {
        source: SourceKind::TwinBeam,
        n: 1.0,
        modes: 10,
        n_b: 1.0,
        m_b: 100.0,
        eta_p: 0.5,
        eta_r: 1.0,
        target_present: true,
        k_pixels: 1,
    };
    let mut points = Vec::new();
    for (i, n_b) in [2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0].into_iter().enumerate() {
        let samples = sample_qi(&scenario.with_background(n_b), 200_000, 20, seed(10 + i as u64))?;
        points.push((n_b, samples.cauchy_schwarz(1).value));
    }
    let boundary = nonclassicality_boundary(&scenario)?;
    let detail = points.iter().map(|(n, e)| format!("{n}:{e:.3}")).collect::<Vec<_>>().join(" ");
    match qi_crossing(&points) {
        Some(c) => {
            let factor = (c / boundary.simplified).max(boundary.simplified / c);
            checks.push(Check::new(
                "epsilon_QI crosses 1 near the boundary",
                factor <= BOUNDARY_FACTOR,
                format!(
                    "crossing n_B = {c:.2}, boundary {:.2} (exact {:.2}), factor {factor:.3}; {detail}",
                    boundary.simplified, boundary.exact
                ),
            ));
        }
        None => checks.push(Check::new("epsilon_QI crosses 1 near the boundary", false, format!("no crossing: {detail}"))),
    }
    Ok(checks)
}

struct ImagingCase {
    scheme: ImagingScheme,
    source: SourceSpec,
    eta: f64,
}

impl ImagingCase {
    /// Measured and predicted Δα at absorption `alpha`.
    fn delta_alpha(&self, alpha: f64, frames: usize, seed: u64) -> Result<(f64, f64)> {
        let det = DetectorSpec::ideal(self.eta, 16, 16)?;
        let object = AbsorptionObject::uniform(16, 16, alpha)?;
        let fs = simulate_imaging(&self.source, Some(&object), &det, self.scheme, frames, seed)?;
        let cal = simulate_imaging(&self.source, None, &det, self.scheme, frames, seed.wrapping_add(1))?;
        let measured = measured_alpha_uncertainty(&fs, &cal, self.scheme)?.value;
        let m = self.source.detected_moments(self.eta, self.eta);
        let sigma = if self.scheme == ImagingScheme::Direct { 0.0 } else { m.nrf() };
        let predicted = predicted_alpha_uncertainty(self.scheme, alpha, m.fano(0), sigma, m.mean1)?;
        Ok((measured, predicted))
    }
}

fn absorption_imaging(seed: impl Fn(u64) -> u64) -> Result<Vec<Check>> {
    let (modes, mean_n, frames) = (20u32, 1000.0, 1000);
    let occupation = |eta: f64| mean_n / (eta * modes as f64);
    let cases = [
        ("direct", ImagingCase { scheme: ImagingScheme::Direct, source: SourceSpec::coherent(occupation(1.0), modes)?, eta: 1.0 }),
        (
            "differential classical",
            ImagingCase {
                scheme: ImagingScheme::DifferentialClassical,
                source: SourceSpec::split_thermal_matched(occupation(0.2), modes)?,
                eta: 0.2,
            },
        ),
        ("ssn sigma=0.8", ImagingCase { scheme: ImagingScheme::Ssn, source: SourceSpec::twin_beam(occupation(0.2), modes)?, eta: 0.2 }),
        ("ssn sigma=0.4", ImagingCase { scheme: ImagingScheme::Ssn, source: SourceSpec::twin_beam(occupation(0.6), modes)?, eta: 0.6 }),
    ];
    let mut checks = Vec::new();
    let mut weak = Vec::new();
    let mut i = 0;
    for (label, case) in &cases {
        for alpha in [0.01, 0.3] {
            let (measured, predicted) = case.delta_alpha(alpha, frames, seed(2 * i))?;
            checks.push(Check::relative(format!("delta alpha, {label}, alpha = {alpha}"), measured, predicted, ABSORPTION_REL_TOL));
            if alpha == 0.01 {
                weak.push(measured);
            }
            i += 1;
        }
    }
    for (k, sigma) in [(2, 0.8), (3, 0.4)] {
        checks.push(Check::relative(
            format!("ssn/dc ratio at sigma = {sigma}"),
            weak[k] / weak[1],
            f64::sqrt(sigma),
            ABSORPTION_REL_TOL,
        ));
        checks.push(Check::relative(
            format!("ssn/direct ratio at sigma = {sigma}"),
            weak[k] / weak[0],
            f64::sqrt(2.0 * sigma),
            ABSORPTION_REL_TOL,
        ));
    }

    // A faint mask at about 7000 photons per pixel, 300 frames.
    let (side, eta) = (48u32, 0.2);
    let source = SourceSpec::twin_beam(7000.0 / (eta * modes as f64), modes)?;
    let det = DetectorSpec::ideal(eta, side, side)?;
    let mask = phi_mask(side, side);
    let object = AbsorptionObject::from_mask(side, side, &mask, 0.01)?;
    let detect = |scheme: ImagingScheme, d: usize, s: u64| -> Result<f64> {
        let fs = simulate_imaging(&source, Some(&object), &det, scheme, 300, s)?;
        let cal = simulate_imaging(&source, None, &det, scheme, 300, s.wrapping_add(1))?;
        let image = estimate_alpha(&fs, &cal, scheme, d)?;
        let region: Vec<bool> = object.binned(d)?.iter().map(|&a| a >= 0.005).collect();
        Ok(image.median_z(&region).unwrap_or(0.0))
    };
    let z_ssn = detect(ImagingScheme::Ssn, 3, seed(100))?;
    let z_direct = detect(ImagingScheme::Direct, 1, seed(102))?;
    checks.push(Check::new("mask visible in ssn at d = 3", z_ssn >= DETECTION_Z, format!("median z = {z_ssn:.2}")));
    checks.push(Check::new("mask not visible in direct at d = 1", z_direct < DETECTION_Z, format!("median z = {z_direct:.2}")));
    Ok(checks)
}

/// Weighted least-squares slope of y against x, with its standard error.
fn weighted_slope(points: &[(f64, f64, f64)]) -> (f64, f64) {
    let w: Vec<f64> = points.iter().map(|p| 1.0 / (p.2 * p.2)).collect();
    let sw: f64 = w.iter().sum();
    let mx = points.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let my = points.iter().zip(&w).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.0 - mx) * (p.1 - my)).sum();
    (sxy / sxx, (1.0 / sxx).sqrt())
}

fn quantum_illumination(seed: impl Fn(u64) -> u64) -> Result<Vec<Check>> {
    let base = QiScenario {
        source: SourceKind::TwinBeam,
        n: 1.0,
        modes: 10,
        n_b: 10.0,
        m_b: 1000.0,
        eta_p: 1.0,
        eta_r: 1.0,
        target_present: true,
        k_pixels: 1,
    };
    let mut checks = Vec::new();
    let mut points = Vec::new();
    // Thermal-light SNR shrinks with n_B, so it gets the larger sample.
    for (i, (n_b, thermal_samples)) in [(10.0, 2_000_000), (30.0, 5_000_000), (100.0, 12_000_000)].into_iter().enumerate() {
        let s = base.with_background(n_b);
        let twb = sample_qi(&s, 1_000_000, 64, seed(2 * i as u64))?.snr_per_sample();
        let th = sample_qi(&s.with_source(SourceKind::SplitThermal), thermal_samples, 64, seed(2 * i as u64 + 1))?
            .snr_per_sample();
        let ratio = ratio_report(&twb, &th);
        let target = predicted_qi_snr(&s, 1.0)?.ratio;
        let mut c = Check::relative(format!("snr ratio at n_B = {n_b}"), ratio.value, target, QI_RATIO_REL_TOL);
        c.detail = format!("{} (± {:.3})", c.detail, ratio.standard_error);
        checks.push(c);
        points.push((f64::ln(n_b), ratio.value, ratio.standard_error));
    }
    let (slope, se) = weighted_slope(&points);
    checks.push(Check::new(
        "ratio constant in n_B",
        (slope / se).abs() <= SLOPE_SE_TOLERANCE,
        format!("slope {slope:+.3} ± {se:.3} per ln n_B"),
    ));
    Ok(checks)
}

fn ghost_imaging(seed: impl Fn(u64) -> u64) -> Result<Vec<Check>> {
    let object = GiObject::bar(32, 32, 0.25, 1.0, 0.0)?;
    let lv = object.levels().expect("two-level object");
    let mut checks = Vec::new();
    let mut i = 0;
    for (mu, frames) in [(0.1, 200_000), (5.0, 20_000)] {
        let pred = predicted_gi_snr(&object, mu, 1, 1.0, frames)?;
        let mut measured = Vec::new();
        for (label, source, target) in [
            ("twin beam", SourceSpec::twin_beam(mu, 1)?, pred.snr_spdc),
            ("thermal", SourceSpec::split_thermal_matched(mu, 1)?, pred.snr_th),
        ] {
            let image = simulate_gi_streaming(&source, &object, 1.0, frames, seed(i))?.reconstruct()?;
            let snr = measure_gi_snr(&image, &object)?.snr;
            let mut c = Check::relative(format!("snr, {label}, mu = {mu}"), snr.value, target, GI_SNR_REL_TOL);
            c.detail = format!("{} (± {:.3})", c.detail, snr.standard_error);
            checks.push(c);
            measured.push(snr);
            i += 1;
        }
        let g = ratio_report(&measured[0], &measured[1]);
        let mut c = Check::relative(format!("gain at mu = {mu}"), g.value, 1.0 / mu + 1.0, GI_SNR_REL_TOL);
        c.detail = format!("{} (± {:.3})", c.detail, g.standard_error);
        checks.push(c);
    }
    let frames = 20_000;
    let limit = (frames as f64 / (2.0 * lv.r_plus as f64)).sqrt();
    for (label, source) in [("twin beam", SourceSpec::twin_beam(50.0, 1)?), ("thermal", SourceSpec::split_thermal_matched(50.0, 1)?)] {
        let image = simulate_gi_streaming(&source, &object, 1.0, frames, seed(i))?.reconstruct()?;
        let snr = measure_gi_snr(&image, &object)?.snr;
        checks.push(Check::relative(format!("large-mu limit, {label}"), snr.value, limit, GI_LIMIT_REL_TOL));
        i += 1;
    }
    Ok(checks)
}

fn calibration_closures(seed: impl Fn(u64) -> u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let eta1 = 0.6;
    let mut klyshko = Vec::new();
    for (i, eta2) in [0.1, 0.9].into_iter().enumerate() {
        let setup = KlyshkoSetup { eta1, eta2, tau: 0.98, pair_rate: 1e-3, dut_dark: 1e-5, trigger_dark: 1e-5 };
        let r = klyshko_efficiency(&simulate_klyshko(&setup, 1_000_000, seed(i as u64))?)?.eta;
        let mut c = Check::relative(format!("klyshko eta1 with trigger eta2 = {eta2}"), r.value, eta1, KLYSHKO_REL_TOL);
        c.detail = format!("{} (± {:.5})", c.detail, r.standard_error);
        checks.push(c);
        klyshko.push(r);
    }
    let diff = klyshko[0].value - klyshko[1].value;
    let se = klyshko[0].standard_error.hypot(klyshko[1].standard_error);
    checks.push(Check::new(
        "klyshko independent of trigger efficiency",
        diff.abs() <= SE_TOLERANCE * se,
        format!("difference {diff:+.5} ± {se:.5}"),
    ));

    let gamma = 0.6;
    let setup = PnrSetup {
        gamma,
        xi: 0.9,
        background: Background::Poisson { mean: 0.7 },
        heralded_events: 1_000_000,
        unheralded_events: 1_000_000,
    };
    let pnr = pnr_efficiencies(&simulate_pnr(&setup, seed(10))?, None, 0.5)?;
    let usable = pnr.usable().count();
    checks.push(Check::new(
        "pnr peak estimates consistent",
        usable >= 2 && pnr.p_value >= PNR_MIN_P_VALUE,
        format!("{usable} usable peaks, chi2 = {:.2} on {} dof, p = {:.3}", pnr.chi_square, pnr.dof, pnr.p_value),
    ));
    match &pnr.combined {
        Some(r) => checks.push(Check::within_se("pnr combined gamma", r, gamma, PNR_SE_TOLERANCE)),
        None => checks.push(Check::new("pnr combined gamma", false, "no usable peaks")),
    }
    for r in pnr.usable() {
        checks.push(Check::within_se(format!("pnr gamma from peak {}", pnr_index(&pnr, r)), r, gamma, PNR_SE_TOLERANCE));
    }

    let (mu, eta1, eta2) = (0.5, 0.55, 0.45);
    let layout = ModeLayout::dimensionless(8.0, 0.0, 0.5)?;
    let fs = simulate_layout_frames(&layout, mu, eta1, eta2, 4, 4, 20_000, seed(20))?;
    let cal = analog_calibration(&fs, &layout, mu, 32)?;
    let mut c = Check::relative("analog eta1", cal.eta.value, eta1, ANALOG_REL_TOL);
    c.detail = format!("{} (± {:.5}, A = {:.4})", c.detail, cal.eta.standard_error, cal.collection_efficiency);
    checks.push(c);

    let em = EmGainModel { gain: 100.0, read_noise: 10.0 };
    let setup = EmccdSetup {
        layout,
        mu: 0.1,
        eta0: 0.5,
        em,
        region_side: 32,
        regions: 16,
        thresholds: vec![30.0, 40.0, 50.0, 60.0, 80.0, 100.0],
        analog_read_noise: 0.0,
    };
    let table = simulate_click_table(&setup, 100_000, 20_000, 32, seed(30))?;
    let a = collection_efficiency(&setup.layout, setup.mu)?.value;
    let curve = emccd_threshold_calibration(&table, a)?;
    for p in &curve.curve {
        let target = predicted_click_efficiency(setup.eta0, em, p.threshold)?;
        match &p.eta {
            Some(r) => {
                let mut c = Check::relative(format!("emccd eta at T = {}", p.threshold), r.value, target, EMCCD_REL_TOL);
                c.detail = format!("{} (± {:.5})", c.detail, r.standard_error);
                checks.push(c);
            }
            None => checks.push(Check::new(
                format!("emccd eta at T = {}", p.threshold),
                false,
                p.rejected.clone().unwrap_or_default(),
            )),
        }
    }
    checks.push(Check::new("emccd eta non-increasing in T", curve.is_monotone(0.0), "strict comparison of point values"));
    Ok(checks)
}

fn pnr_index(result: &crate::calibration::PnrResult, r: &EstimateReport) -> usize {
    result.peaks.iter().find(|p| p.estimate.as_ref() == Some(r)).map_or(0, |p| p.index)
}

fn exact_oracle() -> Result<Vec<Check>> {
    let n_max = 80;
    let mut checks = Vec::new();
    let mut record = |label: String, value: f64, target: f64| {
        let err = (value - target).abs();
        checks.push(Check::new(label, err <= EXACT_TOL, format!("{value:.10} vs {target:.10} (|diff| {err:.1e})")));
    };
    for (mu, modes) in [(0.1, 10), (0.5, 4), (1.0, 4)] {
        for (eta1, eta2) in [(0.9, 0.9), (0.7, 0.4)] {
            let tag = format!("mu = {mu}, M = {modes}, eta = ({eta1}, {eta2})");
            let twb = SourceSpec::twin_beam(mu, modes)?;
            let pmf = detected_joint_pmf(&twb, eta1, eta2, n_max);
            let m = pmf.moments();
            let c = twb.detected_moments(eta1, eta2);
            record(format!("twin-beam normalization, {tag}"), pmf.total(), 1.0);
            record(format!("twin-beam covariance, {tag}"), m.cov, c.cov);
            record(format!("twin-beam fano, {tag}"), m.fano(0), 1.0 + eta1 * mu);
            record(format!("twin-beam sigma, {tag}"), m.nrf(), twb_nrf(mu, eta1, eta2));
            record(format!("twin-beam sigma_alpha, {tag}"), m.nrf_alpha(eta1 / eta2), (1.0 + eta1 / eta2) / 2.0 - eta1);
            match m.cauchy_schwarz() {
                Ok(e) => record(format!("twin-beam epsilon, {tag}"), e, 1.0 / mu + 1.0),
                Err(_) => record(format!("twin-beam epsilon, {tag}"), f64::NAN, 1.0 / mu + 1.0),
            }

            let th = SourceSpec::split_thermal_matched(mu / 2.0, modes)?;
            let pmf = detected_joint_pmf(&th, eta1, eta2, n_max);
            let m = pmf.moments();
            let c = th.detected_moments(eta1, eta2);
            record(format!("split-thermal covariance, {tag}"), m.cov, c.cov);
            record(format!("split-thermal fano, {tag}"), m.fano(1), 1.0 + eta2 * mu / 2.0);
            match m.cauchy_schwarz() {
                Ok(e) => record(format!("split-thermal epsilon, {tag}"), e, 1.0),
                Err(_) => record(format!("split-thermal epsilon, {tag}"), f64::NAN, 1.0),
            }
            if eta1 == eta2 {
                record(format!("split-thermal sigma, {tag}"), m.nrf(), 1.0);
            }

            let coh = SourceSpec::coherent(mu, modes)?;
            let m = detected_joint_pmf(&coh, eta1, eta2, n_max).moments();
            record(format!("coherent fano, {tag}"), m.fano(0), 1.0);
            record(format!("coherent covariance, {tag}"), m.cov, 0.0);
            record(format!("coherent sigma, {tag}"), m.nrf(), 1.0);
        }
    }
    Ok(checks)
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| crate::Error::Data(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Everything the suite compares across thread counts, as JSON.
fn fingerprint(seed: impl Fn(u64) -> u64) -> Result<(FrameSet, String)> {
    let source = SourceSpec::twin_beam(0.5, 4)?;
    let det = DetectorSpec::ideal(0.7, 8, 8)?;
    let frames = simulate_imaging(&source, None, &det, ImagingScheme::Ssn, 300, seed(0))?;
    let object = GiObject::bar(8, 8, 0.5, 1.0, 0.2)?;
    let gi = simulate_gi_streaming(&source, &object, 0.8, 1000, seed(1))?.reconstruct()?;
    let qi = QiScenario {
        source: SourceKind::TwinBeam,
        n: 1.0,
        modes: 10,
        n_b: 10.0,
        m_b: 100.0,
        eta_p: 0.5,
        eta_r: 1.0,
        target_present: true,
        k_pixels: 1,
    };
    let qi = sample_qi(&qi, 20_000, 8, seed(2))?.snr_per_sample();
    let klyshko = simulate_klyshko(
        &KlyshkoSetup { eta1: 0.6, eta2: 0.3, tau: 0.98, pair_rate: 1e-3, dut_dark: 1e-4, trigger_dark: 1e-4 },
        200_000,
        seed(3),
    )?;
    let layout = ModeLayout::dimensionless(4.0, 0.0, 0.5)?;
    let emccd = EmccdSetup {
        layout,
        mu: 0.2,
        eta0: 0.5,
        em: EmGainModel { gain: 100.0, read_noise: 10.0 },
        region_side: 8,
        regions: 2,
        thresholds: vec![30.0, 60.0],
        analog_read_noise: 2.0,
    };
    let table = simulate_click_table(&emccd, 2000, 500, 4, seed(4))?;
    let curve = emccd_threshold_calibration(&table, collection_efficiency(&layout, 0.2)?.value)?;
    let json = serde_json::json!({ "gi": gi, "qi": qi, "klyshko": klyshko, "emccd": curve });
    Ok((frames, json.to_string()))
}

fn determinism(seed: impl Fn(u64) -> u64 + Sync) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let (f1, j1) = with_threads(1, || fingerprint(&seed))?;
    let (f4, j4) = with_threads(4, || fingerprint(&seed))?;
    checks.push(Check::new("frames identical for 1 and 4 threads", f1 == f4, format!("{} frames", f1.frames())));
    checks.push(Check::new("estimates identical for 1 and 4 threads", j1 == j4, format!("{} bytes of JSON", j1.len())));

    let analog = apply_read_noise(&f1, 3.0, seed(9))?;
    for (label, fs) in [("counts", &f1), ("analog", &analog)] {
        let bytes = to_bytes(fs)?;
        let again = to_bytes(&from_bytes(&bytes)?)?;
        let path = std::env::temp_dir().join(format!("twinlab-verify-{}-{label}.twbf", std::process::id()));
        save(&from_bytes(&bytes)?, &path)?;
        let on_disk = std::fs::read(&path)?;
        let loaded = load(&path)?;
        let _ = std::fs::remove_file(&path);
        let exact = bytes == again && bytes == on_disk && to_bytes(&loaded)? == bytes;
        checks.push(Check::new(format!("byte-exact round trip, {label}"), exact, format!("{} bytes", bytes.len())));
    }
    Ok(checks)
}
