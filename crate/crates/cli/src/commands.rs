//! Subcommand implementations on top of the core library.

use twinlab_core::calibration::analog::analog_calibration;
use twinlab_core::calibration::emccd::{
    emccd_threshold_calibration, predicted_click_efficiency, simulate_click_table, simulate_emccd_frames,
};
use twinlab_core::calibration::klyshko::{klyshko_efficiency, simulate_klyshko};
use twinlab_core::calibration::pnr::{pnr_efficiencies, simulate_pnr};
use twinlab_core::detector::{apply_read_noise, DetectorSpec};
use serde_json::Value;
use twinlab_core::estimators::{self, CauchySchwarz, EstimateReport, EstimatorError, SampleSeries};
use twinlab_core::frames::FrameSet;
use twinlab_core::geometry::{collection_efficiency, simulate_layout_frames, EdgeSharedModel, ModeLayout};
use twinlab_core::ghost::{measure_gi_snr, predicted_gi_snr, simulate_gi, GiObject, GiRun};
use twinlab_core::imaging::{
    binning_sweep, estimate_alpha, measured_alpha_uncertainty, phi_mask, pi_mask, pooled_sigma,
    predicted_alpha_uncertainty, simulate_imaging, snr_ratio, AbsorptionObject, ImagingScheme,
};
use twinlab_core::io::config::{CalibrationConfig, GhostConfig, ImagingConfig, MaskKind, SweepAxis};
use twinlab_core::io::{ExperimentConfig, Protocol};
use twinlab_core::moments::PairMoments;
use twinlab_core::photon::{SourceKind, SourceSpec};
use twinlab_core::qi::{
    nonclassicality_boundary, predicted_qi_snr, ratio_report, sample_qi, simulate_qi_frames, violates_classical_bound,
    QiScenario,
};
use twinlab_core::{Error, Result};

use crate::table::{int, num, opt, text, Table};

/// Independent seed for the i-th auxiliary run of one configuration.
fn point_seed(seed: u64, i: u64) -> u64 {
    seed ^ (i + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn need<T>(section: Option<T>, name: &str) -> Result<T> {
    section.ok_or_else(|| Error::Config(format!("this command needs a [{name}] section")))
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

fn absorption_object(det: &DetectorSpec, im: &ImagingConfig) -> Result<AbsorptionObject> {
    let (w, h) = (det.width, det.height);
    match im.mask {
        MaskKind::Uniform => AbsorptionObject::uniform(w, h, im.alpha),
        MaskKind::Phi => AbsorptionObject::from_mask(w, h, &phi_mask(w, h), im.alpha),
        MaskKind::Pi => AbsorptionObject::from_mask(w, h, &pi_mask(w, h), im.alpha),
    }
}

fn ghost_object(g: &GhostConfig) -> Result<GiObject> {
    GiObject::bar(g.width, g.height, g.fraction, g.t_plus, g.t_minus)
}

/// The two-channel scheme a source supports.
fn pair_scheme(kind: SourceKind) -> ImagingScheme {
    match kind {
        SourceKind::TwinBeam => ImagingScheme::Ssn,
        _ => ImagingScheme::DifferentialClassical,
    }
}

/// Two-channel frames with no object: region pairs of the layout when one is
/// given, otherwise independent pixel pairs.
fn pair_frames(
    geometry: Option<ModeLayout>,
    src: &SourceSpec,
    det: &DetectorSpec,
    frames: usize,
    seed: u64,
) -> Result<FrameSet> {
    match geometry {
        Some(layout) => {
            if src.kind != SourceKind::TwinBeam {
                return config_err("a [geometry] section needs a twin-beam source");
            }
            let eta = det.efficiency;
            simulate_layout_frames(&layout, src.mu.value(), eta, eta, det.width, det.height, frames, seed)
        }
        None => simulate_imaging(src, None, det, pair_scheme(src.kind), frames, seed),
    }
}

/// Closed-form statistics of one detected pixel pair.
#[derive(Debug, Clone, Copy)]
struct PairPrediction {
    /// Full moments; unknown for region pairs, whose mode count the layout
    /// sets.
    moments: Option<PairMoments>,
    fano: f64,
    sigma: f64,
}

fn pair_prediction(geometry: Option<ModeLayout>, src: &SourceSpec, eta: f64) -> Result<PairPrediction> {
    let m = src.detected_moments(eta, eta);
    Ok(match geometry {
        Some(layout) => PairPrediction {
            moments: None,
            fano: 1.0 + eta * src.mu.value(),
            sigma: 1.0 - eta * collection_efficiency(&layout, src.mu.value())?.value,
        },
        None => PairPrediction { moments: Some(m), fano: m.fano(0), sigma: m.nrf() },
    })
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<FrameSet> {
    let (k, seed) = (cfg.frames, cfg.seed);
    let fs = match cfg.protocol {
        Protocol::Imaging => {
            let (src, det, im) = (need(cfg.source, "source")?, need(cfg.detector, "detector")?, need(cfg.imaging, "imaging")?);
            simulate_imaging(&src, Some(&absorption_object(&det, &im)?), &det, im.scheme, k, seed)?
        }
        Protocol::Statistics => {
            pair_frames(cfg.geometry, &need(cfg.source, "source")?, &need(cfg.detector, "detector")?, k, seed)?
        }
        Protocol::Ghost => {
            let g = need(cfg.ghost, "ghost")?;
            simulate_gi(&need(cfg.source, "source")?, &ghost_object(&g)?, g.t1, k, seed)?.frames
        }
        Protocol::Qi => simulate_qi_frames(&need(cfg.qi, "qi")?, k, seed)?,
        Protocol::Calibration => match need(cfg.calibration.clone(), "calibration")? {
            CalibrationConfig::Analog { layout, mu, eta1, eta2, width, height, read_noise } => {
                let fs = simulate_layout_frames(&layout, mu, eta1, eta2, width, height, k, seed)?;
                if read_noise > 0.0 {
                    apply_read_noise(&fs, read_noise, point_seed(seed, 0))?
                } else {
                    fs
                }
            }
            CalibrationConfig::Emccd { setup, .. } => simulate_emccd_frames(&setup, k, false, seed)?,
            _ => return config_err("klyshko and pnr calibrations record counts, not frames; use `calibrate`"),
        },
    };
    Ok(fs.with_config_hash(cfg.hash()))
}

const ESTIMATE_COLUMNS: [&str; 6] = ["estimator", "scope", "value", "standard_error", "prediction", "samples"];

/// An estimator that is undefined on these data becomes an empty row.
fn estimate_or_note(
    t: &mut Table,
    estimator: &str,
    scope: &str,
    r: std::result::Result<EstimateReport, EstimatorError>,
    prediction: Option<f64>,
) {
    match r {
        Ok(r) => estimate_row(t, scope, &prediction.map_or(r, |p| r.with_prediction(p))),
        Err(e) => undefined_row(t, estimator, &format!("{scope}, undefined: {e}")),
    }
}

fn undefined_row(t: &mut Table, estimator: &str, scope: &str) {
    t.push(vec![text(estimator), text(scope), Value::Null, Value::Null, Value::Null, Value::Null]);
}

fn estimate_row(t: &mut Table, scope: &str, r: &EstimateReport) {
    let name = serde_json::to_value(r.name).unwrap_or_default();
    t.push(vec![
        name,
        text(scope),
        num(r.value),
        num(r.standard_error),
        opt(r.analytic_prediction),
        int(r.sample_size as u64),
    ]);
}

/// Closed-form predictions for a pixel pair of a configured run, if any.
fn frame_prediction(cfg: Option<&ExperimentConfig>) -> Result<Option<PairPrediction>> {
    let Some(cfg) = cfg else { return Ok(None) };
    match (cfg.protocol, cfg.source, cfg.detector) {
        (Protocol::Statistics, Some(src), Some(det)) => Ok(Some(pair_prediction(cfg.geometry, &src, det.efficiency)?)),
        _ => Ok(None),
    }
}

/// Generic per-frame statistics plus protocol-specific estimates when the
/// generating configuration is supplied.
pub fn estimate(fs: &FrameSet, cfg: Option<&ExperimentConfig>, blocks: usize) -> Result<Table> {
    let mut t = Table::new(&ESTIMATE_COLUMNS);
    let k = fs.frames();
    let pred = frame_prediction(cfg)?;
    let moments = pred.and_then(|p| p.moments);
    let series = |c: usize| SampleSeries::new(fs.pixel_series(c, 0), format!("channel {c}")).at_pixel(0);
    for c in 0..fs.channels() {
        let total: f64 = fs.channel_totals(c).iter().sum();
        t.push(vec![
            text("mean"),
            text(format!("channel {c}, per pixel")),
            num(total / (k * fs.pixels()) as f64),
            Value::Null,
            opt(moments.map(|m| m.mean(c))),
            int((k * fs.pixels()) as u64),
        ]);
        let scope = format!("channel {c}, pixel 0");
        estimate_or_note(&mut t, "fano", &scope, estimators::fano(&series(c)), pred.map(|p| p.fano));
    }
    if fs.channels() >= 2 {
        let (a, b) = (series(0), series(1));
        let (sigma, se) = pooled_sigma(fs, blocks);
        t.push(vec![
            text("nrf"),
            text("pooled over pixels"),
            num(sigma),
            num(se),
            opt(pred.map(|p| p.sigma)),
            int((k * fs.pixels()) as u64),
        ]);
        estimate_or_note(&mut t, "nrf", "pixel 0", estimators::nrf(&a, &b), None);
        estimate_or_note(&mut t, "nrf-alpha", "pixel 0", estimators::nrf_alpha(&a, &b, None).map(|r| r.0), None);
        let qi_cov = cfg.and_then(|c| c.qi).map(|q| if q.target_present { q.predicted_covariance() } else { 0.0 });
        let cov_pred = moments.map(|m| m.cov).or(qi_cov);
        estimate_or_note(&mut t, "covariance", "pixel 0", estimators::covariance(&a, &b), cov_pred);
        match estimators::cauchy_schwarz(&a, &b) {
            Ok(CauchySchwarz::Defined(r)) => estimate_row(&mut t, "pixel 0", &r),
            Ok(CauchySchwarz::SubPoissonianMarginal { channel, .. }) => {
                undefined_row(&mut t, "cauchy-schwarz", &format!("pixel 0, undefined: channel {channel} is sub-Poissonian"))
            }
            Err(e) => undefined_row(&mut t, "cauchy-schwarz", &format!("pixel 0, undefined: {e}")),
        }
    }
    if let Some(cfg) = cfg {
        match cfg.protocol {
            Protocol::Ghost => ghost_estimates(&mut t, fs, cfg)?,
            Protocol::Imaging => imaging_estimates(&mut t, fs, cfg)?,
            _ => {}
        }
    }
    Ok(t)
}

fn ghost_estimates(t: &mut Table, fs: &FrameSet, cfg: &ExperimentConfig) -> Result<()> {
    let (src, g) = (need(cfg.source, "source")?, need(cfg.ghost, "ghost")?);
    let object = ghost_object(&g)?;
    let bucket = fs.channel_totals(1).into_iter().map(|b| b as u64).collect();
    let run = GiRun { frames: fs.clone(), bucket, source: src, t1: g.t1 };
    let snr = measure_gi_snr(&run.reconstruct()?, &object)?.snr;
    let p = predicted_gi_snr(&object, src.mu.value(), src.modes_per_pixel, g.t1, fs.frames())?;
    let target = if src.kind == SourceKind::TwinBeam { p.snr_spdc } else { p.snr_th };
    estimate_row(t, "ghost image", &snr.with_prediction(target));
    Ok(())
}

fn imaging_estimates(t: &mut Table, fs: &FrameSet, cfg: &ExperimentConfig) -> Result<()> {
    let (src, det, im) = (need(cfg.source, "source")?, need(cfg.detector, "detector")?, need(cfg.imaging, "imaging")?);
    let object = absorption_object(&det, &im)?;
    let cal_frames = im.calibration_frames.unwrap_or(cfg.frames);
    let cal = simulate_imaging(&src, None, &det, im.scheme, cal_frames, point_seed(cfg.seed, 0))?;
    let image = estimate_alpha(fs, &cal, im.scheme, im.binning)?;
    let inside: Vec<usize> = (0..object.pixels()).filter(|&p| object.alpha[p] > 0.0).collect();
    if im.binning == 1 && !inside.is_empty() {
        let n = inside.len() as f64;
        let mean = inside.iter().map(|&p| image.alpha[p]).sum::<f64>() / n;
        let se = inside.iter().map(|&p| image.standard_error[p].powi(2)).sum::<f64>().sqrt() / n;
        t.push(vec![
            text("alpha"),
            text("absorbing pixels"),
            num(mean),
            num(se),
            num(im.alpha),
            int(inside.len() as u64 * fs.frames() as u64),
        ]);
    }
    if im.mask == MaskKind::Uniform {
        let m = src.detected_moments(det.efficiency, det.efficiency);
        let pred = predicted_alpha_uncertainty(im.scheme, im.alpha, m.fano(0), m.nrf(), m.mean1)?;
        let r = measured_alpha_uncertainty(fs, &cal, im.scheme)?.with_prediction(pred);
        estimate_row(t, "single frame", &r);
    }
    Ok(())
}

fn sweep_values(cfg: &ExperimentConfig, allowed: &[SweepAxis]) -> Result<Option<(SweepAxis, Vec<f64>)>> {
    match &cfg.sweep {
        Some(s) if allowed.contains(&s.axis) => Ok(Some((s.axis, s.values.clone()))),
        Some(s) => config_err(format!("sweep axis {:?} does not apply to this protocol", s.axis)),
        None => Ok(None),
    }
}

fn binning_factors(values: &[f64]) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|&v| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                config_err(format!("binning factor {v} is not a positive integer"))
            }
        })
        .collect()
}

fn edge_model(cfg: &ExperimentConfig, src: &SourceSpec, det: &DetectorSpec) -> Result<EdgeSharedModel> {
    if src.kind != SourceKind::TwinBeam {
        return config_err("binning sweeps need a twin-beam source");
    }
    let x = cfg.geometry.map_or(3.0, |g| g.x().round()).max(2.0) as u32;
    Ok(EdgeSharedModel { x, mu: src.mu.value(), eta: det.efficiency })
}

fn with_mu(src: &SourceSpec, mu: f64) -> Result<SourceSpec> {
    SourceSpec::new(src.kind, mu, src.modes_per_pixel, src.splitter_tau)
}

fn with_eta(det: &DetectorSpec, eta: f64) -> Result<DetectorSpec> {
    let d = DetectorSpec { efficiency: eta, ..*det };
    d.validate()?;
    Ok(d)
}

pub fn predict(cfg: &ExperimentConfig) -> Result<Table> {
    match cfg.protocol {
        Protocol::Qi => predict_qi(cfg),
        Protocol::Ghost => predict_ghost(cfg),
        Protocol::Imaging | Protocol::Statistics => predict_pairs(cfg),
        Protocol::Calibration => predict_calibration(cfg),
    }
}

fn predict_qi(cfg: &ExperimentConfig) -> Result<Table> {
    let base = need(cfg.qi, "qi")?;
    let scenarios: Vec<QiScenario> = match sweep_values(cfg, &[SweepAxis::Background, SweepAxis::Eta, SweepAxis::Mu])? {
        Some((SweepAxis::Background, v)) => v.iter().map(|&n_b| base.with_background(n_b)).collect(),
        Some((SweepAxis::Eta, v)) => v.iter().map(|&eta_p| QiScenario { eta_p, ..base }).collect(),
        Some((_, v)) => v.iter().map(|&mu| QiScenario { n: mu * base.modes as f64, ..base }).collect(),
        None => vec![base],
    };
    let mut t = Table::new(&[
        "n_b", "n", "modes", "mu", "eta_p", "eta_r", "shots", "snr_spdc", "snr_th", "ratio", "inv_mu_plus_one",
        "boundary_simplified", "boundary_exact", "nonclassical", "background_dominated",
    ]);
    for s in scenarios {
        let p = predicted_qi_snr(&s, cfg.frames as f64)?;
        let b = nonclassicality_boundary(&s)?;
        t.push(vec![
            num(s.n_b),
            num(s.n),
            int(s.modes),
            num(s.mu()),
            num(s.eta_p),
            num(s.eta_r),
            int(cfg.frames as u64),
            num(p.snr_spdc),
            num(p.snr_th),
            num(p.ratio),
            num(1.0 / s.mu() + 1.0),
            num(b.simplified),
            num(b.exact),
            Value::Bool(violates_classical_bound(&s)),
            Value::Bool(p.background_dominated),
        ]);
    }
    Ok(t)
}

fn predict_ghost(cfg: &ExperimentConfig) -> Result<Table> {
    let (src, g) = (need(cfg.source, "source")?, need(cfg.ghost, "ghost")?);
    let object = ghost_object(&g)?;
    let mus = match sweep_values(cfg, &[SweepAxis::Mu])? {
        Some((_, v)) => v,
        None => vec![src.mu.value()],
    };
    let mut t = Table::new(&["mu", "modes", "t1", "frames", "snr_th", "snr_spdc", "gain", "inv_mu_plus_one", "variance"]);
    for mu in mus {
        let p = predicted_gi_snr(&object, mu, src.modes_per_pixel, g.t1, cfg.frames)?;
        t.push(vec![
            num(mu),
            int(src.modes_per_pixel),
            num(g.t1),
            int(cfg.frames as u64),
            num(p.snr_th),
            num(p.snr_spdc),
            num(p.gain()),
            num(1.0 / mu + 1.0),
            num(p.variance),
        ]);
    }
    Ok(t)
}

fn predict_pairs(cfg: &ExperimentConfig) -> Result<Table> {
    let (src, det) = (need(cfg.source, "source")?, need(cfg.detector, "detector")?);
    if let Some((_, v)) = sweep_values(cfg, &[SweepAxis::Binning, SweepAxis::Mu, SweepAxis::Eta])?
        .filter(|(a, _)| *a == SweepAxis::Binning)
    {
        let model = edge_model(cfg, &src, &det)?;
        let mut t = Table::new(&["d", "x", "sigma_edge_model", "sigma_closed_form", "ratio_ssn_dc", "ratio_ssn_dr"]);
        for d in binning_factors(&v)? {
            let sigma = model.binned_nrf(d);
            t.push(vec![
                int(d as u64),
                int(d as u64 * model.x as u64),
                num(sigma),
                num(1.0 - model.eta * model.closed_form_efficiency(d)?),
                num(snr_ratio(ImagingScheme::Ssn, ImagingScheme::DifferentialClassical, 0.01, sigma)?),
                num(snr_ratio(ImagingScheme::Ssn, ImagingScheme::Direct, 0.01, sigma)?),
            ]);
        }
        return Ok(t);
    }
    let points: Vec<(SourceSpec, DetectorSpec)> = match sweep_values(cfg, &[SweepAxis::Mu, SweepAxis::Eta])? {
        Some((SweepAxis::Mu, v)) => v.iter().map(|&mu| Ok((with_mu(&src, mu)?, det))).collect::<Result<_>>()?,
        Some((_, v)) => v.iter().map(|&eta| Ok((src, with_eta(&det, eta)?))).collect::<Result<_>>()?,
        None => vec![(src, det)],
    };
    let mut t = Table::new(&[
        "mu", "eta", "mean", "fano", "covariance", "sigma", "epsilon", "alpha", "delta_alpha_direct",
        "delta_alpha_pair",
    ]);
    for (s, d) in points {
        let p = pair_prediction(cfg.geometry, &s, d.efficiency)?;
        let m = p.moments;
        let alpha = cfg.imaging.map(|im| im.alpha);
        let delta = |scheme| match (alpha, m) {
            (Some(a), Some(m)) => predicted_alpha_uncertainty(scheme, a, p.fano, p.sigma, m.mean1).map(Some),
            _ => Ok(None),
        };
        t.push(vec![
            num(s.mu.value()),
            num(d.efficiency),
            opt(m.map(|m| m.mean1)),
            num(p.fano),
            opt(m.map(|m| m.cov)),
            num(p.sigma),
            opt(m.and_then(|m| m.cauchy_schwarz().ok())),
            opt(alpha),
            opt(delta(ImagingScheme::Direct)?),
            opt(delta(pair_scheme(s.kind))?),
        ]);
    }
    Ok(t)
}

const CALIBRATION_COLUMNS: [&str; 7] = ["method", "quantity", "index", "value", "standard_error", "injected", "z"];

fn calibration_row(t: &mut Table, method: &str, quantity: &str, index: Value, r: &EstimateReport, injected: f64) {
    t.push(vec![
        text(method),
        text(quantity),
        index,
        num(r.value),
        num(r.standard_error),
        num(injected),
        num((r.value - injected) / r.standard_error),
    ]);
}

fn value_row(t: &mut Table, method: &str, quantity: &str, index: Value, value: f64) {
    t.push(vec![
        text(method),
        text(quantity),
        index,
        num(value),
        Value::Null,
        Value::Null,
        Value::Null,
    ]);
}

fn predict_calibration(cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new(&["method", "quantity", "index", "value"]);
    let mut row = |m: &str, q: &str, i: Option<f64>, v: f64| t.push(vec![text(m), text(q), opt(i), num(v)]);
    match need(cfg.calibration.clone(), "calibration")? {
        CalibrationConfig::Klyshko { setup, .. } => {
            row("klyshko", "eta1", None, setup.eta1);
            row("klyshko", "mean pairs per window", None, setup.pair_rate);
        }
        CalibrationConfig::Pnr { setup } => row("pnr", "gamma", None, setup.gamma),
        CalibrationConfig::Analog { layout, mu, eta1, eta2, .. } => {
            let a = collection_efficiency(&layout, mu)?.value;
            let alpha = eta1 / eta2;
            row("analog", "collection efficiency", None, a);
            row("analog", "alpha", None, alpha);
            row("analog", "sigma_alpha", None, (1.0 + alpha) / 2.0 - eta1 * a);
            row("analog", "eta1", None, eta1);
        }
        CalibrationConfig::Emccd { setup, .. } => {
            row("emccd", "collection efficiency", None, collection_efficiency(&setup.layout, setup.mu)?.value);
            row("emccd", "eta0", None, setup.eta0);
            for &th in &setup.thresholds {
                row("emccd", "eta(T)", Some(th), predicted_click_efficiency(setup.eta0, setup.em, th)?);
            }
        }
    }
    Ok(t)
}

/// Simulated (or loaded, for the analog method) calibration data reduced to
/// efficiency estimates next to the injected values.
pub fn calibrate(cfg: &ExperimentConfig, input: Option<&FrameSet>) -> Result<Table> {
    let mut t = Table::new(&CALIBRATION_COLUMNS);
    let seed = cfg.seed;
    match need(cfg.calibration.clone(), "calibration")? {
        CalibrationConfig::Klyshko { setup, windows } => {
            let rec = simulate_klyshko(&setup, windows, seed)?;
            let est = klyshko_efficiency(&rec)?;
            if let Some(d) = &est.diagnostic {
                log::warn!("{d}");
            }
            calibration_row(&mut t, "klyshko", "eta1", Value::Null, &est.eta, setup.eta1);
            for (q, v) in [("C_m", rec.c_m), ("C_A", rec.c_a), ("n_2", rec.n_2), ("n_B", rec.n_b)] {
                value_row(&mut t, "klyshko", q, Value::Null, v as f64);
            }
        }
        CalibrationConfig::Pnr { setup } => {
            let res = pnr_efficiencies(&simulate_pnr(&setup, seed)?, None, 0.5)?;
            for p in &res.peaks {
                match (&p.estimate, &p.issue) {
                    (Some(e), _) => calibration_row(&mut t, "pnr", "gamma_i", int(p.index as u64), e, setup.gamma),
                    (None, issue) => {
                        let q = format!("gamma_i unused: {}", issue.as_deref().unwrap_or("rejected"));
                        value_row(&mut t, "pnr", &q, int(p.index as u64), f64::NAN);
                    }
                }
            }
            if let Some(c) = &res.combined {
                calibration_row(&mut t, "pnr", "gamma combined", Value::Null, c, setup.gamma);
            }
            value_row(&mut t, "pnr", "chi square", Value::Null, res.chi_square);
            value_row(&mut t, "pnr", "p value", Value::Null, res.p_value);
        }
        CalibrationConfig::Analog { layout, mu, eta1, eta2, width, height, read_noise } => {
            let simulated;
            let frames = match input {
                Some(fs) => fs,
                None => {
                    let fs = simulate_layout_frames(&layout, mu, eta1, eta2, width, height, cfg.frames, seed)?;
                    simulated = if read_noise > 0.0 { apply_read_noise(&fs, read_noise, point_seed(seed, 0))? } else { fs };
                    &simulated
                }
            };
            let cal = analog_calibration(frames, &layout, mu, cfg.blocks)?;
            calibration_row(&mut t, "analog", "eta1", Value::Null, &cal.eta, eta1);
            value_row(&mut t, "analog", "sigma_alpha", Value::Null, cal.sigma_alpha);
            value_row(&mut t, "analog", "alpha", Value::Null, cal.alpha);
            value_row(&mut t, "analog", "collection efficiency", Value::Null, cal.collection_efficiency);
        }
        CalibrationConfig::Emccd { setup, dark_frames } => {
            if input.is_some() {
                return config_err("emccd calibration from files is not supported by the CLI; omit --input");
            }
            let table = simulate_click_table(&setup, cfg.frames, dark_frames, cfg.blocks, seed)?;
            let a = collection_efficiency(&setup.layout, setup.mu)?.value;
            let cal = emccd_threshold_calibration(&table, a)?;
            if let Some(e0) = &cal.eta0 {
                calibration_row(&mut t, "emccd", "eta0", Value::Null, &e0.eta, setup.eta0);
            }
            for p in &cal.curve {
                let injected = predicted_click_efficiency(setup.eta0, setup.em, p.threshold)?;
                match (&p.eta, &p.rejected) {
                    (Some(e), _) => calibration_row(&mut t, "emccd", "eta(T)", num(p.threshold), e, injected),
                    (None, why) => {
                        let q = format!("eta(T) rejected: {}", why.as_deref().unwrap_or("no estimate"));
                        value_row(&mut t, "emccd", &q, num(p.threshold), f64::NAN);
                    }
                }
            }
        }
    }
    Ok(t)
}

/// Largest |z| among the rows of a calibration table.
pub fn max_abs_z(t: &Table) -> f64 {
    let col = t.columns.iter().position(|c| c == "z").expect("calibration tables have a z column");
    t.rows.iter().filter_map(|r| r[col].as_f64()).fold(0.0, |m, z| m.max(z.abs()))
}

/// Measured against predicted along the configured sweep axis.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Table> {
    let s = need(cfg.sweep.clone(), "sweep")?;
    match (cfg.protocol, s.axis) {
        (Protocol::Imaging | Protocol::Statistics, SweepAxis::Binning) => sweep_binning(cfg, &s.values),
        (Protocol::Imaging | Protocol::Statistics, SweepAxis::Mu | SweepAxis::Eta) => sweep_pairs(cfg, s.axis, &s.values),
        (Protocol::Qi, SweepAxis::Background) => sweep_background(cfg, &s.values),
        (p, a) => config_err(format!("no {a:?} sweep for protocol {p:?}")),
    }
}

fn sweep_binning(cfg: &ExperimentConfig, values: &[f64]) -> Result<Table> {
    let (src, det) = (need(cfg.source, "source")?, need(cfg.detector, "detector")?);
    let model = edge_model(cfg, &src, &det)?;
    let mut t = Table::new(&[
        "d", "x", "sigma", "sigma_se", "sigma_edge_model", "sigma_closed_form", "ratio_ssn_dc", "ratio_ssn_dr",
        "ratio_ssn_dc_predicted", "ratio_ssn_dr_predicted",
    ]);
    for (i, d) in binning_factors(values)?.into_iter().enumerate() {
        // Largest grid of whole d×d super-pixels inside the detector.
        let side = |n: u32| ((n as usize / d).max(1) * d) as u32;
        let base = model.simulate(side(det.width), side(det.height), cfg.frames, point_seed(cfg.seed, i as u64))?;
        let row = binning_sweep(&base, &[d], cfg.blocks)?.remove(0);
        let predicted = model.binned_nrf(d);
        t.push(vec![
            int(d as u64),
            int(d as u64 * model.x as u64),
            num(row.sigma),
            num(row.sigma_se),
            num(predicted),
            num(1.0 - model.eta * model.closed_form_efficiency(d)?),
            num(row.ratio_ssn_dc),
            num(row.ratio_ssn_dr),
            num(snr_ratio(ImagingScheme::Ssn, ImagingScheme::DifferentialClassical, 0.01, predicted)?),
            num(snr_ratio(ImagingScheme::Ssn, ImagingScheme::Direct, 0.01, predicted)?),
        ]);
    }
    Ok(t)
}

fn sweep_pairs(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Table> {
    let (src, det) = (need(cfg.source, "source")?, need(cfg.detector, "detector")?);
    let name = if axis == SweepAxis::Mu { "mu" } else { "eta" };
    let mut t = Table::new(&[name, "sigma", "sigma_se", "sigma_predicted", "fano", "fano_se", "fano_predicted"]);
    for (i, &v) in values.iter().enumerate() {
        let (s, d) = if axis == SweepAxis::Mu { (with_mu(&src, v)?, det) } else { (src, with_eta(&det, v)?) };
        let fs = pair_frames(cfg.geometry, &s, &d, cfg.frames, point_seed(cfg.seed, i as u64))?;
        let (sigma, se) = pooled_sigma(&fs, cfg.blocks);
        let p = pair_prediction(cfg.geometry, &s, d.efficiency)?;
        let f = estimators::fano(&SampleSeries::new(fs.pixel_series(0, 0), "channel 0"))?;
        t.push(vec![
            num(v),
            num(sigma),
            num(se),
            num(p.sigma),
            num(f.value),
            num(f.standard_error),
            num(p.fano),
        ]);
    }
    Ok(t)
}

fn sweep_background(cfg: &ExperimentConfig, values: &[f64]) -> Result<Table> {
    let base = need(cfg.qi, "qi")?;
    let mut t = Table::new(&[
        "n_b", "snr_spdc", "snr_spdc_se", "snr_spdc_predicted", "snr_th", "snr_th_se", "snr_th_predicted", "ratio",
        "ratio_se", "ratio_predicted",
    ]);
    for (i, &n_b) in values.iter().enumerate() {
        let s = base.with_background(n_b);
        let i = i as u64;
        let twb = sample_qi(&s, cfg.frames, cfg.blocks, point_seed(cfg.seed, 2 * i))?.snr_per_sample();
        let th = sample_qi(&s.with_source(SourceKind::SplitThermal), cfg.frames, cfg.blocks, point_seed(cfg.seed, 2 * i + 1))?
            .snr_per_sample();
        let r = ratio_report(&twb, &th);
        let p = predicted_qi_snr(&s, 1.0)?;
        t.push(vec![
            num(n_b),
            num(twb.value),
            num(twb.standard_error),
            num(p.snr_spdc),
            num(th.value),
            num(th.standard_error),
            num(p.snr_th),
            num(r.value),
            num(r.standard_error),
            num(p.ratio),
        ]);
    }
    Ok(t)
}
