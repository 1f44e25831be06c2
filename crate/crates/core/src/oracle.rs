//! Link-level Monte-Carlo validator.
//!
//! Each simulator transmits unit-variance circularly-symmetric Gaussian
//! symbols over sampled channels, adds receiver noise, splits the received
//! signal of one user into its labelled terms and measures their powers.
//! The measured powers and SINRs are what the closed forms in
//! [`crate::uplink`] and [`crate::downlink`] predict.
//!
//! Samples are processed in fixed batches of [`BATCH`]; batch `b` draws from
//! its own stream seeded with `drop_seed(seed, b)`. Batches may run on any
//! number of threads and are merged in index order, so a result depends only
//! on `(seed, n_samples)`.

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{complex_normal, error_variances, sample_channel, C64};
use crate::downlink::{
    cbf_power, cbf_sinr, zfp_sinr, zfp_statistics, CbfPowerControl, ChiMatrix, ZeroForcing, ZfpPowerControl,
};
use crate::error::{Error, Result};
use crate::experiment::drop_topology;
use crate::propagation::{draw_fading, l0_constant, large_scale_gain, path_loss_db, FadingProfile};
use crate::scenario::{drop_seed, stream_rng, LinkBudget, RngStream, ScenarioConfig};
use crate::uplink::{uplink_sinr, uplink_term_variances, UplinkPowerControl};

pub const BATCH: usize = 2048;
/// Sample count the tolerances below are stated for.
pub const REFERENCE_SAMPLES: usize = 100_000;
pub const UPLINK_TOLERANCE: f64 = 0.03;
pub const CBF_TOLERANCE: f64 = 0.03;
pub const ZFP_TOLERANCE: f64 = 0.05;
pub const POWER_TOLERANCE: f64 = 0.02;
pub const RESIDUAL_IUI_LIMIT: f64 = 1e-9;

pub const UPLINK_LABELS: [&str; 5] = ["desired", "estimation_error", "interference", "noise", "channel_uncertainty"];
pub const CBF_LABELS: [&str; 5] = ["desired", "beamforming_uncertainty", "estimation_error", "interference", "noise"];

/// Running sums for a fixed set of complex terms.
#[derive(Debug, Clone)]
struct TermAccumulator {
    n: usize,
    power: Vec<f64>,
    power_sq: Vec<f64>,
    cross: Vec<C64>,
    cross_sq: Vec<f64>,
    impairment: f64,
    impairment_sq: f64,
    max_residual: f64,
}

impl TermAccumulator {
    fn new(terms: usize) -> Self {
        let pairs = terms * (terms - 1) / 2;
        TermAccumulator {
            n: 0,
            power: vec![0.0; terms],
            power_sq: vec![0.0; terms],
            cross: vec![C64::new(0.0, 0.0); pairs],
            cross_sq: vec![0.0; pairs],
            impairment: 0.0,
            impairment_sq: 0.0,
            max_residual: 0.0,
        }
    }

    /// `terms[0]` is the desired term; the impairment is the sum of the rest
    /// plus `extra`.
    fn push(&mut self, terms: &[C64], extra: C64) {
        self.n += 1;
        let mut p = 0;
        for (a, ta) in terms.iter().enumerate() {
            let pw = ta.norm_sqr();
            self.power[a] += pw;
            self.power_sq[a] += pw * pw;
            for tb in &terms[a + 1..] {
                let c = ta * tb.conj();
                self.cross[p] += c;
                self.cross_sq[p] += c.norm_sqr();
                p += 1;
            }
        }
        let imp = terms[1..].iter().sum::<C64>() + extra;
        let pw = imp.norm_sqr();
        self.impairment += pw;
        self.impairment_sq += pw * pw;
    }

    fn merge(&mut self, other: &TermAccumulator) {
        self.n += other.n;
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.power, &other.power);
        add(&mut self.power_sq, &other.power_sq);
        add(&mut self.cross_sq, &other.cross_sq);
        self.cross.iter_mut().zip(&other.cross).for_each(|(x, y)| *x += y);
        self.impairment += other.impairment;
        self.impairment_sq += other.impairment_sq;
        self.max_residual = self.max_residual.max(other.max_residual);
    }

    fn finish(&self, labels: &[&'static str]) -> TermEstimate {
        let n = self.n as f64;
        let mean_se = |sum: f64, sum_sq: f64| {
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
            (mean, (var / n).sqrt())
        };
        let (mean_power, std_error) = self.power.iter().zip(&self.power_sq).map(|(s, q)| mean_se(*s, *q)).unzip();
        let mut cross_correlation = Vec::new();
        let mut p = 0;
        for a in 0..labels.len() {
            for b in a + 1..labels.len() {
                cross_correlation.push(CrossTerm {
                    a: labels[a],
                    b: labels[b],
                    magnitude: (self.cross[p] / n).norm(),
                    std_error: (self.cross_sq[p] / n / n).sqrt(),
                });
                p += 1;
            }
        }
        let (impairment_power, impairment_std_error) = mean_se(self.impairment, self.impairment_sq);
        TermEstimate {
            labels: labels.to_vec(),
            mean_power,
            std_error,
            samples: self.n,
            cross_correlation,
            impairment_power,
            impairment_std_error,
        }
    }
}

/// `|E[T_a T_b*]|` with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossTerm {
    pub a: &'static str,
    pub b: &'static str,
    pub magnitude: f64,
    pub std_error: f64,
}

/// Measured term powers for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct TermEstimate {
    pub labels: Vec<&'static str>,
    pub mean_power: Vec<f64>,
    pub std_error: Vec<f64>,
    pub samples: usize,
    pub cross_correlation: Vec<CrossTerm>,
    /// Power of the sum of every non-desired term.
    pub impairment_power: f64,
    pub impairment_std_error: f64,
}

impl TermEstimate {
    pub fn power(&self, label: &str) -> f64 {
        self.mean_power[self.index(label)]
    }

    pub fn std_error_of(&self, label: &str) -> f64 {
        self.std_error[self.index(label)]
    }

    fn index(&self, label: &str) -> usize {
        self.labels.iter().position(|l| *l == label).unwrap_or_else(|| panic!("unknown term {label}"))
    }

    /// Desired power over the power of the summed impairments.
    pub fn empirical_sinr(&self) -> f64 {
        self.mean_power[0] / self.impairment_power
    }
}

fn run_batches<F>(n_samples: usize, seed: u64, terms: usize, body: F) -> Result<TermAccumulator>
where
    F: Fn(&mut ChaCha8Rng, &mut TermAccumulator, usize) -> Result<()> + Sync,
{
    if n_samples == 0 {
        return Err(Error::EmptySamples);
    }
    let batches = n_samples.div_ceil(BATCH);
    let parts: Vec<Result<TermAccumulator>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let count = BATCH.min(n_samples - b * BATCH);
            let mut rng = stream_rng(drop_seed(seed, b as u64), RngStream::Oracle);
            let mut acc = TermAccumulator::new(terms);
            body(&mut rng, &mut acc, count)?;
            Ok(acc)
        })
        .collect();
    let mut total = TermAccumulator::new(terms);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

/// MRC uplink with statistics-only detection, terms ordered as
/// [`UPLINK_LABELS`].
pub fn simulate_uplink_terms(
    profile: &FadingProfile,
    pc: &UplinkPowerControl,
    k: usize,
    link: &LinkBudget,
    n_samples: usize,
    seed: u64,
) -> Result<TermEstimate> {
    error_variances(profile)?;
    let users = profile.users();
    let mean_gain: f64 = profile.alpha.column(k).sum() * profile.antennas_per_ap as f64;
    let amp_k = (link.ue_power * pc.eta[k]).sqrt();
    let acc = run_batches(n_samples, seed, 5, |rng, acc, count| {
        for _ in 0..count {
            let s = sample_channel(profile, rng)?;
            let x: Vec<C64> = (0..users).map(|_| complex_normal(1.0, rng)).collect();
            let gk = s.g_hat.column(k);
            let noise_proj: C64 = gk.iter().map(|g| g.conj() * complex_normal(link.noise_power, rng)).sum();
            let gain = gk.norm_squared();
            let mut interference = C64::new(0.0, 0.0);
            for i in (0..users).filter(|&i| i != k) {
                interference += gk.dotc(&s.g_true.column(i)) * (link.ue_power * pc.eta[i]).sqrt() * x[i];
            }
            let terms = [
                x[k] * (amp_k * mean_gain),
                gk.dotc(&s.g_err.column(k)) * x[k] * amp_k,
                interference,
                noise_proj,
                x[k] * (amp_k * (gain - mean_gain)),
            ];
            acc.push(&terms, C64::new(0.0, 0.0));
        }
        Ok(())
    })?;
    Ok(acc.finish(&UPLINK_LABELS))
}

/// Conjugate beamforming with statistics-only detection at the user, terms
/// ordered as [`CBF_LABELS`].
pub fn simulate_downlink_cbf(
    profile: &FadingProfile,
    pc: &CbfPowerControl,
    k: usize,
    link: &LinkBudget,
    n_samples: usize,
    seed: u64,
) -> Result<TermEstimate> {
    error_variances(profile)?;
    let (m_total, users) = (profile.antennas(), profile.users());
    let amp: Vec<f64> = (0..m_total).map(|m| (link.ap_power * pc.eta_site[profile.site_of(m)]).sqrt()).collect();
    let desired_gain: f64 = (0..m_total).map(|m| amp[m] * profile.alpha[(profile.site_of(m), k)]).sum();
    let acc = run_batches(n_samples, seed, 5, |rng, acc, count| {
        for _ in 0..count {
            let s = sample_channel(profile, rng)?;
            let u: Vec<C64> = (0..users).map(|_| complex_normal(1.0, rng)).collect();
            let mut uncertainty = 0.0;
            let mut est_err = C64::new(0.0, 0.0);
            let mut interference = C64::new(0.0, 0.0);
            for (m, &a) in amp.iter().enumerate() {
                let ghat = s.g_hat[(m, k)];
                uncertainty += a * (ghat.norm_sqr() - profile.alpha[(profile.site_of(m), k)]);
                est_err += s.g_err[(m, k)] * ghat.conj() * a;
                let g_mk = s.g_true[(m, k)];
                for i in (0..users).filter(|&i| i != k) {
                    interference += g_mk * s.g_hat[(m, i)].conj() * a * u[i];
                }
            }
            let terms = [
                u[k] * desired_gain,
                u[k] * uncertainty,
                est_err * u[k],
                interference,
                complex_normal(link.noise_power, rng),
            ];
            acc.push(&terms, C64::new(0.0, 0.0));
        }
        Ok(())
    })?;
    Ok(acc.finish(&CBF_LABELS))
}

/// Result of the zero-forcing link simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfpLinkEstimate {
    /// `p_d η`, the power of the statistically detected desired term.
    pub desired_power: f64,
    /// `E|r_k - √(p_d η) u_k|²`, measured with the true channels.
    pub impairment_power: f64,
    pub impairment_std_error: f64,
    pub samples: usize,
    pub singular_draws: usize,
    /// Largest `‖offdiag(Ĝᵀ W)‖∞` over all draws; with unit diagonal this is
    /// the residual interference amplitude relative to the desired one.
    pub max_residual_iui: f64,
}

impl ZfpLinkEstimate {
    pub fn empirical_sinr(&self) -> f64 {
        self.desired_power / self.impairment_power
    }
}

/// Zero-forcing with a fresh precoder per draw, received through the true
/// channels. `chi_ref` is only checked for shape; the simulation never uses
/// it.
pub fn simulate_downlink_zfp(
    profile: &FadingProfile,
    pc: ZfpPowerControl,
    chi_ref: &ChiMatrix,
    k: usize,
    link: &LinkBudget,
    n_samples: usize,
    seed: u64,
) -> Result<ZfpLinkEstimate> {
    error_variances(profile)?;
    let users = profile.users();
    if chi_ref.chi.shape() != (users, users) {
        return Err(Error::Invariant("chi matrix does not match the user count".into()));
    }
    let amp = (link.ap_power * pc.eta_common).sqrt();
    let singular = std::sync::atomic::AtomicUsize::new(0);
    let acc = run_batches(n_samples, seed, 2, |rng, acc, count| {
        let mut done = 0;
        while done < count {
            let s = sample_channel(profile, rng)?;
            let zf = match ZeroForcing::new(&s.g_hat) {
                Ok(zf) => zf,
                Err(Error::Singular { .. }) => {
                    let seen = singular.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                    if seen * 100 > n_samples {
                        return Err(Error::TooManySingular { singular: seen, requested: n_samples });
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            done += 1;
            let u: Vec<C64> = (0..users).map(|_| complex_normal(1.0, rng)).collect();
            let gk = s.g_true.column(k);
            let mut received = C64::new(0.0, 0.0);
            for (i, ui) in u.iter().enumerate() {
                received += gk.dot(&zf.precoder.column(i)) * amp * ui;
            }
            let desired = u[k] * amp;
            let (off, _) = zf.residual(&s.g_hat);
            acc.max_residual = acc.max_residual.max(off);
            acc.push(&[desired, received - desired], complex_normal(link.noise_power, rng));
        }
        Ok(())
    })?;
    let est = acc.finish(&["desired", "leakage"]);
    Ok(ZfpLinkEstimate {
        desired_power: link.ap_power * pc.eta_common,
        impairment_power: est.impairment_power,
        impairment_std_error: est.impairment_std_error,
        samples: est.samples,
        singular_draws: singular.into_inner(),
        max_residual_iui: acc.max_residual,
    })
}

/// One line of a validation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub check: String,
    pub closed_form: f64,
    pub empirical: f64,
    pub samples: usize,
    pub tolerance: f64,
}

impl ValidationRow {
    pub fn rel_error(&self) -> f64 {
        if self.closed_form == 0.0 {
            self.empirical.abs()
        } else {
            (self.empirical - self.closed_form).abs() / self.closed_form.abs()
        }
    }

    pub fn passed(&self) -> bool {
        self.rel_error() <= self.tolerance
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(ValidationRow::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationRow> {
        self.rows.iter().filter(|r| !r.passed())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,closed_form,empirical,rel_error,samples,tolerance,pass\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.9e},{:.9e},{:.6e},{},{:.6e},{}",
                r.check,
                r.closed_form,
                r.empirical,
                r.rel_error(),
                r.samples,
                r.tolerance,
                r.passed()
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.check.len()).max().unwrap_or(5).max(5);
        let mut out = format!(
            "{:<width$}  {:>13}  {:>13}  {:>9}  {:>8}  {:>7}  result\n",
            "check", "closed-form", "empirical", "rel.err", "samples", "tol"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>13.6e}  {:>13.6e}  {:>9.3e}  {:>8}  {:>7.4}  {}",
                r.check,
                r.closed_form,
                r.empirical,
                r.rel_error(),
                r.samples,
                r.tolerance,
                if r.passed() { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

/// Tolerance stated for [`REFERENCE_SAMPLES`], widened by `√(ref / n)` for
/// smaller budgets so quick runs are judged at the same confidence.
pub fn scaled_tolerance(base: f64, samples: usize) -> f64 {
    if samples >= REFERENCE_SAMPLES {
        base
    } else {
        base * (REFERENCE_SAMPLES as f64 / samples as f64).sqrt()
    }
}

/// The validation scenario: 40 antennas on 20 two-antenna sites serving four
/// users.
pub fn validation_instance() -> ScenarioConfig {
    validation_config(&ScenarioConfig::default())
}

/// `base` resized to the validation instance, keeping its propagation
/// parameters and seed.
pub fn validation_config(base: &ScenarioConfig) -> ScenarioConfig {
    ScenarioConfig { total_antennas: 40, antennas_per_ap: 2, num_users: 4, ..base.clone() }
}

/// Large-scale profile of drop 0 of `cfg`.
pub fn instance_profile(cfg: &ScenarioConfig) -> Result<FadingProfile> {
    cfg.validate()?;
    let seed = drop_seed(cfg.master_seed, 0);
    let topology = drop_topology(cfg, 0)?;
    draw_fading(cfg, &topology, &mut stream_rng(seed, RngStream::Shadowing))
}

/// Runs every closed-form versus link-level comparison on drop 0 of `cfg`.
pub fn run_validation(cfg: &ScenarioConfig, n_samples: usize) -> Result<ValidationReport> {
    let profile = instance_profile(cfg)?;
    let link = cfg.link_budget();
    let users = profile.users();
    let mut rows = Vec::new();
    let seed = cfg.master_seed;

    let l0 = l0_constant(cfg.carrier_freq_mhz, cfg.ap_height_m, cfg.ue_height_m)?;
    let reference = validation_instance();
    if (cfg.carrier_freq_mhz, cfg.ap_height_m, cfg.ue_height_m)
        == (reference.carrier_freq_mhz, reference.ap_height_m, reference.ue_height_m)
    {
        rows.push(ValidationRow {
            check: "l0_db".into(),
            closed_form: 140.72,
            empirical: l0,
            samples: 0,
            tolerance: 0.01 / 140.72,
        });
    }
    let (d0, d1) = (cfg.breakpoint_d0_km, cfg.breakpoint_d1_km);
    rows.push(ValidationRow {
        check: "path_loss_continuity_d1_db".into(),
        closed_form: -l0 - 35.0 * d1.log10(),
        empirical: path_loss_db(d1, l0, d0, d1),
        samples: 0,
        tolerance: 1e-9 / l0,
    });
    rows.push(ValidationRow {
        check: "path_loss_continuity_d0_db".into(),
        closed_form: -l0 - 10.0 * (d1.powf(1.5) * d0 * d0).log10(),
        empirical: path_loss_db(d0 * (1.0 + 1e-12), l0, d0, d1),
        samples: 0,
        tolerance: 1e-9 / l0,
    });
    rows.push(ValidationRow {
        check: "beta_1km_db".into(),
        closed_form: -l0,
        empirical: 10.0 * large_scale_gain(1.0, 0.0, l0, cfg).log10(),
        samples: 0,
        tolerance: 1e-12,
    });

    let up_tol = scaled_tolerance(UPLINK_TOLERANCE, n_samples);
    let ul_pc = UplinkPowerControl::full_power(users);
    for k in 0..users {
        let closed = uplink_term_variances(&profile, &ul_pc, k, &link);
        let est = simulate_uplink_terms(&profile, &ul_pc, k, &link, n_samples, seed.wrapping_add(k as u64))?;
        let pairs = [
            ("desired", closed.desired),
            ("estimation_error", closed.estimation_error),
            ("interference", closed.interference),
            ("noise", closed.noise),
            ("channel_uncertainty", closed.channel_uncertainty_scaled()),
        ];
        for (label, value) in pairs {
            rows.push(ValidationRow {
                check: format!("uplink_u{k}_{label}"),
                closed_form: value,
                empirical: est.power(label),
                samples: est.samples,
                tolerance: up_tol,
            });
        }
        rows.push(ValidationRow {
            check: format!("uplink_u{k}_sinr"),
            closed_form: uplink_sinr(&profile, &ul_pc, k, &link),
            empirical: est.empirical_sinr(),
            samples: est.samples,
            tolerance: up_tol,
        });
    }

    let cbf_tol = scaled_tolerance(CBF_TOLERANCE, n_samples);
    let cbf_pc = cbf_power(&profile)?;
    for k in 0..users {
        let est = simulate_downlink_cbf(&profile, &cbf_pc, k, &link, n_samples, seed.wrapping_add(100 + k as u64))?;
        rows.push(ValidationRow {
            check: format!("cbf_u{k}_sinr"),
            closed_form: cbf_sinr(&profile, &cbf_pc, k, &link),
            empirical: est.empirical_sinr(),
            samples: est.samples,
            tolerance: cbf_tol,
        });
    }
    let max_cbf_power =
        (0..profile.sites()).map(|q| cbf_pc.expected_antenna_power(&profile, q, &link)).fold(0.0, f64::max);
    rows.push(ValidationRow {
        check: "cbf_max_antenna_power_w".into(),
        closed_form: link.ap_power,
        empirical: max_cbf_power,
        samples: 0,
        tolerance: 1e-12,
    });

    // zero-forcing expectations at the same sample budget as the link runs
    let zfp_tol = scaled_tolerance(ZFP_TOLERANCE, n_samples);
    let mut stats_rng = stream_rng(drop_seed(seed, 0), RngStream::SmallScale);
    let stats = zfp_statistics(&profile, n_samples, &mut stats_rng)?;
    let zfp_pc = stats.power_control();
    let chi = stats.chi(&profile);
    let mut max_residual = 0.0f64;
    for k in 0..users {
        let est =
            simulate_downlink_zfp(&profile, zfp_pc, &chi, k, &link, n_samples, seed.wrapping_add(200 + k as u64))?;
        max_residual = max_residual.max(est.max_residual_iui);
        rows.push(ValidationRow {
            check: format!("zfp_u{k}_sinr"),
            closed_form: zfp_sinr(zfp_pc, &chi, k, &link),
            empirical: est.empirical_sinr(),
            samples: est.samples,
            tolerance: zfp_tol,
        });
    }
    rows.push(ValidationRow {
        check: "zfp_max_residual_iui".into(),
        closed_form: 0.0,
        empirical: max_residual,
        samples: n_samples * users,
        tolerance: RESIDUAL_IUI_LIMIT,
    });
    let audit = zfp_power_audit(&profile, zfp_pc, &link, n_samples, seed.wrapping_add(300))?;
    rows.push(ValidationRow {
        check: "zfp_max_antenna_power_w".into(),
        closed_form: link.ap_power,
        empirical: audit.iter().cloned().fold(0.0, f64::max),
        samples: n_samples,
        tolerance: scaled_tolerance(POWER_TOLERANCE, n_samples),
    });
    Ok(ValidationReport { rows })
}

/// Expected per-antenna transmit power under `pc`, re-estimated on draws
/// independent of the ones that set `pc`.
pub fn zfp_power_audit(
    profile: &FadingProfile,
    pc: ZfpPowerControl,
    link: &LinkBudget,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, RngStream::Oracle);
    let fresh = zfp_statistics(profile, n_samples, &mut rng)?;
    Ok((0..profile.antennas()).map(|m| fresh.expected_antenna_power(m, pc, link)).collect())
}

/// Expected per-antenna power of conjugate beamforming measured on sampled
/// estimates.
pub fn cbf_power_audit(
    profile: &FadingProfile,
    pc: &CbfPowerControl,
    link: &LinkBudget,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, RngStream::Oracle);
    let mut total = vec![0.0; profile.antennas()];
    for _ in 0..n_samples {
        let s = sample_channel(profile, &mut rng)?;
        for (m, t) in total.iter_mut().enumerate() {
            let eta = pc.eta_site[profile.site_of(m)];
            *t += link.ap_power * eta * s.g_hat.row(m).iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
    }
    Ok(total.iter().map(|p| p / n_samples as f64).collect())
}
