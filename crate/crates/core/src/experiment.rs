//! Monte-Carlo drops, sweeps over antennas per site and cost ratios, and
//! result files.
//!
//! A drop draws users and APs, shadowing and the zero-forcing expectations
//! from its own seed (see [`crate::scenario`]). Drops run in parallel and are
//! reduced in index order, so the CSV output only depends on the
//! configuration.
//!
//! Percentiles pool the per-user spectral efficiencies of all users and all
//! drops (`K x drops` samples) and use linear interpolation between order
//! statistics: for sorted `x_0 ≤ … ≤ x_{n-1}` the `p` quantile is
//! `x_j + (h - j)(x_{j+1} - x_j)` with `h = (n - 1) p`, `j = ⌊h⌋`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{cost_effectiveness, total_cost, CostModel};
use crate::downlink::{cbf_power, cbf_sinr, zfp_sinr, zfp_statistics};
use crate::error::{Error, Result};
use crate::propagation::{draw_fading, place_aps, place_users, Topology};
use crate::scenario::{drop_seed, fixed_layout_seed, stream_rng, RngStream, ScenarioConfig};
use crate::uplink::{per_user_rate, uplink_sinr, UplinkPowerControl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "mrc-ul")]
    MrcUplink,
    #[serde(rename = "cbf-dl")]
    CbfDownlink,
    #[serde(rename = "zfp-dl")]
    ZfpDownlink,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::MrcUplink, Scheme::CbfDownlink, Scheme::ZfpDownlink];

    pub fn tag(self) -> &'static str {
        match self {
            Scheme::MrcUplink => "mrc-ul",
            Scheme::CbfDownlink => "cbf-dl",
            Scheme::ZfpDownlink => "zfp-dl",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Per-user spectral efficiencies (bit/s/Hz) of one scheme in one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub scheme: Scheme,
    pub per_user_se: Vec<f64>,
    pub sum_rate: f64,
    pub drop_index: u64,
}

impl RateReport {
    fn new(scheme: Scheme, drop_index: u64, sinrs: impl Iterator<Item = f64>) -> Self {
        let per_user_se: Vec<f64> = sinrs.map(per_user_rate).collect();
        let sum_rate = per_user_se.iter().sum();
        RateReport { scheme, per_user_se, sum_rate, drop_index }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropReport {
    pub drop_index: u64,
    pub uplink: RateReport,
    pub cbf: RateReport,
    pub zfp: RateReport,
    pub zfp_singular_draws: usize,
}

impl DropReport {
    pub fn report(&self, scheme: Scheme) -> &RateReport {
        match scheme {
            Scheme::MrcUplink => &self.uplink,
            Scheme::CbfDownlink => &self.cbf,
            Scheme::ZfpDownlink => &self.zfp,
        }
    }
}

/// Topology of drop `drop_index`.
pub fn drop_topology(cfg: &ScenarioConfig, drop_index: u64) -> Result<Topology> {
    let seed = drop_seed(cfg.master_seed, drop_index);
    let ap_seed = if cfg.fixed_aps { fixed_layout_seed(cfg.master_seed) } else { seed };
    Ok(Topology {
        ue_positions: place_users(cfg, &mut stream_rng(seed, RngStream::UserPlacement)),
        ap_positions: place_aps(cfg, &mut stream_rng(ap_seed, RngStream::ApPlacement))?,
    })
}

/// Evaluates all three schemes on one topology and fading draw.
pub fn run_drop(cfg: &ScenarioConfig, drop_index: u64) -> Result<DropReport> {
    run_drop_inner(cfg, drop_index).map_err(|e| Error::Drop { index: drop_index, source: Box::new(e) })
}

fn run_drop_inner(cfg: &ScenarioConfig, drop_index: u64) -> Result<DropReport> {
    cfg.validate()?;
    let seed = drop_seed(cfg.master_seed, drop_index);
    let topology = drop_topology(cfg, drop_index)?;
    let profile = draw_fading(cfg, &topology, &mut stream_rng(seed, RngStream::Shadowing))?;
    let link = cfg.link_budget();
    let users = cfg.num_users;

    let ul_pc = UplinkPowerControl::full_power(users);
    let uplink =
        RateReport::new(Scheme::MrcUplink, drop_index, (0..users).map(|k| uplink_sinr(&profile, &ul_pc, k, &link)));

    let cbf_pc = cbf_power(&profile)?;
    let cbf =
        RateReport::new(Scheme::CbfDownlink, drop_index, (0..users).map(|k| cbf_sinr(&profile, &cbf_pc, k, &link)));

    let stats = zfp_statistics(&profile, cfg.chi_samples, &mut stream_rng(seed, RngStream::SmallScale))?;
    let zfp_pc = stats.power_control();
    let chi = stats.chi(&profile);
    let zfp = RateReport::new(Scheme::ZfpDownlink, drop_index, (0..users).map(|k| zfp_sinr(zfp_pc, &chi, k, &link)));

    Ok(DropReport { drop_index, uplink, cbf, zfp, zfp_singular_draws: stats.singular_draws })
}

/// Empirical `p` quantile with linear interpolation, see the module docs.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain { what: "percentile", detail: format!("p = {p} outside (0, 1)") });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let j = h.floor() as usize;
    Ok(match sorted.get(j + 1) {
        Some(next) => sorted[j] + (h - j as f64) * (next - sorted[j]),
        None => sorted[j],
    })
}

pub const DEFAULT_NT_LIST: [usize; 10] = [1, 2, 4, 10, 12, 15, 20, 25, 30, 50];
pub const DEFAULT_CV_CF_RATIOS: [f64; 4] = [0.05, 0.1, 0.25, 0.5];

/// The `[sweep]` table: antennas-per-site values and `C_v / C_f` ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepPlan {
    pub nt_list: Vec<usize>,
    pub cv_cf_ratios: Vec<f64>,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan { nt_list: DEFAULT_NT_LIST.to_vec(), cv_cf_ratios: DEFAULT_CV_CF_RATIOS.to_vec() }
    }
}

impl SweepPlan {
    pub fn validate(&self, cfg: &ScenarioConfig) -> Result<()> {
        if self.nt_list.is_empty() {
            return Err(Error::config("sweep nt_list is empty"));
        }
        if self.cv_cf_ratios.is_empty() {
            return Err(Error::config("sweep cv_cf_ratios is empty"));
        }
        if let Some(r) = self.cv_cf_ratios.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::config(format!("cost ratio {r} must be finite and >= 0")));
        }
        let bad: Vec<String> = self
            .nt_list
            .iter()
            .filter(|&&nt| nt == 0 || !cfg.total_antennas.is_multiple_of(nt))
            .map(|nt| nt.to_string())
            .collect();
        if !bad.is_empty() {
            return Err(Error::config(format!(
                "nt_list entries [{}] do not divide total_antennas = {}",
                bad.join(", "),
                cfg.total_antennas
            )));
        }
        for &nt in &self.nt_list {
            cfg.with_antennas_per_ap(nt).validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostPoint {
    pub cv_cf_ratio: f64,
    pub cost_total: f64,
    pub gamma_ce: f64,
}

/// Aggregates of one (scheme, `N_t`) sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub scheme: Scheme,
    pub n_t: usize,
    pub n_ap: usize,
    pub k: usize,
    pub drops: usize,
    pub sum_rate_mean: f64,
    pub sum_rate_std_error: f64,
    pub se_p05: f64,
    pub se_p50: f64,
    pub pooled_samples: usize,
    pub costs: Vec<CostPoint>,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepProgress {
    pub completed: usize,
    pub total: usize,
    pub n_t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub zfp_singular_draws: usize,
}

/// Cost points for one `N_t`. Aggregated models are re-scaled to each ratio
/// with `C_v = ratio * C_f`; itemized models give one point at their own
/// ratio.
fn cost_points(model: &CostModel, ratios: &[f64], sum_rate: f64, sites: usize, n_t: usize) -> Vec<CostPoint> {
    let point = |m: &CostModel, ratio: f64| CostPoint {
        cv_cf_ratio: ratio,
        cost_total: total_cost(m, sites, n_t),
        gamma_ce: cost_effectiveness(sum_rate, m, sites, n_t),
    };
    match *model {
        CostModel::Aggregated { c_f, .. } => {
            ratios.iter().map(|&r| point(&CostModel::Aggregated { c_f, c_v: r * c_f }, r)).collect()
        }
        CostModel::Itemized(_) => vec![point(model, model.variable_cost() / model.fixed_cost(sites))],
    }
}

fn summarize(
    cfg: &ScenarioConfig,
    reports: &[DropReport],
    scheme: Scheme,
    model: &CostModel,
    ratios: &[f64],
) -> Result<SweepRecord> {
    let sums: Vec<f64> = reports.iter().map(|r| r.report(scheme).sum_rate).collect();
    let n = sums.len() as f64;
    let mean = sums.iter().sum::<f64>() / n;
    let var = if sums.len() > 1 { sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let pooled: Vec<f64> = reports.iter().flat_map(|r| r.report(scheme).per_user_se.iter().copied()).collect();
    let sites = cfg.site_count()?;
    Ok(SweepRecord {
        scheme,
        n_t: cfg.antennas_per_ap,
        n_ap: sites,
        k: cfg.num_users,
        drops: reports.len(),
        sum_rate_mean: mean,
        sum_rate_std_error: (var / n).sqrt(),
        se_p05: percentile(&pooled, 0.05)?,
        se_p50: percentile(&pooled, 0.5)?,
        pooled_samples: pooled.len(),
        costs: cost_points(model, ratios, mean, sites, cfg.antennas_per_ap),
        master_seed: cfg.master_seed,
    })
}

/// Runs every drop of `cfg` on the current rayon pool.
pub fn run_drops(cfg: &ScenarioConfig) -> Result<Vec<DropReport>> {
    (0..cfg.drops as u64).into_par_iter().map(|i| run_drop(cfg, i)).collect()
}

/// Full cross product of `plan.nt_list`, the three schemes and the cost
/// ratios. Records are ordered by `N_t`, then by scheme.
pub fn sweep(
    cfg: &ScenarioConfig,
    cost: &CostModel,
    plan: &SweepPlan,
    progress: &mut dyn FnMut(SweepProgress),
) -> Result<SweepResult> {
    cfg.validate()?;
    plan.validate(cfg)?;
    let mut records = Vec::with_capacity(plan.nt_list.len() * Scheme::ALL.len());
    let mut singular = 0;
    for (idx, &nt) in plan.nt_list.iter().enumerate() {
        let point_cfg = cfg.with_antennas_per_ap(nt);
        let reports = run_drops(&point_cfg)?;
        singular += reports.iter().map(|r| r.zfp_singular_draws).sum::<usize>();
        for scheme in Scheme::ALL {
            records.push(summarize(&point_cfg, &reports, scheme, cost, &plan.cv_cf_ratios)?);
        }
        progress(SweepProgress { completed: idx + 1, total: plan.nt_list.len(), n_t: nt });
    }
    Ok(SweepResult { records, zfp_singular_draws: singular })
}

pub const SWEEP_CSV_HEADER: &str =
    "scheme,n_t,n_ap,k,drops,sum_rate_mean,se_p05,se_p50,cv_cf_ratio,cost_total,gamma_ce,master_seed";

/// One row per (scheme, `N_t`, ratio), floats with six significant digits.
pub fn records_to_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in records {
        for c in &r.costs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.scheme,
                r.n_t,
                r.n_ap,
                r.k,
                r.drops,
                format_sig6(r.sum_rate_mean),
                format_sig6(r.se_p05),
                format_sig6(r.se_p50),
                format_sig6(c.cv_cf_ratio),
                format_sig6(c.cost_total),
                format_sig6(c.gamma_ce),
                r.master_seed
            );
        }
    }
    out
}

/// `printf("%.6g")` formatting.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Per-record statistics that do not fit the CSV contract.
#[derive(Debug, Clone, Serialize)]
pub struct RecordStats {
    pub scheme: Scheme,
    pub n_t: usize,
    pub sum_rate_std_error: f64,
    pub pooled_samples: usize,
}

/// JSON sidecar written next to a sweep CSV.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub software: &'static str,
    pub version: &'static str,
    pub config: crate::scenario::ConfigFile,
    pub master_seed: u64,
    pub drops: usize,
    pub chi_samples: usize,
    /// Divisor applied to drops and oracle samples (1 for full runs).
    pub quick_scale: usize,
    pub rate_unit: &'static str,
    pub percentile_method: &'static str,
    pub zfp_singular_draws: usize,
    pub records: Vec<RecordStats>,
}

impl RunMetadata {
    pub fn new(config: crate::scenario::ConfigFile, quick_scale: usize, result: &SweepResult) -> Self {
        RunMetadata {
            software: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            master_seed: config.scenario.master_seed,
            drops: config.scenario.drops,
            chi_samples: config.scenario.chi_samples,
            config,
            quick_scale,
            rate_unit: "bit/s/Hz",
            percentile_method: "linear interpolation between order statistics, pooled over users and drops",
            zfp_singular_draws: result.zfp_singular_draws,
            records: result
                .records
                .iter()
                .map(|r| RecordStats {
                    scheme: r.scheme,
                    n_t: r.n_t,
                    sum_rate_std_error: r.sum_rate_std_error,
                    pooled_samples: r.pooled_samples,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serializes")
    }
}
