//! Topology generation and large-scale fading.
//!
//! Path loss follows the three-slope COST-Hata model with distances in km.
//! Shadowing is log-normal, drawn once per (site, user) pair, so all antennas
//! of a site see the same large-scale gain.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scenario::{ApPlacement, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// AP sites and user positions, in km.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub ap_positions: Vec<Point>,
    pub ue_positions: Vec<Point>,
}

pub fn place_users<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<Point> {
    uniform_points(cfg.num_users, cfg.area_side_km, rng)
}

pub fn place_aps<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Vec<Point>> {
    let sites = cfg.site_count()?;
    Ok(match cfg.ap_placement {
        ApPlacement::Uniform => uniform_points(sites, cfg.area_side_km, rng),
        ApPlacement::Grid => grid_points(sites, cfg.area_side_km),
    })
}

/// Draws users first, then APs, from one generator.
pub fn place_topology<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Topology> {
    let ue_positions = place_users(cfg, rng);
    let ap_positions = place_aps(cfg, rng)?;
    Ok(Topology { ap_positions, ue_positions })
}

fn uniform_points<R: Rng + ?Sized>(n: usize, side: f64, rng: &mut R) -> Vec<Point> {
    (0..n).map(|_| Point { x: side * rng.random::<f64>(), y: side * rng.random::<f64>() }).collect()
}

/// Cell centres of a `rows x cols` grid with `cols = ceil(sqrt(n))`, the
/// first `n` cells in row-major order.
fn grid_points(n: usize, side: f64) -> Vec<Point> {
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (dx, dy) = (side / cols as f64, side / rows as f64);
    (0..n).map(|i| Point { x: dx * ((i % cols) as f64 + 0.5), y: dy * ((i / cols) as f64 + 0.5) }).collect()
}

/// COST-Hata reference loss `L0` in dB for a carrier in MHz and antenna
/// heights in metres.
pub fn l0_constant(carrier_freq_mhz: f64, ap_height_m: f64, ue_height_m: f64) -> Result<f64> {
    for (name, v) in
        [("carrier_freq_mhz", carrier_freq_mhz), ("ap_height_m", ap_height_m), ("ue_height_m", ue_height_m)]
    {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Domain { what: "l0_constant", detail: format!("{name} = {v} must be > 0") });
        }
    }
    let lf = carrier_freq_mhz.log10();
    Ok(46.3 + 33.9 * lf - 13.82 * ap_height_m.log10() - (1.1 * lf - 0.7) * ue_height_m + 1.56 * lf - 0.8)
}

/// Three-slope path gain in dB (a negative number) at distance `d_km`.
pub fn path_loss_db(d_km: f64, l0_db: f64, d0_km: f64, d1_km: f64) -> f64 {
    if d_km > d1_km {
        -l0_db - 35.0 * d_km.log10()
    } else if d_km > d0_km {
        -l0_db - 10.0 * (d1_km.powf(1.5) * d_km * d_km).log10()
    } else {
        -l0_db - 10.0 * (d1_km.powf(1.5) * d0_km * d0_km).log10()
    }
}

/// Linear large-scale gain from a distance and a shadowing sample in dB.
pub fn large_scale_gain(d_km: f64, shadow_db: f64, l0_db: f64, cfg: &ScenarioConfig) -> f64 {
    let gain_db = path_loss_db(d_km, l0_db, cfg.breakpoint_d0_km, cfg.breakpoint_d1_km) + shadow_db;
    10f64.powf(gain_db / 10.0)
}

/// Variance of the MMSE channel estimate.
pub fn mmse_alpha(ue_power: f64, beta: f64, noise_power: f64) -> f64 {
    let denom = ue_power * beta + noise_power;
    if denom == 0.0 {
        0.0
    } else {
        ue_power * beta * beta / denom
    }
}

/// Per-site large-scale statistics of one drop.
///
/// `beta` and `alpha` are `N_AP x K`; antenna `m` of site `q` inherits row
/// `q` (see [`crate::channel::expand_site_to_antennas`]).
#[derive(Debug, Clone, PartialEq)]
pub struct FadingProfile {
    pub beta: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub antennas_per_ap: usize,
}

impl FadingProfile {
    /// Builds a profile from `beta`, computing `alpha` with the MMSE rule.
    pub fn from_beta(beta: DMatrix<f64>, antennas_per_ap: usize, ue_power: f64, noise_power: f64) -> Self {
        let alpha = beta.map(|b| mmse_alpha(ue_power, b, noise_power));
        FadingProfile { beta, alpha, antennas_per_ap }
    }

    pub fn sites(&self) -> usize {
        self.beta.nrows()
    }

    pub fn users(&self) -> usize {
        self.beta.ncols()
    }

    pub fn antennas(&self) -> usize {
        self.sites() * self.antennas_per_ap
    }

    /// Site index of antenna `m` (both zero-based).
    pub fn site_of(&self, antenna: usize) -> usize {
        antenna / self.antennas_per_ap
    }

    pub fn check(&self) -> Result<()> {
        if self.beta.shape() != self.alpha.shape() {
            return Err(Error::Invariant("beta and alpha shapes differ".into()));
        }
        if self.antennas_per_ap == 0 {
            return Err(Error::Invariant("antennas_per_ap must be positive".into()));
        }
        for (q, k) in (0..self.sites()).flat_map(|q| (0..self.users()).map(move |k| (q, k))) {
            let (b, a) = (self.beta[(q, k)], self.alpha[(q, k)]);
            if !(b.is_finite() && a.is_finite() && a >= 0.0 && b >= 0.0) {
                return Err(Error::Invariant(format!("non-finite or negative statistic at site {q}, user {k}")));
            }
            if a > b {
                return Err(Error::Invariant(format!("alpha ({a:e}) exceeds beta ({b:e}) at site {q}, user {k}")));
            }
        }
        Ok(())
    }
}

/// Draws shadowing and evaluates `beta`, `alpha` for a topology.
pub fn draw_fading<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    topology: &Topology,
    shadow_rng: &mut R,
) -> Result<FadingProfile> {
    let l0 = l0_constant(cfg.carrier_freq_mhz, cfg.ap_height_m, cfg.ue_height_m)?;
    let shadow = Normal::new(0.0, cfg.shadowing_sigma_db)
        .map_err(|e| Error::Domain { what: "shadowing", detail: e.to_string() })?;
    let (sites, users) = (topology.ap_positions.len(), topology.ue_positions.len());
    let mut beta = DMatrix::zeros(sites, users);
    for q in 0..sites {
        for k in 0..users {
            let d = topology.ap_positions[q].distance(topology.ue_positions[k]);
            beta[(q, k)] = large_scale_gain(d, shadow.sample(shadow_rng), l0, cfg);
        }
    }
    Ok(FadingProfile::from_beta(beta, cfg.antennas_per_ap, cfg.ue_tx_power, cfg.noise_power()))
}

/// Header of [`fading_csv`].
pub const FADING_CSV_HEADER: &str = "site,user,site_x_km,site_y_km,user_x_km,user_y_km,distance_km,beta_db,alpha_db";

/// One row per (site, user) pair, sites outermost. Zero gains print as `-inf`.
pub fn fading_csv(topology: &Topology, profile: &FadingProfile) -> String {
    let mut out = String::from(FADING_CSV_HEADER);
    out.push('\n');
    for (q, ap) in topology.ap_positions.iter().enumerate() {
        for (k, ue) in topology.ue_positions.iter().enumerate() {
            let _ = writeln!(
                out,
                "{q},{k},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4}",
                ap.x,
                ap.y,
                ue.x,
                ue.y,
                ap.distance(*ue),
                10.0 * profile.beta[(q, k)].log10(),
                10.0 * profile.alpha[(q, k)].log10(),
            );
        }
    }
    out
}
