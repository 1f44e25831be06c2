//! Uplink SINR with maximum-ratio combining and statistics-only detection
//! at the CPU.
//!
//! All sums run over sites; the factor `N_t` accounts for the antennas of a
//! site sharing one large-scale profile.

use crate::error::{Error, Result};
use crate::propagation::FadingProfile;
use crate::scenario::LinkBudget;

/// Uplink power coefficients `η_k ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkPowerControl {
    pub eta: Vec<f64>,
}

impl UplinkPowerControl {
    pub fn full_power(users: usize) -> Self {
        UplinkPowerControl { eta: vec![1.0; users] }
    }

    pub fn new(eta: Vec<f64>) -> Result<Self> {
        if let Some((k, e)) = eta.iter().enumerate().find(|(_, e)| !(0.0..=1.0).contains(*e)) {
            return Err(Error::config(format!("uplink eta[{k}] = {e} outside [0, 1]")));
        }
        Ok(UplinkPowerControl { eta })
    }
}

/// Closed-form powers of the five terms in the MRC decomposition of `y_k`.
///
/// `channel_uncertainty` is returned as printed in the closed form, i.e.
/// without the `p_u η_k` factor; [`TermVariances::channel_uncertainty_scaled`]
/// gives the value that makes the terms add up to the SINR denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermVariances {
    /// `E|S0|²`
    pub desired: f64,
    /// `E|I1|²`
    pub estimation_error: f64,
    /// `E|I2|²`
    pub interference: f64,
    /// `E|I3|²`
    pub noise: f64,
    /// `E|I4|²`, printed form `N_t Σ_q α_qk²`
    pub channel_uncertainty: f64,
    ue_power_eta: f64,
}

impl TermVariances {
    pub fn channel_uncertainty_scaled(&self) -> f64 {
        self.ue_power_eta * self.channel_uncertainty
    }

    /// `E|S0|² / (E|I1|² + E|I2|² + E|I3|² + p_u η_k E|I4|²)`.
    pub fn composed_sinr(&self) -> f64 {
        let denom = self.estimation_error + self.interference + self.noise + self.channel_uncertainty_scaled();
        if self.desired == 0.0 {
            0.0
        } else {
            self.desired / denom
        }
    }
}

pub fn uplink_term_variances(
    profile: &FadingProfile,
    pc: &UplinkPowerControl,
    k: usize,
    link: &LinkBudget,
) -> TermVariances {
    let n_t = profile.antennas_per_ap as f64;
    let pu = link.ue_power;
    let a_k = profile.alpha.column(k);
    let sum_alpha: f64 = a_k.sum();
    let mut est_err = 0.0;
    let mut alpha_sq = 0.0;
    for q in 0..profile.sites() {
        est_err += (profile.beta[(q, k)] - a_k[q]) * a_k[q];
        alpha_sq += a_k[q] * a_k[q];
    }
    let interference: f64 =
        (0..profile.users()).filter(|&i| i != k).map(|i| pc.eta[i] * profile.beta.column(i).dot(&a_k)).sum();
    TermVariances {
        desired: pu * pc.eta[k] * n_t * n_t * sum_alpha * sum_alpha,
        estimation_error: pu * pc.eta[k] * n_t * est_err,
        interference: pu * n_t * interference,
        noise: link.noise_power * n_t * sum_alpha,
        channel_uncertainty: n_t * alpha_sq,
        ue_power_eta: pu * pc.eta[k],
    }
}

/// Closed-form uplink SINR of user `k`; zero when no site sees the user.
pub fn uplink_sinr(profile: &FadingProfile, pc: &UplinkPowerControl, k: usize, link: &LinkBudget) -> f64 {
    let n_t = profile.antennas_per_ap as f64;
    let pu = link.ue_power;
    let a_k = profile.alpha.column(k);
    let sum_alpha = a_k.sum();
    if sum_alpha == 0.0 {
        return 0.0;
    }
    let interference: f64 = (0..profile.users()).map(|i| pc.eta[i] * a_k.dot(&profile.beta.column(i))).sum();
    let num = pu * pc.eta[k] * n_t * n_t * sum_alpha * sum_alpha;
    let den = pu * n_t * interference + link.noise_power * n_t * sum_alpha;
    num / den
}

/// Spectral efficiency `log2(1 + γ)` in bit/s/Hz.
pub fn per_user_rate(sinr: f64) -> f64 {
    sinr.ln_1p() / std::f64::consts::LN_2
}
