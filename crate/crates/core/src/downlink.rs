//! Downlink precoding: conjugate beamforming in closed form and zero-forcing
//! with Monte-Carlo expectations.
//!
//! # Zero-forcing conventions
//!
//! The un-scaled precoder is `W = Ĝ* (Ĝᵀ Ĝ*)⁻¹`, so `Ĝᵀ W = I_K`. With a
//! common power coefficient `η` the transmitted precoder is `B = √η W`.
//!
//! Two expectations over `Ĝ` drive the zero-forcing SINR:
//!
//! * `δ_mk = E|W_mk|²`, the per-antenna power of user `k`'s beam. The common
//!   coefficient is `η = 1 / max_m Σ_k δ_mk`, which puts the most loaded
//!   antenna exactly at `p_d`.
//! * `χ_i^k = E|g̃_kᵀ W e_i|²`, the leakage of beam `i` through user `k`'s
//!   estimation error. Since `g̃_k` is independent of `Ĝ` with covariance
//!   `diag(β_mk - α_mk)`, this reduces to `χ_i^k = Σ_m (β_mk - α_mk) δ_mi`,
//!   so both come from one pass over the samples.
//!
//! The pseudo-inverse is computed on the column-equilibrated Gram matrix
//! (unit diagonal) with a Cholesky factorization. A factorization failure or
//! a reciprocal condition estimate below [`SINGULAR_RCOND`] marks the draw
//! singular; singular draws are redrawn and more than 1% of them is an error.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::channel::{sample_estimates, C64};
use crate::error::{Error, Result};
use crate::propagation::FadingProfile;
use crate::scenario::LinkBudget;

/// Draws whose Cholesky pivot ratio squared falls below this are singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

/// Per-site conjugate-beamforming coefficients, `η_qk = η_q` for every user.
#[derive(Debug, Clone, PartialEq)]
pub struct CbfPowerControl {
    pub eta_site: Vec<f64>,
}

/// Full-power rule `η_q = 1 / Σ_k α_qk`.
pub fn cbf_power(profile: &FadingProfile) -> Result<CbfPowerControl> {
    let eta_site = (0..profile.sites())
        .map(|q| {
            let total = profile.alpha.row(q).sum();
            if total > 0.0 {
                Ok(1.0 / total)
            } else {
                Err(Error::DeadSite { site: q })
            }
        })
        .collect::<Result<_>>()?;
    Ok(CbfPowerControl { eta_site })
}

impl CbfPowerControl {
    /// Expected transmit power of any antenna of site `q`.
    pub fn expected_antenna_power(&self, profile: &FadingProfile, q: usize, link: &LinkBudget) -> f64 {
        link.ap_power * self.eta_site[q] * profile.alpha.row(q).sum()
    }
}

pub fn cbf_sinr(profile: &FadingProfile, pc: &CbfPowerControl, k: usize, link: &LinkBudget) -> f64 {
    let n_t = profile.antennas_per_ap as f64;
    let mut coherent = 0.0;
    let mut leakage = 0.0;
    for q in 0..profile.sites() {
        let eta = pc.eta_site[q];
        coherent += eta.sqrt() * profile.alpha[(q, k)];
        leakage += profile.beta[(q, k)] * eta * profile.alpha.row(q).sum();
    }
    let num = link.ap_power * n_t * n_t * coherent * coherent;
    if num == 0.0 {
        return 0.0;
    }
    num / (link.noise_power + link.ap_power * n_t * leakage)
}

/// Un-scaled zero-forcing precoder of one estimate matrix.
#[derive(Debug, Clone)]
pub struct ZeroForcing {
    /// `W`, `M x K`.
    pub precoder: DMatrix<C64>,
    /// Reciprocal condition estimate of the equilibrated Gram matrix.
    pub rcond: f64,
}

impl ZeroForcing {
    pub fn new(g_hat: &DMatrix<C64>) -> Result<Self> {
        let (solved, norms, rcond) = equilibrated_solve(g_hat)?;
        // W = (D⁻¹ X)ᵀ with X = Gram_n⁻¹ Ĝ_nᴴ
        let precoder = DMatrix::from_fn(g_hat.nrows(), g_hat.ncols(), |m, k| solved[(k, m)] / norms[k]);
        Ok(ZeroForcing { precoder, rcond })
    }

    /// Largest off-diagonal magnitude of `Ĝᵀ W` together with the largest
    /// deviation of its diagonal from one.
    pub fn residual(&self, g_hat: &DMatrix<C64>) -> (f64, f64) {
        let prod = g_hat.transpose() * &self.precoder;
        let mut off = 0.0f64;
        let mut diag = 0.0f64;
        for i in 0..prod.nrows() {
            for j in 0..prod.ncols() {
                if i == j {
                    diag = diag.max((prod[(i, j)] - C64::new(1.0, 0.0)).norm());
                } else {
                    off = off.max(prod[(i, j)].norm());
                }
            }
        }
        (off, diag)
    }
}

/// Returns `X = Gram_n⁻¹ Ĝ_nᴴ` (`K x M`), the column norms of `Ĝ` and the
/// reciprocal condition estimate.
fn equilibrated_solve(g_hat: &DMatrix<C64>) -> Result<(DMatrix<C64>, DVector<f64>, f64)> {
    let norms = DVector::from_iterator(g_hat.ncols(), g_hat.column_iter().map(|c| c.norm()));
    if norms.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
        return Err(Error::Singular { condition: f64::INFINITY });
    }
    let mut normalized = g_hat.clone();
    for (k, mut col) in normalized.column_iter_mut().enumerate() {
        col /= C64::new(norms[k], 0.0);
    }
    let gram = normalized.ad_mul(&normalized);
    let chol = gram.cholesky().ok_or(Error::Singular { condition: f64::INFINITY })?;
    let pivots = chol.l_dirty().diagonal().map(|z| z.re);
    let rcond = (pivots.min() / pivots.max()).powi(2);
    if rcond.is_nan() || rcond < SINGULAR_RCOND {
        return Err(Error::Singular { condition: 1.0 / rcond });
    }
    let solved = chol.solve(&normalized.adjoint());
    Ok((solved, norms, rcond))
}

/// `B = W D` with `D = diag(√η_k)`.
pub fn zfp_precoder(g_hat: &DMatrix<C64>, eta: &[f64]) -> Result<DMatrix<C64>> {
    let mut b = ZeroForcing::new(g_hat)?.precoder;
    for (k, mut col) in b.column_iter_mut().enumerate() {
        col *= C64::new(eta[k].sqrt(), 0.0);
    }
    Ok(b)
}

/// Common zero-forcing power coefficient `η_1 = … = η_K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZfpPowerControl {
    pub eta_common: f64,
}

/// `χ_i^k` stored at `(k, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiMatrix {
    pub chi: DMatrix<f64>,
}

/// Monte-Carlo zero-forcing expectations of one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfpStatistics {
    /// `δ_mk`, `M x K`.
    pub delta: DMatrix<f64>,
    pub samples: usize,
    /// Singular draws that were rejected and redrawn.
    pub singular_draws: usize,
}

impl ZfpStatistics {
    pub fn power_control(&self) -> ZfpPowerControl {
        let max_load = self.delta.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
        ZfpPowerControl { eta_common: if max_load > 0.0 { 1.0 / max_load } else { 0.0 } }
    }

    pub fn chi(&self, profile: &FadingProfile) -> ChiMatrix {
        let users = profile.users();
        let mut chi = DMatrix::zeros(users, users);
        for m in 0..self.delta.nrows() {
            let q = profile.site_of(m);
            for k in 0..users {
                let s = profile.beta[(q, k)] - profile.alpha[(q, k)];
                if s == 0.0 {
                    continue;
                }
                for i in 0..users {
                    chi[(k, i)] += s * self.delta[(m, i)];
                }
            }
        }
        ChiMatrix { chi }
    }

    /// Expected transmit power of antenna `m` under `eta`.
    pub fn expected_antenna_power(&self, m: usize, pc: ZfpPowerControl, link: &LinkBudget) -> f64 {
        link.ap_power * pc.eta_common * self.delta.row(m).sum()
    }
}

/// Estimates `δ` from `samples` accepted draws of `Ĝ`.
pub fn zfp_statistics<R: Rng + ?Sized>(profile: &FadingProfile, samples: usize, rng: &mut R) -> Result<ZfpStatistics> {
    if profile.antennas() < profile.users() {
        return Err(Error::config(format!(
            "zero-forcing needs at least as many antennas ({}) as users ({})",
            profile.antennas(),
            profile.users()
        )));
    }
    if samples == 0 {
        return Err(Error::EmptySamples);
    }
    let (m_total, users) = (profile.antennas(), profile.users());
    let mut acc = DMatrix::<f64>::zeros(m_total, users);
    let mut accepted = 0;
    let mut singular = 0;
    while accepted < samples {
        let g_hat = sample_estimates(profile, rng);
        match equilibrated_solve(&g_hat) {
            Ok((solved, norms, _)) => {
                for k in 0..users {
                    let scale = 1.0 / (norms[k] * norms[k]);
                    for m in 0..m_total {
                        acc[(m, k)] += solved[(k, m)].norm_sqr() * scale;
                    }
                }
                accepted += 1;
            }
            Err(Error::Singular { .. }) => {
                singular += 1;
                if singular * 100 > samples {
                    return Err(Error::TooManySingular { singular, requested: samples });
                }
            }
            Err(e) => return Err(e),
        }
    }
    acc /= samples as f64;
    Ok(ZfpStatistics { delta: acc, samples, singular_draws: singular })
}

/// Power coefficient from its own set of draws.
pub fn zfp_power<R: Rng + ?Sized>(profile: &FadingProfile, samples: usize, rng: &mut R) -> Result<ZfpPowerControl> {
    Ok(zfp_statistics(profile, samples, rng)?.power_control())
}

/// `χ` from its own set of draws.
pub fn zfp_chi<R: Rng + ?Sized>(profile: &FadingProfile, samples: usize, rng: &mut R) -> Result<ChiMatrix> {
    Ok(zfp_statistics(profile, samples, rng)?.chi(profile))
}

pub fn zfp_sinr(pc: ZfpPowerControl, chi: &ChiMatrix, k: usize, link: &LinkBudget) -> f64 {
    let eta = pc.eta_common;
    if eta == 0.0 {
        return 0.0;
    }
    let leakage: f64 = chi.chi.row(k).iter().map(|c| eta * c).sum();
    link.ap_power * eta / (link.noise_power + link.ap_power * leakage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_channel;
    use crate::scenario::{stream_rng, RngStream};

    const LINK: LinkBudget = LinkBudget { ue_power: 0.2, ap_power: 0.2, noise_power: 1.581_138_830_084_19e-13 };

    fn symmetric(sites: usize, users: usize, n_t: usize, beta: f64) -> FadingProfile {
        FadingProfile::from_beta(DMatrix::from_element(sites, users, beta), n_t, LINK.ue_power, LINK.noise_power)
    }

    fn random_profile(seed: u64, sites: usize, users: usize, n_t: usize) -> FadingProfile {
        let mut rng = stream_rng(seed, RngStream::Shadowing);
        let beta = DMatrix::from_fn(sites, users, |_, _| 10f64.powf(-12.0 + 3.0 * rng.random::<f64>()));
        FadingProfile::from_beta(beta, n_t, LINK.ue_power, LINK.noise_power)
    }

    /// Per-antenna form with `N_t = 1` semantics, written independently of
    /// the site-level closed form.
    fn cbf_sinr_single_antenna(beta: &DMatrix<f64>, alpha: &DMatrix<f64>, eta: &DMatrix<f64>, k: usize) -> f64 {
        let (m_total, users) = beta.shape();
        let mut signal = 0.0;
        for m in 0..m_total {
            signal += eta[(m, k)].sqrt() * alpha[(m, k)];
        }
        let mut leak = 0.0;
        for i in 0..users {
            for m in 0..m_total {
                leak += eta[(m, i)] * alpha[(m, i)] * beta[(m, k)];
            }
        }
        LINK.ap_power * signal * signal / (LINK.noise_power + LINK.ap_power * leak)
    }

    #[test]
    fn cbf_power_examples() {
        let p = FadingProfile {
            beta: DMatrix::from_element(1, 1, 1.0),
            alpha: DMatrix::from_element(1, 1, 0.5),
            antennas_per_ap: 1,
        };
        assert_eq!(cbf_power(&p).unwrap().eta_site, vec![2.0]);
        let p = FadingProfile {
            beta: DMatrix::from_element(3, 4, 1.0),
            alpha: DMatrix::from_element(3, 4, 0.25),
            antennas_per_ap: 2,
        };
        assert!(cbf_power(&p).unwrap().eta_site.iter().all(|e| (e - 1.0).abs() < 1e-15));
        let mut dead = p.clone();
        dead.alpha.row_mut(1).fill(0.0);
        assert!(matches!(cbf_power(&dead), Err(Error::DeadSite { site: 1 })));
    }

    #[test]
    fn cbf_full_power_budget() {
        let p = random_profile(4, 6, 3, 2);
        let pc = cbf_power(&p).unwrap();
        for q in 0..p.sites() {
            assert!((pc.expected_antenna_power(&p, q, &LINK) - LINK.ap_power).abs() < 1e-15);
        }
        // Monte-Carlo audit of E|B_mk|² summed over users
        let mut rng = stream_rng(4, RngStream::SmallScale);
        let n = 20_000;
        let mut power = vec![0.0; p.antennas()];
        for _ in 0..n {
            let s = sample_channel(&p, &mut rng).unwrap();
            for (m, pw) in power.iter_mut().enumerate() {
                let eta = pc.eta_site[p.site_of(m)];
                *pw += LINK.ap_power * eta * s.g_hat.row(m).iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
        for pw in power {
            assert!((pw / n as f64 / LINK.ap_power - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn cbf_reduces_to_single_antenna_form() {
        for (sites, n_t) in [(12, 1), (5, 3)] {
            let p = random_profile(7, sites, 4, n_t);
            let pc = cbf_power(&p).unwrap();
            let (b, a) = crate::channel::expand_site_to_antennas(&p);
            let eta = DMatrix::from_fn(p.antennas(), 4, |m, _| pc.eta_site[p.site_of(m)]);
            for k in 0..4 {
                let closed = cbf_sinr(&p, &pc, k, &LINK);
                let per_antenna = cbf_sinr_single_antenna(&b, &a, &eta, k);
                assert!((closed / per_antenna - 1.0).abs() < 1e-12, "{closed} {per_antenna}");
            }
        }
        let zero =
            FadingProfile { beta: DMatrix::from_element(2, 2, 1e-10), alpha: DMatrix::zeros(2, 2), antennas_per_ap: 1 };
        assert_eq!(cbf_sinr(&zero, &CbfPowerControl { eta_site: vec![1.0, 1.0] }, 0, &LINK), 0.0);
    }

    #[test]
    fn zero_forcing_identities() {
        let p = random_profile(1, 10, 4, 3);
        let mut rng = stream_rng(1, RngStream::SmallScale);
        for _ in 0..50 {
            let g = sample_estimates(&p, &mut rng);
            let zf = ZeroForcing::new(&g).unwrap();
            let (off, diag) = zf.residual(&g);
            assert!(off < 1e-9 && diag < 1e-9, "{off} {diag}");
            let b = zfp_precoder(&g, &[0.5, 1.0, 2.0, 4.0]).unwrap();
            let gb = g.transpose() * &b;
            for k in 0..4 {
                assert!((gb[(k, k)].re - [0.5f64, 1.0, 2.0, 4.0][k].sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_forcing_scalar_and_square() {
        let g = DMatrix::from_column_slice(3, 1, &[C64::new(1.0, 2.0), C64::new(-0.5, 0.1), C64::new(0.0, -1.0)]);
        let w = ZeroForcing::new(&g).unwrap().precoder;
        let norm_sq: f64 = g.iter().map(|z| z.norm_sqr()).sum();
        for m in 0..3 {
            assert!((w[(m, 0)] - g[(m, 0)].conj() / norm_sq).norm() < 1e-15);
        }

        let sq = DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(1.0, 0.5), C64::new(0.2, -1.0), C64::new(-0.3, 0.0), C64::new(2.0, 1.0)],
        );
        let b = zfp_precoder(&sq, &[4.0, 9.0]).unwrap();
        let inv_t = sq.transpose().try_inverse().unwrap();
        let expected = inv_t * DMatrix::from_diagonal(&DVector::from_vec(vec![C64::new(2.0, 0.0), C64::new(3.0, 0.0)]));
        assert!((b - expected).norm() < 1e-12);
    }

    #[test]
    fn rank_deficient_is_singular() {
        let col = [C64::new(1.0, 1.0), C64::new(2.0, 0.0), C64::new(0.0, 1.0)];
        let g = DMatrix::from_fn(3, 2, |m, _| col[m]);
        assert!(matches!(ZeroForcing::new(&g), Err(Error::Singular { .. })));
        let zero = DMatrix::<C64>::zeros(3, 2);
        assert!(matches!(ZeroForcing::new(&zero), Err(Error::Singular { .. })));
    }

    #[test]
    fn degenerate_profile_errors_out() {
        // a user with no channel makes every draw singular
        let mut p = random_profile(2, 4, 2, 2);
        p.alpha.column_mut(1).fill(0.0);
        let err = zfp_statistics(&p, 100, &mut stream_rng(2, RngStream::SmallScale)).unwrap_err();
        assert!(matches!(err, Error::TooManySingular { singular: 2, requested: 100 }));
        assert!(err.is_numerical());
    }

    #[test]
    fn chi_vanishes_with_perfect_csi() {
        let mut p = random_profile(3, 8, 3, 2);
        p.alpha = p.beta.clone();
        let stats = zfp_statistics(&p, 50, &mut stream_rng(3, RngStream::SmallScale)).unwrap();
        assert!(stats.chi(&p).chi.iter().all(|c| *c == 0.0));
        let pc = stats.power_control();
        let chi = stats.chi(&p);
        let g = zfp_sinr(pc, &chi, 0, &LINK);
        assert!((g / (LINK.ap_power * pc.eta_common / LINK.noise_power) - 1.0).abs() < 1e-15);
        assert_eq!(zfp_sinr(ZfpPowerControl { eta_common: 0.0 }, &chi, 0, &LINK), 0.0);
    }

    #[test]
    fn chi_symmetric_scenario() {
        let p = symmetric(16, 4, 2, 1e-11);
        let chi = zfp_chi(&p, 10_000, &mut stream_rng(5, RngStream::SmallScale)).unwrap();
        let mean = chi.chi.mean();
        let spread = chi.chi.iter().map(|c| (c - mean).abs()).fold(0.0, f64::max) / mean;
        assert!(spread < 0.05, "{spread}");
    }

    #[test]
    fn chi_matches_brute_force_leakage() {
        // Same Ĝ draws: the closed reduction Σ_m s_mk |W_mi|² against the
        // empirical |g̃_kᵀ W e_i|² with sampled errors.
        let p = random_profile(6, 4, 2, 2);
        let n = 100_000;
        let mut rng = stream_rng(6, RngStream::SmallScale);
        let mut direct = DMatrix::<f64>::zeros(2, 2);
        let mut brute = DMatrix::<f64>::zeros(2, 2);
        let mut accepted = 0;
        while accepted < n {
            let s = sample_channel(&p, &mut rng).unwrap();
            let Ok(zf) = ZeroForcing::new(&s.g_hat) else { continue };
            accepted += 1;
            for k in 0..2 {
                for i in 0..2 {
                    let mut leak = C64::new(0.0, 0.0);
                    let mut expected = 0.0;
                    for m in 0..p.antennas() {
                        let q = p.site_of(m);
                        leak += s.g_err[(m, k)] * zf.precoder[(m, i)];
                        expected += (p.beta[(q, k)] - p.alpha[(q, k)]) * zf.precoder[(m, i)].norm_sqr();
                    }
                    brute[(k, i)] += leak.norm_sqr();
                    direct[(k, i)] += expected;
                }
            }
        }
        for (d, b) in direct.iter().zip(brute.iter()) {
            assert!((b / d - 1.0).abs() < 0.01, "{b} vs {d}");
        }
    }

    #[test]
    fn delta_homogeneity() {
        // scaling β and α by c scales Ĝ by √c on identical draws
        let p = random_profile(8, 6, 3, 2);
        let c = 7.5;
        let mut scaled = p.clone();
        scaled.beta *= c;
        scaled.alpha *= c;
        let a = zfp_statistics(&p, 200, &mut stream_rng(8, RngStream::SmallScale)).unwrap();
        let b = zfp_statistics(&scaled, 200, &mut stream_rng(8, RngStream::SmallScale)).unwrap();
        for (x, y) in a.delta.iter().zip(b.delta.iter()) {
            assert!((y * c / x - 1.0).abs() < 1e-10);
        }
        assert!((b.power_control().eta_common / a.power_control().eta_common / c - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zfp_sinr_decreases_with_chi() {
        let chi = ChiMatrix { chi: DMatrix::from_row_slice(2, 2, &[1e-3, 2e-3, 5e-4, 1e-3]) };
        let pc = ZfpPowerControl { eta_common: 1e-10 };
        let base = zfp_sinr(pc, &chi, 0, &LINK);
        for i in 0..2 {
            let mut bumped = chi.clone();
            bumped.chi[(0, i)] *= 1.01;
            assert!(zfp_sinr(pc, &bumped, 0, &LINK) < base);
        }
    }

    #[test]
    fn zfp_power_audit() {
        let p = random_profile(9, 10, 3, 2);
        let stats = zfp_statistics(&p, 20_000, &mut stream_rng(9, RngStream::SmallScale)).unwrap();
        let pc = stats.power_control();
        let loads: Vec<f64> = (0..p.antennas()).map(|m| stats.expected_antenna_power(m, pc, &LINK)).collect();
        let max = loads.iter().cloned().fold(0.0, f64::max);
        assert!((max - LINK.ap_power).abs() < 1e-12);

        let fresh = zfp_statistics(&p, 20_000, &mut stream_rng(10, RngStream::SmallScale)).unwrap();
        for m in 0..p.antennas() {
            assert!(fresh.expected_antenna_power(m, pc, &LINK) < LINK.ap_power * 1.02);
        }
        let fresh_max = (0..p.antennas()).map(|m| fresh.expected_antenna_power(m, pc, &LINK)).fold(0.0, f64::max);
        assert!((fresh_max / LINK.ap_power - 1.0).abs() < 0.02, "{fresh_max}");
    }
}
