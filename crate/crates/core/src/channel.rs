//! Small-scale channel sampling.
//!
//! Estimates and estimation errors are drawn straight from their MMSE
//! marginals, `ĝ ~ CN(0, α)` and `g̃ ~ CN(0, β - α)`, which are independent.
//! A `CN(0, v)` draw is `sqrt(v / 2) * (a + ib)` with `a`, `b` independent
//! standard normals (ziggurat sampler from `rand_distr`).

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::propagation::FadingProfile;

pub type C64 = Complex<f64>;

/// One `M x K` realization of true channels, estimates and errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub g_true: DMatrix<C64>,
    pub g_hat: DMatrix<C64>,
    pub g_err: DMatrix<C64>,
}

#[inline]
pub fn complex_normal<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> C64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Antenna-level `M x K` copies of `beta` and `alpha`: row `q` of the site
/// profile is repeated `N_t` times.
pub fn expand_site_to_antennas(profile: &FadingProfile) -> (DMatrix<f64>, DMatrix<f64>) {
    let expand = |site: &DMatrix<f64>| {
        DMatrix::from_fn(profile.antennas(), profile.users(), |m, k| site[(profile.site_of(m), k)])
    };
    (expand(&profile.beta), expand(&profile.alpha))
}

/// Draws `(ĝ, g̃)` entry by entry in column-major order.
pub fn sample_channel<R: Rng + ?Sized>(profile: &FadingProfile, rng: &mut R) -> Result<ChannelSample> {
    let (m_total, users) = (profile.antennas(), profile.users());
    let err_var = error_variances(profile)?;
    let mut g_hat = DMatrix::zeros(m_total, users);
    let mut g_err = DMatrix::zeros(m_total, users);
    for k in 0..users {
        for m in 0..m_total {
            let q = profile.site_of(m);
            g_hat[(m, k)] = complex_normal(profile.alpha[(q, k)], rng);
            g_err[(m, k)] = complex_normal(err_var[(q, k)], rng);
        }
    }
    let g_true = &g_hat + &g_err;
    Ok(ChannelSample { g_true, g_hat, g_err })
}

/// Draws only the estimate matrix `Ĝ`, for quantities that depend on nothing
/// else.
pub fn sample_estimates<R: Rng + ?Sized>(profile: &FadingProfile, rng: &mut R) -> DMatrix<C64> {
    let mut g_hat = DMatrix::zeros(profile.antennas(), profile.users());
    for k in 0..profile.users() {
        for m in 0..profile.antennas() {
            g_hat[(m, k)] = complex_normal(profile.alpha[(profile.site_of(m), k)], rng);
        }
    }
    g_hat
}

/// Per-site `β - α`, rejecting profiles where an estimate would carry more
/// power than the channel.
pub fn error_variances(profile: &FadingProfile) -> Result<DMatrix<f64>> {
    let diff = &profile.beta - &profile.alpha;
    for k in 0..diff.ncols() {
        for q in 0..diff.nrows() {
            let v = diff[(q, k)];
            if v < 0.0 {
                return Err(Error::Invariant(format!("beta < alpha at site {q}, user {k} (difference {v:e})")));
            }
        }
    }
    Ok(diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{stream_rng, RngStream};

    fn profile(beta: &[f64], alpha: &[f64], sites: usize, n_t: usize) -> FadingProfile {
        let users = beta.len() / sites;
        FadingProfile {
            beta: DMatrix::from_row_slice(sites, users, beta),
            alpha: DMatrix::from_row_slice(sites, users, alpha),
            antennas_per_ap: n_t,
        }
    }

    #[test]
    fn expansion_repeats_site_rows() {
        let p = profile(&[1.0, 2.0, 3.0, 4.0], &[0.5, 1.0, 1.5, 2.0], 2, 3);
        let (b, a) = expand_site_to_antennas(&p);
        assert_eq!(b.nrows(), 6);
        for m in 0..6 {
            let q = m / 3;
            assert_eq!(b.row(m), p.beta.row(q));
            assert_eq!(a.row(m), p.alpha.row(q));
        }
        for k in 0..2 {
            assert_eq!(b.column(k).sum(), 3.0 * p.beta.column(k).sum());
        }
        let ident = profile(&[1.0, 2.0], &[0.5, 1.0], 2, 1);
        assert_eq!(expand_site_to_antennas(&ident).0, ident.beta);
    }

    #[test]
    fn perfect_csi_has_no_error() {
        let p = profile(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0], 2, 2);
        let s = sample_channel(&p, &mut stream_rng(1, RngStream::SmallScale)).unwrap();
        assert!(s.g_err.iter().all(|z| z.norm() == 0.0));
        assert_eq!(s.g_true, s.g_hat);
    }

    #[test]
    fn rejects_alpha_above_beta() {
        let p = profile(&[1.0, 2.0], &[1.0, 2.5], 1, 1);
        assert!(matches!(sample_channel(&p, &mut stream_rng(1, RngStream::SmallScale)), Err(Error::Invariant(_))));
    }

    #[test]
    fn moments_and_independence() {
        let (beta, alpha) = (3.0e-9, 1.0e-9);
        let p = profile(&[beta], &[alpha], 1, 1);
        let mut rng = stream_rng(2, RngStream::SmallScale);
        let n = 100_000;
        let (mut hat, mut err, mut tot, mut cross) = (0.0, 0.0, 0.0, C64::new(0.0, 0.0));
        for _ in 0..n {
            let s = sample_channel(&p, &mut rng).unwrap();
            let (h, e) = (s.g_hat[(0, 0)], s.g_err[(0, 0)]);
            assert_eq!(s.g_true[(0, 0)], h + e);
            hat += h.norm_sqr();
            err += e.norm_sqr();
            tot += s.g_true[(0, 0)].norm_sqr();
            cross += h * e.conj();
        }
        let n = n as f64;
        assert!((hat / n / alpha - 1.0).abs() < 0.02);
        assert!((err / n / (beta - alpha) - 1.0).abs() < 0.02);
        assert!((tot / n / beta - 1.0).abs() < 0.02);
        let corr = (cross / n).norm() / (alpha * (beta - alpha)).sqrt();
        assert!(corr < 0.01, "{corr}");
    }

    #[test]
    fn reproducible() {
        let p = profile(&[1.0, 2.0, 3.0, 4.0], &[0.5, 1.0, 1.5, 2.0], 2, 2);
        let a = sample_channel(&p, &mut stream_rng(8, RngStream::SmallScale)).unwrap();
        let b = sample_channel(&p, &mut stream_rng(8, RngStream::SmallScale)).unwrap();
        assert_eq!(a, b);
    }
}
