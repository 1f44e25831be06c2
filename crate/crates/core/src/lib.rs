//! Spectral efficiency and cost-effectiveness of cell-free massive MIMO with
//! a variable number of antennas per access point.
//!
//! `M` service antennas are split over `N_AP = M / N_t` sites that jointly
//! serve `K` single-antenna users. For every split the crate evaluates
//!
//! * uplink maximum-ratio combining ([`uplink`]),
//! * downlink conjugate beamforming and zero-forcing precoding ([`downlink`]),
//! * the deployment cost `N_AP (C_f + N_t C_v)` and the sum rate per cost
//!   unit ([`cost`]),
//!
//! over Monte-Carlo drops of user/AP placement and shadowing
//! ([`experiment`]). [`oracle`] re-derives every closed-form SINR by
//! simulating symbol transmission over sampled channels.
//!
//! ```
//! use cellfree::{experiment::run_drop, scenario::ScenarioConfig};
//!
//! let cfg = ScenarioConfig { total_antennas: 40, antennas_per_ap: 4, num_users: 4, chi_samples: 50, ..Default::default() };
//! let drop = run_drop(&cfg, 0)?;
//! assert_eq!(drop.zfp.per_user_se.len(), 4);
//! # Ok::<(), cellfree::Error>(())
//! ```

pub mod channel;
pub mod cost;
pub mod downlink;
mod error;
pub mod experiment;
pub mod oracle;
pub mod propagation;
pub mod scenario;
pub mod uplink;

pub use error::{Error, Result};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/uplink.md")]
    mod uplink {}
    #[doc = include_str!("../../../book/src/downlink.md")]
    mod downlink {}
    #[doc = include_str!("../../../book/src/cost.md")]
    mod cost {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
