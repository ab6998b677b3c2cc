//! Two-sample testing for generative-model validation.
//!
//! The crate compares a candidate generator against a reference through
//! two-sample test statistics: sliced Wasserstein, marginal-averaged and
//! sliced Kolmogorov-Smirnov, Frechet Gaussian distance, maximum mean
//! discrepancy, the exact log-likelihood ratio, and the NPLM statistic (a
//! Nystrom kernel logistic classifier scored with an extended-likelihood
//! metric). Null distributions are calibrated empirically by repeated
//! reference-vs-reference tests; sensitivity is the smallest detectable
//! epsilon-deformation, found by a noisy bisection with common random
//! numbers.
//!
//! Typical flow:
//!
//! ```
//! use gentest_core::calibration::build_null;
//! use gentest_core::deformations::DeformationKind;
//! use gentest_core::generators::GeneratorSpec;
//! use gentest_core::power::{bisect_epsilon, BisectionConfig};
//! use gentest_core::rng::RngStream;
//! use gentest_core::statistics::{StatisticKind, StatisticSpec};
//!
//! let g = GeneratorSpec::standard_normal(3).unwrap();
//! let stat = StatisticSpec::new(StatisticKind::KsBar)
//!     .resolve(&g, 100, 100, &mut RngStream::new(7, 0))
//!     .unwrap();
//! let null = build_null(&stat, &g, 100, 100, 200, &RngStream::new(7, 1)).unwrap();
//! let cfg = BisectionConfig { repeats: 20, ..Default::default() };
//! let res = bisect_epsilon(
//!     &stat, &g, DeformationKind::MuShift, 0.05, &null, 100, 100, &cfg,
//!     &RngStream::new(7, 2),
//! )
//! .unwrap();
//! assert!(res.eps_low <= res.eps_alpha && res.eps_alpha <= res.eps_up);
//! ```

pub mod calibration;
pub mod deformations;
pub mod error;
pub mod generators;
pub mod linalg;
pub mod nplm;
pub mod power;
pub mod presets;
pub mod rng;
pub mod sample;
pub mod sample_io;
pub mod statistics;

pub use error::{Error, ErrorCategory, Result};
pub use rng::RngStream;
pub use sample::Sample;

/// SHA-256 hex digest, as used for artifact fingerprints and config hashes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    generators::hex_digest(bytes)
}
