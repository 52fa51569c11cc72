//! Differentially private one-vs-all mutual information ranking.
//!
//! Records `(id, feature, partition, observation)` are bounded per user,
//! clamped, summed at three levels of aggregation, released with Laplace noise
//! and noisy-threshold censoring, normalized into probabilities and ranked by
//! binary mutual information of feature presence against each partition.
//!
//! ```
//! use dpmi::{mi::MiParams, model::{PrivacyConfig, Record}, pipeline};
//!
//! let records = vec![
//!     Record::new("u1", "notebook.exe", "teacher", 1.0),
//!     Record::new("u2", "student.exe", "student", 1.0),
//! ];
//! let ranking = pipeline::rank_records(
//!     records,
//!     &PrivacyConfig::disabled(),
//!     &MiParams::default(),
//!     &Default::default(),
//! )
//! .unwrap();
//! assert_eq!(ranking.len(), 2);
//! assert!((ranking[0].mi - std::f64::consts::LN_2).abs() < 1e-12);
//! ```

pub mod aggregate;
pub mod dp;
mod error;
pub mod eval;
pub mod exec;
pub mod fmt;
pub mod mi;
pub mod model;
pub mod pipeline;

pub use error::{Error, Result};
