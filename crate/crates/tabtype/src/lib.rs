//! Column type inference for tabular data.
//!
//! Real-world tables mix honest values with missing-data codes ("NA", "-99",
//! "?") and outright anomalies, which breaks naive type sniffing. This crate
//! models each column as a mixture: a column has one latent type, and every
//! cell is either a draw from that type's generative model, a missing-data
//! code, or an anomaly. Each generative model is a probabilistic
//! finite-state machine (PFSM) that assigns an exact probability to every
//! string, so both the column-type posterior and the per-cell verdicts come
//! from exact, closed-form inference — no sampling, no heuristics.
//!
//! The pieces:
//!
//! - [`pfsm`]: the machines themselves — construction, normalization
//!   checks, exact string probabilities via the scaled forward algorithm,
//!   a softmax reparameterization that keeps every machine valid during
//!   gradient steps, brute-force oracles, and a regex-to-machine compiler
//!   for custom types.
//! - [`machines`]: the shipped catalog (boolean, date, float, integer,
//!   string, plus the frozen missing/anomaly machines and an optional
//!   catch-all "xtype"), and manifest-driven catalog customization.
//! - [`inference`]: column-type posteriors, per-row type/missing/anomaly
//!   posteriors, labeling with ambiguity flags, and table-level reports.
//! - [`training`]: discriminative training of the regular machines on
//!   labeled columns by conjugate-gradient ascent, with an exact analytic
//!   gradient (finite-difference checked).
//! - [`eval`]: Jaccard index, confusion matrices, ROC/AUC, McNemar and
//!   paired t-tests, and a least-squares helper for runtime scaling checks.
//!
//! # Quick start
//!
//! ```
//! use tabtype::inference::{annotate, AnnotateOptions, Column, RowLabel, TypeSystem};
//! use tabtype::machines::MachineCatalog;
//!
//! let system = TypeSystem::with_defaults(MachineCatalog::builtin());
//! let column = Column::new(
//!     "survived",
//!     vec!["1".into(), "0".into(), "NULL".into(), "1".into(), "yes".into()],
//! );
//!
//! let annotation = annotate(&column, &system, &AnnotateOptions::default())?;
//! assert_eq!(annotation.inferred_type, "boolean");
//! assert_eq!(
//!     annotation.row_labels,
//!     [RowLabel::Type, RowLabel::Type, RowLabel::Missing, RowLabel::Type, RowLabel::Type],
//! );
//! # Ok::<(), tabtype::Error>(())
//! ```
//!
//! Columns of "0"s and "1"s are the canonical hard case: booleans, integers,
//! and floats all explain them, and the posterior above weighs the machines'
//! exact probabilities rather than regex precedence. Training
//! ([`training::train`]) sharpens those decisions further on labeled data.

mod error;
mod numeric;

pub mod eval;
pub mod inference;
pub mod machines;
pub mod pfsm;
pub mod training;

pub use error::{Error, Result};
