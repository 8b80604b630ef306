//! Skorokhod embeddings of centred atomic laws built from a curve in the
//! potential picture, executed by Brownian motion whose excursions are skewed
//! as a function of local time.
//!
//! The pipeline is: [`measure`] (target law and its potential) → [`curve`]
//! (the driving curve and its admissibility) → [`tangent`] (tangent slopes
//! and contacts) → [`transform`] (local-time change and barriers) → [`law`]
//! (analytic stopped laws) and [`simulate`] (Monte Carlo check).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curve;
pub mod error;
pub mod law;
pub mod measure;
mod quad;
pub mod simulate;
pub mod tangent;
pub mod transform;

pub use curve::{AdmissibilityReport, Breakpoint, CurvePreset, EmbeddingCurve};
pub use error::{EmbedError, Result};
pub use law::{exit_law, expected_psi, ExitLaw, Psi};
pub use measure::{quantize, CenteredAtomicMeasure, DensitySpec, PotentialFunction};
pub use simulate::{simulate_paths, PathEnsemble, Scheme, SimConfig};
pub use tangent::{tangent_at, GridControl, TangentProfile};
pub use transform::{build_embedding, EmbeddingSpec};
