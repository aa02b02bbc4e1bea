//! Outlier-robust two-view epipolar geometry estimation.
//!
//! The crate estimates the fundamental matrix between two views from noisy,
//! outlier-contaminated point correspondences by minimizing a smoothed ℓp
//! robust loss over the unit sphere. The core pieces:
//!
//! - [`geometry`]: correspondence types, the N×9 observation matrix,
//!   coordinate conditioning, and rank-2 projection.
//! - [`robust`]: the ℓp objective, its quadratic majorizer, and the
//!   closed-form auxiliary update that drives the solver.
//! - [`ihls`]: the iterative homogeneous least-squares solver (alternating
//!   β updates with smallest-eigenvector solves).
//! - [`implicit_diff`]: gradients through the solver via its stationarity
//!   conditions — one 9×9 adjoint solve plus analytic vector–Jacobian
//!   products, independent of the iteration count.
//! - [`pipeline`]: weighted initialization, recurrent reweighting
//!   refinement, and a RANSAC baseline.
//! - [`pose`], [`metrics`]: relative-pose recovery from an estimate and the
//!   angular-error / AUC evaluation protocol.
//! - [`synth`]: deterministic synthetic scenes with calibrated noise and
//!   outlier contamination for benchmarking.

pub mod geometry;
pub mod ihls;
pub mod implicit_diff;
pub mod io;
pub mod mat3;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod pose;
pub mod rng;
pub mod robust;
pub mod synth;

pub use geometry::{CorrespondenceSet, FundamentalMatrix, ObservationMatrix, PointPair};
pub use ihls::{solve_fundamental, IhlsConfig, IhlsResult};
pub use robust::RobustParams;
