//! Memory-bounded spatial additive mixed models.
//!
//! Fits models of the form `y = X b + sum_p A_p V(theta_p) u_p + e` where each
//! additive term is a residual spatial process, a spatially varying
//! coefficient, or a group random effect. Spatial terms use approximate Moran
//! eigenvector bases anchored at k-means inducing points, so basis rows can be
//! generated block by block. The restricted likelihood is evaluated from
//! inner-product matrices accumulated in one streaming pass; its per-iteration
//! cost and the peak memory are both independent of the sample size.

pub mod accumulate;
pub mod basis;
#[cfg(any(test, feature = "dense-oracle"))]
pub mod dense_oracle;
pub mod error;
pub mod memtrack;
pub mod model;
pub mod predict;
pub mod reml;
pub mod sim;
pub mod terms;

pub use accumulate::InnerProductStore;
pub use basis::{BasisFactory, KnotEigen, KnotSet, ScalingMode, SiteSet};
pub use error::{Result, SammError};
pub use model::ModelFile;
pub use predict::Predictor;
pub use reml::{FitControls, FitResult, ModelSpec};
pub use terms::{GroupIndex, TermKind, TermSpec, VarianceParams};
