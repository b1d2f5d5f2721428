//! Optimal transport with a jointly learned Mahalanobis ground metric.
//!
//! The transport plan `γ` and an SPD metric `A` are learned together by
//! alternating minimization: for fixed `γ` the metric has a closed form (the
//! solution of a Riccati equation, equivalently a geometric mean of SPD
//! matrices), and for fixed `A` the plan is an entropic OT problem solved
//! with Sinkhorn iterations. The [`adapt`] module turns learned plans into a
//! domain adaptation classifier through barycentric projection and 1-NN.
//!
//! Numeric code is generic over [`Scalar`] (`f32`, `f64`); the `*64`
//! aliases below fix the common double precision case.

pub mod adapt;
pub mod cloud;
pub mod data;
pub mod error;
pub mod gml;
pub mod scalar;
pub mod sinkhorn;
pub mod spd;

#[cfg(any(test, feature = "test-support"))]
pub mod test_support;

pub use cloud::{LabeledCloud, PointCloud};
pub use error::{Error, Result};
pub use scalar::{force_single_thread, Scalar};
pub use spd::{SpdMatrix, SymMatrix};

pub type SymMatrix64 = spd::SymMatrix<f64>;
pub type SpdMatrix64 = spd::SpdMatrix<f64>;
pub type PointCloud64 = cloud::PointCloud<f64>;
pub type LabeledCloud64 = cloud::LabeledCloud<f64>;
pub type Histogram64 = sinkhorn::Histogram<f64>;
pub type CostMatrix64 = sinkhorn::CostMatrix<f64>;
pub type TransportPlan64 = sinkhorn::TransportPlan<f64>;
pub type SinkhornConfig64 = sinkhorn::SinkhornConfig<f64>;
pub type GmlConfig64 = gml::GmlConfig<f64>;
pub type FitResult64 = gml::FitResult<f64>;
pub type RawDataset64 = data::RawDataset<f64>;

pub type SymMatrix32 = spd::SymMatrix<f32>;
pub type SpdMatrix32 = spd::SpdMatrix<f32>;
pub type PointCloud32 = cloud::PointCloud<f32>;
pub type TransportPlan32 = sinkhorn::TransportPlan<f32>;
pub type GmlConfig32 = gml::GmlConfig<f32>;
pub type FitResult32 = gml::FitResult<f32>;
