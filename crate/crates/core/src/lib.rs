//! Norm-parameterized steepest descent with momentum, Adam and Muon variants,
//! plus margin, alignment and approximate-KKT diagnostics for homogeneous models.

pub mod data;
pub mod ema;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod norms;
pub mod optim;
pub mod params;
pub mod runner;
pub mod verify;

pub use data::Dataset;
pub use losses::LossSpec;
pub use models::ModelSpec;
pub use norms::NormSpec;
pub use params::{Layout, ParamVector, Shape};
