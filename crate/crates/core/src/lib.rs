//! Anderson models on radial metric and discrete trees, reduced to half-line
//! transfer-matrix cocycles.

pub mod cli;
pub mod cocycle;
pub mod discrete;
pub mod error;
pub mod furstenberg;
pub mod halfline;
pub mod mat2;
pub mod model;
pub mod treeops;

pub use error::{Error, Result};
pub use mat2::{Mat2, ScaledMat2};
pub use model::{EnvironmentWord, SingleGenDistribution, SiteParams, TreeGeometry};
