//! Linear Gaussian state-space model, ideal simulation and outlier injection.

mod contaminate;
mod model;
mod simulate;

pub use contaminate::{contaminate, ContaminationLaw, ContaminationSpec, OutlierKind};
pub use model::{MatrixSeq, ModelSpec};
pub use simulate::{simulate_ideal, Trajectory};
