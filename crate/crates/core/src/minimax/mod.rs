//! SO/eSO minimax filtering for one step: the clipping multiplier `rho`, the
//! least favorable contamination, risk values, and the least favorable radius.
//!
//! Everything is phrased through `D(y) = E_id[X | Y = y] - E X` (the AO/SO
//! problem) or `D~(y) = y - E_id[X | Y = y]` in an additive model (the IO
//! problem), whose magnitude law is handed to the expectation engines.

mod pair;
mod radius;
mod saddle;

pub use pair::{GaussianIdealSpec, GaussianPair, GenericIdeal, IdealMoments, IdealPair, Residual};
pub use radius::{lfr_a, lfr_b, solve_least_favorable_radius, RadiusSolution, TablePoint};
pub use saddle::{
    density_trace, density_trace_csv, eso_value, gaussian_rho, io_saddle, lf_density_weight,
    minimax_risk_eso, risk_under_contamination, sample_least_favorable, simulate_risk, solve_rho,
    Contamination, SaddlePoint,
};
