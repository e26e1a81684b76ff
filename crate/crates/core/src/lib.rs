//! Joint estimation of dynamic (CAViaR-type) quantile curves with a
//! crossing-distance penalty, minimised by a covariance matrix adaptation
//! evolution strategy, plus the simulation and forecast-evaluation tooling
//! around it.

pub mod backtest;
pub mod dgp;
pub mod fitter;
pub mod model;
pub mod optim;
pub mod scoring;

pub use model::{
    CoefficientSet, Design, FittedQuantilePaths, ModelError, ModelSpec, QuantileGrid, SeriesData,
};
pub use optim::{OptimError, OptimOptions, OptimResult, Termination};

/// Seed of sub-stream `index` of `master` (SplitMix64 finaliser over an
/// odd-stride sequence, so distinct indices give distinct seeds).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
