//! Random streams, orthonormal feature banks, normal probabilities.

mod bank;
mod normal;
mod rng;

pub use bank::{build_orthonormal_bank, BankMode, OrthonormalBank};
pub use normal::{
    bvn_upper_orthant, epsilon_bound, kahan_sum, mvn_orthant_mc, std_normal_cdf, std_normal_sf,
    ProbEstimate,
};
pub use rng::RngStream;
