pub mod bounds;
pub mod experiment;
pub mod girsanov;
pub mod linalg;
pub mod metrics;
pub mod parallel;
pub mod quadrature;
pub mod ratematrix;
pub mod rng;
pub mod sde;
pub mod skorokhod;
pub mod stats;
