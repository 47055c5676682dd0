pub mod autodiff;
pub mod datasets;
pub mod distill;
pub mod linalg;
pub mod metrics;
pub mod vae;
