pub mod bench;
pub mod dgp;
pub mod diagnose;
pub mod emc;
pub mod estimate;
pub mod fe;
pub mod heterogeneity;
pub mod theory;
pub mod validate;
