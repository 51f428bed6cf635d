//! Mixture-of-Prompts: partition demonstrations into expert regions by
//! K-means in an embedding space, search a complementary instruction for
//! each expert, and route queries to the nearest expert at inference time.

pub mod prompt;
pub mod task;
pub mod scoring;
pub mod seed;
pub mod clustering;
pub mod routing;
pub mod providers;
pub mod fixtures;
pub mod assignment;
pub mod harness;
