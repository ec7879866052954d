//! InfoNCE and its population-level pieces: alignment, the uniformity
//! potential, a nearest-neighbour entropy estimate, the norm/entropy
//! regularized objective and the plateau surrogate.

mod consistency;
mod entropy;
mod infonce;
mod regularized;
mod uniformity;

pub use consistency::{centered_infonce, population_gap_study, GapPoint, GapStudy};
pub use entropy::{entropy_estimate, entropy_with_grad, knn_distances, KL_NEIGHBORS};
pub use infonce::{alignment_term, check_unit_rows, infonce_grad, infonce_loss, infonce_with_grad};
pub use regularized::{log_partition_ball, regularized_objective, surrogate_jq, LossParams, LossReport};
pub use uniformity::{uniformity_potential, uniformity_terms};
