//! Simulation-based inference: surrogate likelihoods from joint samples
//! (offline) and sequential posterior maps (online).

mod assimilate;
mod grid;
mod registry;
mod surrogate;

pub use assimilate::{
    compress, push_samples, AssimilationConfig, AssimilationState, Branch, PosteriorTarget, StepRecord,
};
pub use registry::{Registry, RegistryEntry, MANIFEST_FILE, REGISTRY_FORMAT, REGISTRY_FORMAT_VERSION};
pub use surrogate::{build_surrogate, SurrogateFit, SurrogateLikelihood};
pub use grid::{loglik_error_grid, median_rel_error, scalar_grid, write_grid_csv, GridPoint, GRID_FORMAT};
