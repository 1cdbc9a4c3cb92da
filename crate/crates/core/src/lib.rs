//! Gibbs pruning: train a neural network while sampling its pruning masks
//! from an annealed Gibbs distribution, so weights and masks adapt to each
//! other and the mask converges as the temperature drops.
//!
//! The crate is organized around that pipeline:
//!
//! - [`mask`]: weight vectors, masks, neighbourhood partitions, quantile and
//!   converged-mask math
//! - [`hamiltonian`]: the energy families over masks (binary, linear,
//!   structured linear, structured quadratic / Ising)
//! - [`sampler`]: exact product and block samplers plus chromatic Gibbs MCMC
//! - [`schedule`]: beta annealing and learning-rate schedules with
//!   stretching
//! - [`nn`]: a small f64 training harness with maskable conv/dense layers
//! - [`experiment`]: config-driven runs, baselines, reports, mask files

pub mod error;
pub mod experiment;
pub mod hamiltonian;
pub mod mask;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
pub use hamiltonian::{
    build_linear_coeffs, build_quadratic, energy, min_coupling_for_uniformity, CouplingGraph,
    HamiltonianSpec, HamiltonianVariant, LinearVariant,
};
pub use mask::{
    apply_mask, converged_mask_structured, converged_mask_unstructured, mask_agreement,
    neighbourhood_rms, pruned_fraction, squared_quantile, NeighbourhoodPartition, PruneFraction,
    PruneMask, WeightVector,
};
pub use rng::RandomSource;
pub use sampler::{
    binary_convergence_probability, init_chain, make_bipartite_colouring, sample_binary,
    sample_block_exact, sample_chromatic, sample_linear, sample_mask, sample_mask_with,
    truncate_couplings, Colouring, SampleOptions,
};
pub use schedule::{beta_at, lr_at, AnnealMode, BetaSchedule, LrSchedule};
