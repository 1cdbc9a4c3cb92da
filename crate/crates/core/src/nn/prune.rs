//! Per-layer pruning configuration and the sampling engine state attached to
//! maskable layers.

use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianSpec, HamiltonianVariant};
use crate::mask::{
    converged_mask_structured, converged_mask_unstructured, NeighbourhoodPartition, PruneFraction,
    PruneMask, WeightVector,
};
use crate::rng::RandomSource;
use crate::sampler::{sample_mask_with, SampleOptions};

/// Which weight groups prune together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Unstructured,
    /// K x K kernels prune as units.
    Kernel,
    /// Whole filters (K x K x C_in) prune as units.
    Filter,
}

/// Energy family selected in configuration; combined with the structure to
/// pick the concrete variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HamiltonianKind {
    Binary,
    LinearSign,
    LinearSquare,
    LinearAbs,
    StructuredLinear,
    StructuredQuadratic,
}

impl HamiltonianKind {
    pub fn variant_for(&self, structure: Structure) -> Result<HamiltonianVariant> {
        let structured = structure != Structure::Unstructured;
        match (self, structured) {
            (HamiltonianKind::Binary, false) => Ok(HamiltonianVariant::BinaryUnstructured),
            (HamiltonianKind::Binary, true) => Ok(HamiltonianVariant::BinaryStructured),
            (HamiltonianKind::LinearSign, false) => Ok(HamiltonianVariant::LinearSign),
            (HamiltonianKind::LinearSquare, false) => Ok(HamiltonianVariant::LinearSquare),
            (HamiltonianKind::LinearAbs, false) => Ok(HamiltonianVariant::LinearAbs),
            (HamiltonianKind::StructuredLinear, true) => Ok(HamiltonianVariant::StructuredLinear),
            (HamiltonianKind::StructuredQuadratic, true) => {
                Ok(HamiltonianVariant::StructuredQuadratic)
            }
            (kind, true) => Err(Error::InvalidArgument(format!(
                "{kind:?} applies to unstructured pruning only"
            ))),
            (kind, false) => Err(Error::InvalidArgument(format!(
                "{kind:?} requires kernel or filter structure"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PruneConfig {
    pub p: PruneFraction,
    pub structure: Structure,
    pub hamiltonian: HamiltonianKind,
    /// Coupling strength for the quadratic variant.
    pub c: f64,
    /// Rebuild energy coefficients from the weights every this many steps.
    pub rebuild_every: usize,
    pub chromatic_iters: usize,
    pub max_block: usize,
}

impl PruneConfig {
    pub fn unstructured(p: f64) -> Result<Self> {
        Ok(PruneConfig {
            p: PruneFraction::new(p)?,
            structure: Structure::Unstructured,
            hamiltonian: HamiltonianKind::LinearSquare,
            c: 0.01,
            rebuild_every: 1,
            chromatic_iters: 50,
            max_block: 16,
        })
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            max_block: self.max_block,
            chromatic_iters: self.chromatic_iters,
        }
    }
}

/// Live pruning state carried by a maskable layer.
#[derive(Debug, Clone)]
pub struct PruneState {
    pub config: PruneConfig,
    pub partition: Option<NeighbourhoodPartition>,
    pub mask: PruneMask,
    pub spec: Option<HamiltonianSpec>,
    steps_since_rebuild: usize,
}

impl PruneState {
    pub fn new(
        config: PruneConfig,
        n: usize,
        partition: Option<NeighbourhoodPartition>,
    ) -> Result<Self> {
        config.hamiltonian.variant_for(config.structure)?;
        if config.structure != Structure::Unstructured && partition.is_none() {
            return Err(Error::InvalidArgument(
                "structured pruning needs a neighbourhood partition".into(),
            ));
        }
        if let Some(part) = &partition {
            if part.weight_count() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: part.weight_count(),
                });
            }
        }
        Ok(PruneState {
            config,
            partition,
            mask: PruneMask::all_kept(n),
            spec: None,
            steps_since_rebuild: 0,
        })
    }

    fn weight_vector(&self, weights: &[f64], layer_id: &str) -> Result<WeightVector> {
        WeightVector::new(weights.to_vec(), layer_id)
    }

    /// Deterministic converged mask of the given weights under this config.
    pub fn converged_mask(&self, weights: &[f64], layer_id: &str) -> Result<PruneMask> {
        let w = self.weight_vector(weights, layer_id)?;
        Ok(match &self.partition {
            Some(part) if self.config.structure != Structure::Unstructured => {
                converged_mask_structured(self.config.p, &w, part)
            }
            _ => converged_mask_unstructured(self.config.p, &w),
        })
    }

    /// Rebuild the energy spec from the current weights if it is due.
    pub fn maybe_rebuild(&mut self, weights: &[f64], layer_id: &str) -> Result<()> {
        if self.spec.is_some() && self.steps_since_rebuild < self.config.rebuild_every {
            self.steps_since_rebuild += 1;
            return Ok(());
        }
        let w = self.weight_vector(weights, layer_id)?;
        let variant = self.config.hamiltonian.variant_for(self.config.structure)?;
        self.spec = Some(HamiltonianSpec::build(
            variant,
            self.config.p,
            &w,
            self.partition.as_ref(),
            Some(self.config.c),
        )?);
        self.steps_since_rebuild = 1;
        Ok(())
    }

    /// Draw this step's mask. The exact endpoints skip sampling: p = 0 keeps
    /// everything (so a run configured with p = 0 is plain training) and
    /// p = 1 prunes everything.
    pub fn resample(
        &mut self,
        weights: &[f64],
        layer_id: &str,
        beta: f64,
        rng: &RandomSource,
    ) -> Result<()> {
        let n = self.mask.len();
        if self.config.p.value() == 0.0 {
            self.mask = PruneMask::all_kept(n);
            return Ok(());
        }
        if self.config.p.value() == 1.0 {
            self.mask = PruneMask::all_pruned(n);
            return Ok(());
        }
        self.maybe_rebuild(weights, layer_id)?;
        let spec = self.spec.as_ref().expect("spec built above");
        self.mask = sample_mask_with(spec, beta, rng, &self.config.sample_options())?;
        Ok(())
    }

    /// Pin the mask to the converged mask of the given weights.
    pub fn set_converged(&mut self, weights: &[f64], layer_id: &str) -> Result<()> {
        self.mask = self.converged_mask(weights, layer_id)?;
        Ok(())
    }
}

/// Kernel-granularity partition for a conv layer's `[c_out][c_in][k][k]`
/// weights: one group per (out, in) kernel, tagged with input channels.
pub fn kernel_partition(c_out: usize, c_in: usize, k: usize) -> NeighbourhoodPartition {
    let ksq = k * k;
    let n = c_out * c_in * ksq;
    let groups = (0..c_out * c_in)
        .map(|g| (g * ksq..(g + 1) * ksq).collect())
        .collect();
    let channels = (0..n).map(|i| (i / ksq) % c_in).collect();
    NeighbourhoodPartition::with_channels(groups, n, Some(channels))
        .expect("kernel partition is disjoint and covering by construction")
}

/// Filter-granularity partition: one group per output filter of size
/// c_in * k * k, tagged with input channels for chromatic colouring.
pub fn filter_partition(c_out: usize, c_in: usize, k: usize) -> NeighbourhoodPartition {
    let ksq = k * k;
    let per_filter = c_in * ksq;
    let n = c_out * per_filter;
    let groups = (0..c_out)
        .map(|o| (o * per_filter..(o + 1) * per_filter).collect())
        .collect();
    let channels = (0..n).map(|i| (i / ksq) % c_in).collect();
    NeighbourhoodPartition::with_channels(groups, n, Some(channels))
        .expect("filter partition is disjoint and covering by construction")
}
