//! Drawing pruning masks from Gibbs distributions.
//!
//! Linear energies factor over entries and sample in closed form. The binary
//! energy samples by a two-way choice between the converged mask and uniform
//! noise. Quadratic energies factor over neighbourhoods: small blocks are
//! enumerated exactly, large ones run chromatic Gibbs MCMC on a bipartite
//! truncation of the coupling graph so whole colour classes update in
//! parallel.
//!
//! Every sampler draws by position from its `RandomSource`, so results are
//! identical under any execution schedule. Callers dedicate a forked
//! substream to each sampling call.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::{CouplingGraph, HamiltonianSpec, HamiltonianVariant};
use crate::mask::{
    neighbourhood_rms, squared_quantile, NeighbourhoodPartition, PruneFraction, PruneMask,
    WeightVector,
};
use crate::rng::RandomSource;

/// Colour classes below this size update sequentially; larger ones fan out
/// over rayon. Either path produces identical draws.
const PARALLEL_SITE_THRESHOLD: usize = 2048;

const INIT_FORK: u64 = 0x696e_6974;
const SWEEP_FORK: u64 = 0x7377_6565;

#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Tuning for `sample_mask` dispatch.
#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    /// Largest neighbourhood enumerated exactly (2^max_block states).
    pub max_block: usize,
    /// Sweep count for the chromatic sampler.
    pub chromatic_iters: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            max_block: 16,
            chromatic_iters: 50,
        }
    }
}

/// Two-colouring of the weight indices used to truncate coupling graphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Colouring {
    colours: Vec<u8>,
}

impl Colouring {
    pub fn colours(&self) -> &[u8] {
        &self.colours
    }

    pub fn colour_of(&self, i: usize) -> u8 {
        self.colours[i]
    }
}

/// Markov chain state for the chromatic sampler.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub mask: PruneMask,
    pub iteration: usize,
    pub colouring: Colouring,
}

/// Product-form sampling for linear energies: entries are independent with
/// P[x_i = -1] = sigmoid(2 * beta * a_i).
pub fn sample_linear(a: &[f64], beta: f64, rng: &RandomSource) -> PruneMask {
    debug_assert!(beta > 0.0);
    let mut mask = PruneMask::all_kept(a.len());
    let entries = mask.entries_mut();
    for (i, &ai) in a.iter().enumerate() {
        let p_prune = sigmoid(2.0 * beta * ai);
        if rng.uniform_at(i as u64) < p_prune {
            entries[i] = -1;
        }
    }
    mask
}

/// Probability that the binary-energy sampler picks the converged mask
/// outright (the remaining mass is uniform noise over all 2^N masks).
/// Computed in the log domain; for beta much smaller than N*ln2 this
/// underflows to zero, which is the correct limit, not an error.
pub fn binary_convergence_probability(n: usize, beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    // ln(1 - e^-beta)
    let ln_num = (-(-beta).exp_m1()).ln();
    // ln(2^N - 1) = N ln2 + ln(1 - 2^-N)
    let nf = n as f64;
    let ln_pow = nf * std::f64::consts::LN_2;
    let ln_2n_minus_1 = ln_pow + (-(-ln_pow).exp()).ln_1p();
    // ln((2^N - 1) e^-beta + 1)
    let t = ln_2n_minus_1 - beta;
    let ln_den = if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    };
    (ln_num - ln_den).exp()
}

/// Sampling for the binary energy: the converged mask with probability
/// p_cvg, otherwise an independent fair coin per entry.
pub fn sample_binary(x_cvg: &PruneMask, beta: f64, rng: &RandomSource) -> PruneMask {
    debug_assert!(beta > 0.0);
    let p_cvg = binary_convergence_probability(x_cvg.len(), beta);
    if rng.uniform_at(0) < p_cvg {
        return x_cvg.clone();
    }
    let mut mask = PruneMask::all_kept(x_cvg.len());
    let entries = mask.entries_mut();
    for (i, e) in entries.iter_mut().enumerate() {
        if rng.at(1 + i as u64) & 1 == 1 {
            *e = -1;
        }
    }
    mask
}

/// Exact per-neighbourhood sampling for the quadratic energy. Each block's
/// Boltzmann distribution over its 2^size states is enumerated directly,
/// subtracting the lowest energy before exponentiating.
pub fn sample_block_exact(
    spec: &HamiltonianSpec,
    beta: f64,
    rng: &RandomSource,
    max_block: usize,
) -> Result<PruneMask> {
    debug_assert!(beta > 0.0);
    if spec.variant() != HamiltonianVariant::StructuredQuadratic {
        return Err(Error::InvalidArgument(format!(
            "exact block sampling requires the quadratic variant, got {:?}",
            spec.variant()
        )));
    }
    let part = spec.partition().expect("quadratic spec has a partition");
    let c = spec
        .coupling()
        .expect("quadratic spec has couplings")
        .strength();
    let b = spec.coeffs();

    let mut mask = PruneMask::all_kept(spec.len());
    for (k, group) in part.groups().iter().enumerate() {
        let size = group.len();
        if size > max_block {
            return Err(Error::BlockTooLarge {
                size,
                max: max_block,
            });
        }
        let states = 1usize << size;
        // Couplings are complete within a block with uniform strength, so the
        // pair sum collapses to (S^2 - size) / 2 with S the spin sum.
        let mut energies = Vec::with_capacity(states);
        let mut min_e = f64::INFINITY;
        for state in 0..states {
            let pruned = (state as u64).count_ones() as f64;
            let spin_sum = size as f64 - 2.0 * pruned;
            let mut e = -c * (spin_sum * spin_sum - size as f64) * 0.5;
            for (bit, &i) in group.iter().enumerate() {
                let xi = if state >> bit & 1 == 1 { -1.0 } else { 1.0 };
                e += b[i] * xi;
            }
            min_e = min_e.min(e);
            energies.push(e);
        }
        let mut total = 0.0;
        let weights: Vec<f64> = energies
            .iter()
            .map(|e| {
                let w = (-beta * (e - min_e)).exp();
                total += w;
                w
            })
            .collect();
        let target = rng.uniform_at(k as u64) * total;
        let mut acc = 0.0;
        let mut chosen = states - 1;
        for (state, w) in weights.iter().enumerate() {
            acc += w;
            if target < acc {
                chosen = state;
                break;
            }
        }
        for (bit, &i) in group.iter().enumerate() {
            if chosen >> bit & 1 == 1 {
                mask.entries_mut()[i] = -1;
            }
        }
    }
    Ok(mask)
}

/// Splits every neighbourhood into two colour classes. When the partition
/// carries input-channel tags the split follows channel parity; otherwise it
/// alternates by within-neighbourhood rank.
pub fn make_bipartite_colouring(part: &NeighbourhoodPartition) -> Colouring {
    let mut colours = vec![0u8; part.weight_count()];
    if let Some(channels) = part.index_channels() {
        for (i, ch) in channels.iter().enumerate() {
            colours[i] = (ch % 2) as u8;
        }
        return Colouring { colours };
    }
    for group in part.groups() {
        let mut sorted = group.clone();
        sorted.sort_unstable();
        for (rank, &i) in sorted.iter().enumerate() {
            colours[i] = (rank % 2) as u8;
        }
    }
    Colouring { colours }
}

/// Keeps only coupling edges that join different colours, turning each
/// complete neighbourhood graph into a complete bipartite one.
pub fn truncate_couplings(graph: &CouplingGraph, col: &Colouring) -> CouplingGraph {
    let edges = graph
        .edges()
        .iter()
        .filter(|(i, j)| col.colour_of(*i as usize) != col.colour_of(*j as usize))
        .copied()
        .collect();
    CouplingGraph::from_edges(edges, graph.strength())
}

/// Per-neighbourhood coefficients of the chain-initialization energy:
/// |group| * (Q(p, rms) - rms_k^2). Positive values push the whole group
/// toward pruning.
pub fn chain_init_coefficients(
    p: PruneFraction,
    w: &WeightVector,
    part: &NeighbourhoodPartition,
) -> Vec<f64> {
    let rms = neighbourhood_rms(w, part);
    let rms_vec = WeightVector::new(rms.clone(), w.layer_id()).expect("non-empty partition");
    let q = squared_quantile(p, &rms_vec);
    part.groups()
        .iter()
        .zip(&rms)
        .map(|(group, r)| group.len() as f64 * (q - r * r))
        .collect()
}

/// Draws a structure-respecting mask from the linearised energy over group
/// variables: each neighbourhood gets one shared value with
/// P[group pruned] = sigmoid(2 * beta * coeff_k). Used to start Markov
/// chains near local modes.
pub fn init_chain(
    p: PruneFraction,
    w: &WeightVector,
    part: &NeighbourhoodPartition,
    beta: f64,
    rng: &RandomSource,
) -> PruneMask {
    debug_assert!(beta > 0.0);
    let coeffs = chain_init_coefficients(p, w, part);
    init_chain_from_group_coeffs(&coeffs, part, beta, rng)
}

fn init_chain_from_group_coeffs(
    coeffs: &[f64],
    part: &NeighbourhoodPartition,
    beta: f64,
    rng: &RandomSource,
) -> PruneMask {
    let mut mask = PruneMask::all_kept(part.weight_count());
    for (k, group) in part.groups().iter().enumerate() {
        let p_prune = sigmoid(2.0 * beta * coeffs[k]);
        if rng.uniform_at(k as u64) < p_prune {
            for &i in group {
                mask.entries_mut()[i] = -1;
            }
        }
    }
    mask
}

/// Chromatic Gibbs sampling for the quadratic energy. The chain starts from
/// `init_chain`, targets the colour-truncated energy, and runs `iters`
/// sweeps (colour 0 then colour 1 per sweep), taking the final state as the
/// sample. Same-colour sites are conditionally independent, so each phase
/// may update them in parallel without changing the result.
pub fn sample_chromatic(
    spec: &HamiltonianSpec,
    beta: f64,
    iters: usize,
    rng: &RandomSource,
) -> Result<PruneMask> {
    debug_assert!(beta > 0.0);
    if spec.variant() != HamiltonianVariant::StructuredQuadratic {
        return Err(Error::InvalidArgument(format!(
            "chromatic sampling requires the quadratic variant, got {:?}",
            spec.variant()
        )));
    }
    if iters == 0 {
        return Err(Error::InvalidArgument(
            "chromatic sampling needs at least one sweep".into(),
        ));
    }
    let part = spec.partition().expect("quadratic spec has a partition");
    let graph = spec.coupling().expect("quadratic spec has couplings");
    let b = spec.coeffs();
    let c = graph.strength();
    let n = spec.len();

    let colouring = make_bipartite_colouring(part);
    let truncated = truncate_couplings(graph, &colouring);
    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n];
    for &(i, j) in truncated.edges() {
        adjacency[i as usize].push(j);
        adjacency[j as usize].push(i);
    }
    let colour_classes: [Vec<usize>; 2] = {
        let mut classes = [Vec::new(), Vec::new()];
        for i in 0..n {
            classes[colouring.colour_of(i) as usize].push(i);
        }
        classes
    };

    // Initialise from the group-level linearisation; the aggregated linear
    // term of each block is exactly the sum of its b coefficients.
    let group_coeffs: Vec<f64> = part
        .groups()
        .iter()
        .map(|g| g.iter().map(|&i| b[i]).sum())
        .collect();
    let init_rng = rng.fork(INIT_FORK);
    let mut state = ChainState {
        mask: init_chain_from_group_coeffs(&group_coeffs, part, beta, &init_rng),
        iteration: 0,
        colouring,
    };

    let sweep_rng = rng.fork(SWEEP_FORK);
    for sweep in 0..iters {
        for (phase, class) in colour_classes.iter().enumerate() {
            let base = (sweep as u64 * 2 + phase as u64) * n as u64;
            let entries = state.mask.entries();
            let update = |&i: &usize| -> i8 {
                let neighbour_sum: f64 = adjacency[i]
                    .iter()
                    .map(|&j| f64::from(entries[j as usize]))
                    .sum();
                let g = b[i] - c * neighbour_sum;
                if sweep_rng.uniform_at(base + i as u64) < sigmoid(2.0 * beta * g) {
                    -1
                } else {
                    1
                }
            };
            let new_values: Vec<i8> = if class.len() >= PARALLEL_SITE_THRESHOLD {
                class.par_iter().map(update).collect()
            } else {
                class.iter().map(update).collect()
            };
            let entries = state.mask.entries_mut();
            for (&i, v) in class.iter().zip(new_values) {
                entries[i] = v;
            }
        }
        state.iteration += 1;
    }
    Ok(state.mask)
}

/// Samples a mask from any spec, dispatching on the variant: binary specs use
/// the two-way sampler, linear specs the product sampler, and quadratic specs
/// exact block enumeration when every neighbourhood fits under
/// `max_block`, falling back to chromatic MCMC otherwise.
pub fn sample_mask(spec: &HamiltonianSpec, beta: f64, rng: &RandomSource) -> Result<PruneMask> {
    sample_mask_with(spec, beta, rng, &SampleOptions::default())
}

pub fn sample_mask_with(
    spec: &HamiltonianSpec,
    beta: f64,
    rng: &RandomSource,
    opts: &SampleOptions,
) -> Result<PruneMask> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "beta must be positive, got {beta}"
        )));
    }
    match spec.variant() {
        HamiltonianVariant::BinaryUnstructured | HamiltonianVariant::BinaryStructured => {
            Ok(sample_binary(spec.converged_mask(), beta, rng))
        }
        HamiltonianVariant::LinearSign
        | HamiltonianVariant::LinearSquare
        | HamiltonianVariant::LinearAbs
        | HamiltonianVariant::StructuredLinear => Ok(sample_linear(spec.coeffs(), beta, rng)),
        HamiltonianVariant::StructuredQuadratic => {
            let largest = spec
                .partition()
                .map(NeighbourhoodPartition::max_group_size)
                .unwrap_or(0);
            if largest <= opts.max_block {
                sample_block_exact(spec, beta, rng, opts.max_block)
            } else {
                sample_chromatic(spec, beta, opts.chromatic_iters, rng)
            }
        }
    }
}
