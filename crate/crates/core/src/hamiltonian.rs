//! Energy functions over pruning masks.
//!
//! Each family drives annealed sampling toward a converged mask: a binary
//! indicator energy, linear energies whose coefficients encode how far each
//! weight sits from the pruning quantile, and a quadratic (Ising-style)
//! energy whose couplings force structured masks to keep whole
//! neighbourhoods together.

use crate::error::{Error, Result};
use crate::mask::{
    converged_mask_structured, converged_mask_unstructured, neighbourhood_rms, squared_quantile,
    NeighbourhoodPartition, PruneFraction, PruneMask, WeightVector,
};

/// Which energy family a spec evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HamiltonianVariant {
    BinaryUnstructured,
    BinaryStructured,
    /// a_i = sgn(Q - w_i^2)
    LinearSign,
    /// a_i = Q - w_i^2
    LinearSquare,
    /// a_i = sqrt(Q) - |w_i|
    LinearAbs,
    /// a_i = sgn(Q(p, rms) - rms_k^2) shared across each neighbourhood
    StructuredLinear,
    /// -c couplings within neighbourhoods plus b_i = Q(p, rms) - w_i^2
    StructuredQuadratic,
}

impl HamiltonianVariant {
    pub fn is_structured(&self) -> bool {
        matches!(
            self,
            HamiltonianVariant::BinaryStructured
                | HamiltonianVariant::StructuredLinear
                | HamiltonianVariant::StructuredQuadratic
        )
    }

    pub fn is_binary(&self) -> bool {
        matches!(
            self,
            HamiltonianVariant::BinaryUnstructured | HamiltonianVariant::BinaryStructured
        )
    }
}

/// The linear coefficient schemes for unstructured pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearVariant {
    Sign,
    Square,
    Abs,
}

/// Pairwise couplings, all of identical strength: each edge {i, j}
/// contributes energy -c * x_i * x_j. Edges never cross neighbourhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingGraph {
    edges: Vec<(u32, u32)>,
    strength: f64,
}

impl CouplingGraph {
    /// Complete graph within every neighbourhood.
    pub fn complete_within(part: &NeighbourhoodPartition, c: f64) -> Self {
        let mut edges = Vec::new();
        for group in part.groups() {
            for (a, &i) in group.iter().enumerate() {
                for &j in &group[a + 1..] {
                    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                    edges.push((lo as u32, hi as u32));
                }
            }
        }
        CouplingGraph { edges, strength: c }
    }

    pub fn from_edges(edges: Vec<(u32, u32)>, c: f64) -> Self {
        CouplingGraph { edges, strength: c }
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

/// A fully built energy function: variant tag, coefficients, couplings, and
/// the cached converged mask the annealing should end at.
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    pub(crate) variant: HamiltonianVariant,
    pub(crate) coeffs: Vec<f64>,
    pub(crate) coupling: Option<CouplingGraph>,
    pub(crate) converged: PruneMask,
    pub(crate) partition: Option<NeighbourhoodPartition>,
    pub(crate) n: usize,
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        // Exact tie with the quantile: leave the coefficient at zero (a fair
        // coin at every beta). The deterministic converged-mask step resolves
        // such ties by index.
        0.0
    }
}

/// Linear coefficients for unstructured pruning. Positive entries push an
/// index toward pruning, negative toward keeping.
///
/// At the exact endpoints p = 0 and p = 1 the converged target is
/// unambiguous (keep everything / prune everything), so the sign scheme
/// pins every coefficient to -1 or +1 instead of leaving quantile ties at
/// zero.
pub fn build_linear_coeffs(variant: LinearVariant, p: PruneFraction, w: &WeightVector) -> Vec<f64> {
    let q = squared_quantile(p, w);
    match variant {
        LinearVariant::Sign => {
            if p.value() == 0.0 {
                return vec![-1.0; w.len()];
            }
            if p.value() == 1.0 {
                return vec![1.0; w.len()];
            }
            w.values().iter().map(|wi| sign0(q - wi * wi)).collect()
        }
        LinearVariant::Square => w.values().iter().map(|wi| q - wi * wi).collect(),
        LinearVariant::Abs => {
            let root = q.sqrt();
            w.values().iter().map(|wi| root - wi.abs()).collect()
        }
    }
}

/// Sign-scheme coefficients at neighbourhood granularity, broadcast to every
/// index of the group. Endpoints are pinned exactly as in the unstructured
/// sign scheme.
pub fn build_structured_linear_coeffs(
    p: PruneFraction,
    w: &WeightVector,
    part: &NeighbourhoodPartition,
) -> Vec<f64> {
    let mut coeffs = vec![0.0; w.len()];
    if p.value() == 0.0 {
        coeffs.fill(-1.0);
        return coeffs;
    }
    if p.value() == 1.0 {
        coeffs.fill(1.0);
        return coeffs;
    }
    let rms = neighbourhood_rms(w, part);
    let rms_vec = WeightVector::new(rms.clone(), w.layer_id()).expect("non-empty partition");
    let q = squared_quantile(p, &rms_vec);
    for (k, group) in part.groups().iter().enumerate() {
        let a = sign0(q - rms[k] * rms[k]);
        for &i in group {
            coeffs[i] = a;
        }
    }
    coeffs
}

/// Per-index linear terms of the quadratic energy: the neighbourhood
/// quantile threshold minus each individual squared magnitude.
pub fn build_quadratic_coeffs(
    p: PruneFraction,
    w: &WeightVector,
    part: &NeighbourhoodPartition,
) -> Vec<f64> {
    let rms = neighbourhood_rms(w, part);
    let rms_vec = WeightVector::new(rms, w.layer_id()).expect("non-empty partition");
    let q = squared_quantile(p, &rms_vec);
    w.values().iter().map(|wi| q - wi * wi).collect()
}

/// Builds the quadratic spec: within-neighbourhood couplings of strength c
/// plus linear terms that see individual weight magnitudes.
pub fn build_quadratic(
    p: PruneFraction,
    w: &WeightVector,
    part: &NeighbourhoodPartition,
    c: f64,
) -> Result<HamiltonianSpec> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "coupling c must be positive, got {c}"
        )));
    }
    if part.weight_count() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            got: part.weight_count(),
        });
    }
    Ok(HamiltonianSpec {
        variant: HamiltonianVariant::StructuredQuadratic,
        coeffs: build_quadratic_coeffs(p, w, part),
        coupling: Some(CouplingGraph::complete_within(part, c)),
        converged: converged_mask_structured(p, w, part),
        partition: Some(part.clone()),
        n: w.len(),
    })
}

impl HamiltonianSpec {
    /// Build any variant from the current weights.
    pub fn build(
        variant: HamiltonianVariant,
        p: PruneFraction,
        w: &WeightVector,
        part: Option<&NeighbourhoodPartition>,
        c: Option<f64>,
    ) -> Result<Self> {
        let part_req = || {
            part.cloned().ok_or_else(|| {
                Error::InvalidArgument(format!("{variant:?} requires a neighbourhood partition"))
            })
        };
        match variant {
            HamiltonianVariant::BinaryUnstructured => Ok(HamiltonianSpec {
                variant,
                coeffs: Vec::new(),
                coupling: None,
                converged: converged_mask_unstructured(p, w),
                partition: None,
                n: w.len(),
            }),
            HamiltonianVariant::BinaryStructured => {
                let part = part_req()?;
                Ok(HamiltonianSpec {
                    variant,
                    coeffs: Vec::new(),
                    coupling: None,
                    converged: converged_mask_structured(p, w, &part),
                    partition: Some(part),
                    n: w.len(),
                })
            }
            HamiltonianVariant::LinearSign
            | HamiltonianVariant::LinearSquare
            | HamiltonianVariant::LinearAbs => {
                let lv = match variant {
                    HamiltonianVariant::LinearSign => LinearVariant::Sign,
                    HamiltonianVariant::LinearSquare => LinearVariant::Square,
                    _ => LinearVariant::Abs,
                };
                Ok(HamiltonianSpec {
                    variant,
                    coeffs: build_linear_coeffs(lv, p, w),
                    coupling: None,
                    converged: converged_mask_unstructured(p, w),
                    partition: None,
                    n: w.len(),
                })
            }
            HamiltonianVariant::StructuredLinear => {
                let part = part_req()?;
                Ok(HamiltonianSpec {
                    variant,
                    coeffs: build_structured_linear_coeffs(p, w, &part),
                    coupling: None,
                    converged: converged_mask_structured(p, w, &part),
                    partition: Some(part),
                    n: w.len(),
                })
            }
            HamiltonianVariant::StructuredQuadratic => {
                let part = part_req()?;
                let c = c.ok_or_else(|| {
                    Error::InvalidArgument("quadratic variant requires a coupling c".into())
                })?;
                build_quadratic(p, w, &part, c)
            }
        }
    }

    pub fn variant(&self) -> HamiltonianVariant {
        self.variant
    }

    /// Linear coefficients: `a` for the linear variants, `b` for the
    /// quadratic one. Empty for binary variants.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coupling(&self) -> Option<&CouplingGraph> {
        self.coupling.as_ref()
    }

    pub fn converged_mask(&self) -> &PruneMask {
        &self.converged
    }

    pub fn partition(&self) -> Option<&NeighbourhoodPartition> {
        self.partition.as_ref()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Energy of a mask under a spec.
pub fn energy(spec: &HamiltonianSpec, x: &PruneMask) -> Result<f64> {
    if x.len() != spec.n {
        return Err(Error::LengthMismatch {
            expected: spec.n,
            got: x.len(),
        });
    }
    match spec.variant {
        HamiltonianVariant::BinaryUnstructured | HamiltonianVariant::BinaryStructured => {
            Ok(if x == &spec.converged { 0.0 } else { 1.0 })
        }
        HamiltonianVariant::StructuredQuadratic => {
            let graph = spec
                .coupling
                .as_ref()
                .expect("quadratic spec has couplings");
            let mut e = 0.0;
            let c = graph.strength();
            for &(i, j) in graph.edges() {
                e -= c * f64::from(x.entries()[i as usize]) * f64::from(x.entries()[j as usize]);
            }
            for (b, &xi) in spec.coeffs.iter().zip(x.entries()) {
                e += b * f64::from(xi);
            }
            Ok(e)
        }
        _ => Ok(spec
            .coeffs
            .iter()
            .zip(x.entries())
            .map(|(a, &xi)| a * f64::from(xi))
            .sum()),
    }
}

/// The exact uniformity bound from the coupling argument: any
/// c strictly above (max_x b'x) - (min_x b'x) = 2 * sum |b_i| forces every
/// energy minimiser to be neighbourhood-uniform. Callers add their own
/// positive margin.
pub fn min_coupling_for_uniformity(b: &[f64]) -> f64 {
    2.0 * b.iter().map(|v| v.abs()).sum::<f64>()
}
