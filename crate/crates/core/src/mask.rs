//! Weight vectors, pruning masks, neighbourhood partitions, and the
//! magnitude math built on them: squared-magnitude quantiles, per-group RMS
//! statistics, converged masks, and mask application.
//!
//! Masks live in {-1, +1}^N with -1 meaning pruned. All operations here are
//! pure functions of their inputs.

use crate::error::{Error, Result};

/// A layer's weights flattened to a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
    layer_id: String,
}

impl WeightVector {
    pub fn new(values: Vec<f64>, layer_id: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "weight vector must be non-empty".into(),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite weight value {bad}"
            )));
        }
        Ok(WeightVector {
            values,
            layer_id: layer_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty vectors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }
}

/// Pruning mask over a layer: -1 prunes the weight, +1 keeps it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    entries: Vec<i8>,
}

impl PruneMask {
    pub fn new(entries: Vec<i8>) -> Result<Self> {
        if let Some(bad) = entries.iter().find(|e| **e != -1 && **e != 1) {
            return Err(Error::InvalidArgument(format!(
                "mask entry {bad} outside {{-1,+1}}"
            )));
        }
        Ok(PruneMask { entries })
    }

    pub fn all_kept(n: usize) -> Self {
        PruneMask {
            entries: vec![1; n],
        }
    }

    pub fn all_pruned(n: usize) -> Self {
        PruneMask {
            entries: vec![-1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [i8] {
        &mut self.entries
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.entries[i] == 1
    }
}

/// Disjoint index groups covering 0..N-1. Groups model pruning structures
/// (one convolutional kernel or filter per group); all indices in a group
/// are constrained to share a mask value under structured pruning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighbourhoodPartition {
    groups: Vec<Vec<usize>>,
    /// Input-channel tag per weight index, when the owning layer knows it.
    /// Used to colour filter neighbourhoods for chromatic sampling.
    index_channels: Option<Vec<usize>>,
    n: usize,
}

impl NeighbourhoodPartition {
    pub fn new(groups: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        Self::with_channels(groups, n, None)
    }

    pub fn with_channels(
        groups: Vec<Vec<usize>>,
        n: usize,
        index_channels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let mut seen = vec![false; n];
        let mut covered = 0usize;
        for (k, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::InvalidPartition(format!("group {k} is empty")));
            }
            for &i in group {
                if i >= n {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} out of range for {n} weights"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidPartition(format!("index {i} appears twice")));
                }
                seen[i] = true;
                covered += 1;
            }
        }
        if covered != n {
            return Err(Error::InvalidPartition(format!(
                "groups cover {covered} of {n} indices"
            )));
        }
        if let Some(ch) = &index_channels {
            if ch.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: ch.len(),
                });
            }
        }
        Ok(NeighbourhoodPartition {
            groups,
            index_channels,
            n,
        })
    }

    /// One group per index: the trivial partition used by unstructured code paths.
    pub fn singletons(n: usize) -> Self {
        NeighbourhoodPartition {
            groups: (0..n).map(|i| vec![i]).collect(),
            index_channels: None,
            n,
        }
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn weight_count(&self) -> usize {
        self.n
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn index_channels(&self) -> Option<&[usize]> {
        self.index_channels.as_deref()
    }

    pub fn max_group_size(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Target fraction of weights to prune.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneFraction(f64);

impl PruneFraction {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "prune fraction {p} outside [0, 1]"
            )));
        }
        Ok(PruneFraction(p))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    /// Number of weights to prune out of `n`: the achievable count nearest
    /// p*n. The bool reports whether p*n was integral, i.e. whether p is
    /// exactly achievable; callers surface a warning when it is not.
    pub fn resolve_count(&self, n: usize) -> (usize, bool) {
        let exact = self.0 * n as f64;
        let count = exact.round().min(n as f64).max(0.0) as usize;
        let achievable = (exact - exact.round()).abs() < 1e-9;
        (count, achievable)
    }

    /// Number of whole groups to prune so that the pruned-weight count is
    /// nearest p*n, pruning in the given group order. Ties round up, matching
    /// `resolve_count` for equal-size groups.
    pub fn resolve_group_count(
        &self,
        group_sizes_in_prune_order: &[usize],
        n: usize,
    ) -> (usize, bool) {
        let target = self.0 * n as f64;
        let mut best_m = 0usize;
        let mut best_err = target.abs();
        let mut cum = 0usize;
        for (m, size) in group_sizes_in_prune_order.iter().enumerate() {
            cum += size;
            let err = (cum as f64 - target).abs();
            if err <= best_err {
                best_err = err;
                best_m = m + 1;
            }
        }
        (best_m, best_err < 1e-9)
    }
}

/// Empirical p-quantile of the squared weight magnitudes, interpolating
/// linearly between the two nearest achievable quantiles. Uses O(N)
/// selection rather than a full sort; the sort-based oracle lives in tests.
pub fn squared_quantile(p: PruneFraction, w: &WeightVector) -> f64 {
    let n = w.len();
    let t = p.value() * (n - 1) as f64;
    let lo = t.floor() as usize;
    let frac = t - lo as f64;

    let mut sq: Vec<f64> = w.values().iter().map(|v| v * v).collect();
    let (_, v_lo, upper) = sq.select_nth_unstable_by(lo, f64::total_cmp);
    let v_lo = *v_lo;
    if frac == 0.0 {
        v_lo
    } else {
        // After selection everything right of `lo` is >= v_lo; the next
        // order statistic is the minimum of that tail.
        let v_hi = upper.iter().copied().fold(f64::INFINITY, f64::min);
        v_lo + frac * (v_hi - v_lo)
    }
}

/// Root-mean-square weight magnitude per neighbourhood.
pub fn neighbourhood_rms(w: &WeightVector, part: &NeighbourhoodPartition) -> Vec<f64> {
    let values = w.values();
    part.groups()
        .iter()
        .map(|group| {
            let sum_sq: f64 = group.iter().map(|&i| values[i] * values[i]).sum();
            (sum_sq / group.len() as f64).sqrt()
        })
        .collect()
}

/// Deterministic converged mask: prunes the achievable count nearest p*N,
/// choosing the lowest squared magnitudes, ties broken by ascending index.
pub fn converged_mask_unstructured(p: PruneFraction, w: &WeightVector) -> PruneMask {
    let n = w.len();
    let (count, _) = p.resolve_count(n);
    if count == 0 {
        return PruneMask::all_kept(n);
    }
    if count >= n {
        return PruneMask::all_pruned(n);
    }
    let values = w.values();
    let mut order: Vec<usize> = (0..n).collect();
    order.select_nth_unstable_by(count - 1, |&a, &b| {
        (values[a] * values[a], a)
            .partial_cmp(&(values[b] * values[b], b))
            .expect("finite weights")
    });
    let mut entries = vec![1i8; n];
    for &i in &order[..count] {
        entries[i] = -1;
    }
    PruneMask { entries }
}

/// Converged mask under a structure constraint: whole neighbourhoods are
/// pruned, lowest mean squared magnitude first (ties by ascending group
/// index), until the pruned-weight fraction is the achievable value nearest p.
pub fn converged_mask_structured(
    p: PruneFraction,
    w: &WeightVector,
    part: &NeighbourhoodPartition,
) -> PruneMask {
    let n = w.len();
    let rms = neighbourhood_rms(w, part);
    let mut group_order: Vec<usize> = (0..part.num_groups()).collect();
    group_order.sort_by(|&a, &b| {
        (rms[a] * rms[a], a)
            .partial_cmp(&(rms[b] * rms[b], b))
            .expect("finite weights")
    });
    let sizes: Vec<usize> = group_order
        .iter()
        .map(|&k| part.groups()[k].len())
        .collect();
    let (m, _) = p.resolve_group_count(&sizes, n);
    let mut entries = vec![1i8; n];
    for &k in &group_order[..m] {
        for &i in &part.groups()[k] {
            entries[i] = -1;
        }
    }
    PruneMask { entries }
}

/// Applies a mask to weights: kept entries pass through, pruned entries
/// become zero. The input weights are not modified.
pub fn apply_mask(w: &WeightVector, x: &PruneMask) -> Result<WeightVector> {
    if x.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            got: x.len(),
        });
    }
    let values = w
        .values()
        .iter()
        .zip(x.entries())
        .map(|(v, e)| v * f64::from(e + 1) * 0.5)
        .collect();
    Ok(WeightVector {
        values,
        layer_id: w.layer_id.clone(),
    })
}

/// Fraction of entries that are pruned.
pub fn pruned_fraction(x: &PruneMask) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let pruned = x.entries().iter().filter(|e| **e == -1).count();
    pruned as f64 / x.len() as f64
}

/// Fraction of indices where the two masks agree.
pub fn mask_agreement(x1: &PruneMask, x2: &PruneMask) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::LengthMismatch {
            expected: x1.len(),
            got: x2.len(),
        });
    }
    if x1.is_empty() {
        return Ok(1.0);
    }
    let same = x1
        .entries()
        .iter()
        .zip(x2.entries())
        .filter(|(a, b)| a == b)
        .count();
    Ok(same as f64 / x1.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wv(values: &[f64]) -> WeightVector {
        WeightVector::new(values.to_vec(), "t").unwrap()
    }

    fn pf(p: f64) -> PruneFraction {
        PruneFraction::new(p).unwrap()
    }

    /// Sort-based quantile oracle, kept independent of the selection path.
    fn quantile_oracle(p: f64, values: &[f64]) -> f64 {
        let mut v: Vec<f64> = values.iter().map(|x| x * x).collect();
        v.sort_by(f64::total_cmp);
        let t = p * (v.len() - 1) as f64;
        let lo = t.floor() as usize;
        let hi = t.ceil() as usize;
        v[lo] + (t - lo as f64) * (v[hi] - v[lo])
    }

    #[test]
    fn quantile_examples() {
        let w = wv(&[3.0, -1.0, 2.0]);
        assert_eq!(squared_quantile(pf(0.0), &w), 1.0);
        assert_eq!(squared_quantile(pf(0.5), &w), 4.0);
        assert_eq!(squared_quantile(pf(0.25), &w), 2.5);
    }

    #[test]
    fn quantile_matches_sort_oracle_on_random_vectors() {
        let mut rng = crate::rng::RandomSource::new(2024);
        for trial in 0..1000 {
            let n = 1 + rng.next_index(257);
            let values: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
            let w = wv(&values);
            // Exact at achievable fractions...
            if n > 1 {
                let k = rng.next_index(n);
                let p = k as f64 / (n - 1) as f64;
                let got = squared_quantile(pf(p), &w);
                let want = quantile_oracle(p, &values);
                assert_eq!(got, want, "trial {trial} n {n} k {k}");
            }
            // ...and within 1e-12 relative under interpolation.
            let p = rng.next_f64();
            let got = squared_quantile(pf(p), &w);
            let want = quantile_oracle(p, &values);
            let tol = 1e-12 * want.abs().max(1.0);
            assert!((got - want).abs() <= tol, "trial {trial}: {got} vs {want}");
        }
    }

    #[test]
    fn quantile_monotone_and_endpoints() {
        let mut rng = crate::rng::RandomSource::new(7);
        let values: Vec<f64> = (0..33).map(|_| rng.next_normal()).collect();
        let w = wv(&values);
        let sq_min = values.iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
        let sq_max = values.iter().map(|v| v * v).fold(0.0, f64::max);
        assert_eq!(squared_quantile(pf(0.0), &w), sq_min);
        assert_eq!(squared_quantile(pf(1.0), &w), sq_max);
        let mut prev = f64::NEG_INFINITY;
        for step in 0..=100 {
            let q = squared_quantile(pf(step as f64 / 100.0), &w);
            assert!(q >= prev);
            prev = q;
        }
    }

    #[test]
    fn rms_examples() {
        let w = wv(&[3.0, 4.0]);
        let part = NeighbourhoodPartition::new(vec![vec![0, 1]], 2).unwrap();
        let rms = neighbourhood_rms(&w, &part);
        assert!((rms[0] - (12.5f64).sqrt()).abs() < 1e-12);

        let w = wv(&[-2.5, -2.5, -2.5]);
        let part = NeighbourhoodPartition::new(vec![vec![0], vec![1, 2]], 3).unwrap();
        for r in neighbourhood_rms(&w, &part) {
            assert!((r - 2.5).abs() < 1e-12);
        }

        let w = wv(&[1.0, 1.0, 3.0, 3.0]);
        let part = NeighbourhoodPartition::new(vec![vec![0, 1], vec![2, 3]], 4).unwrap();
        assert_eq!(neighbourhood_rms(&w, &part), vec![1.0, 3.0]);
    }

    #[test]
    fn converged_unstructured_examples() {
        let w = wv(&[0.1, -2.0, 0.5, 1.0]);
        let m = converged_mask_unstructured(pf(0.5), &w);
        assert_eq!(m.entries(), &[-1, 1, -1, 1]);

        let m = converged_mask_unstructured(pf(0.0), &w);
        assert_eq!(m.entries(), &[1, 1, 1, 1]);

        let m = converged_mask_unstructured(pf(1.0), &w);
        assert_eq!(m.entries(), &[-1, -1, -1, -1]);
    }

    #[test]
    fn converged_unstructured_tie_break_by_index() {
        let w = wv(&[1.0, -1.0, 1.0, 2.0]);
        let m = converged_mask_unstructured(pf(0.5), &w);
        assert_eq!(m.entries(), &[-1, -1, 1, 1]);
    }

    #[test]
    fn converged_unstructured_fraction_is_exact() {
        let mut rng = crate::rng::RandomSource::new(99);
        for _ in 0..200 {
            let n = 1 + rng.next_index(40);
            let values: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
            let p = rng.next_f64();
            let m = converged_mask_unstructured(pf(p), &wv(&values));
            let expect = (p * n as f64).round() / n as f64;
            assert_eq!(pruned_fraction(&m), expect);
        }
    }

    /// Exhaustive check: among masks with the same pruned count, the
    /// converged mask has the smallest total pruned squared magnitude (the
    /// energy-consistent optimum: low-magnitude weights go first).
    #[test]
    fn converged_unstructured_minimizes_pruned_magnitude_exhaustively() {
        let mut rng = crate::rng::RandomSource::new(4);
        for n in [2usize, 5, 9, 12] {
            let values: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
            let w = wv(&values);
            for count in 0..=n {
                let p = pf(count as f64 / n as f64);
                let mask = converged_mask_unstructured(p, &w);
                let cost = |m: &[i8]| -> f64 {
                    m.iter()
                        .enumerate()
                        .filter(|(_, e)| **e == -1)
                        .map(|(i, _)| values[i] * values[i])
                        .sum()
                };
                let got = cost(mask.entries());
                for bits in 0u32..(1 << n) {
                    if bits.count_ones() as usize != count {
                        continue;
                    }
                    let cand: Vec<i8> = (0..n)
                        .map(|i| if bits >> i & 1 == 1 { -1 } else { 1 })
                        .collect();
                    assert!(got <= cost(&cand) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn converged_structured_examples() {
        let w = wv(&[1.0, 1.0, 3.0, 3.0]);
        let part = NeighbourhoodPartition::new(vec![vec![0, 1], vec![2, 3]], 4).unwrap();
        let m = converged_mask_structured(pf(0.5), &w, &part);
        assert_eq!(m.entries(), &[-1, -1, 1, 1]);

        let m = converged_mask_structured(pf(0.0), &w, &part);
        assert_eq!(m.entries(), &[1, 1, 1, 1]);

        let single = NeighbourhoodPartition::new(vec![vec![0, 1, 2, 3]], 4).unwrap();
        let m = converged_mask_structured(pf(1.0), &w, &single);
        assert_eq!(m.entries(), &[-1, -1, -1, -1]);
    }

    /// Exhaustive check over group assignments: uniform per group, and at the
    /// same pruned count no structure-respecting mask prunes less total
    /// squared magnitude.
    #[test]
    fn converged_structured_minimal_exhaustively() {
        let mut rng = crate::rng::RandomSource::new(12);
        for _ in 0..50 {
            let m_groups = 2 + rng.next_index(7); // up to 8 groups
            let size = 1 + rng.next_index(3);
            let n = m_groups * size;
            let groups: Vec<Vec<usize>> = (0..m_groups)
                .map(|k| (k * size..(k + 1) * size).collect())
                .collect();
            let part = NeighbourhoodPartition::new(groups, n).unwrap();
            let values: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
            let w = wv(&values);
            let p = pf(rng.next_f64());
            let mask = converged_mask_structured(p, &w, &part);

            // neighbourhood-uniform
            for group in part.groups() {
                let first = mask.entries()[group[0]];
                assert!(group.iter().all(|&i| mask.entries()[i] == first));
            }

            let pruned_groups: Vec<usize> = (0..m_groups)
                .filter(|&k| mask.entries()[part.groups()[k][0]] == -1)
                .collect();
            let cost: f64 = pruned_groups
                .iter()
                .flat_map(|&k| part.groups()[k].iter())
                .map(|&i| values[i] * values[i])
                .sum();
            for bits in 0u32..(1 << m_groups) {
                if bits.count_ones() as usize != pruned_groups.len() {
                    continue;
                }
                let cand_cost: f64 = (0..m_groups)
                    .filter(|k| bits >> k & 1 == 1)
                    .flat_map(|k| part.groups()[k].iter())
                    .map(|&i| values[i] * values[i])
                    .sum();
                assert!(cost <= cand_cost + 1e-12);
            }
        }
    }

    #[test]
    fn apply_mask_cases() {
        let w = wv(&[2.0, 3.0]);
        let keep = PruneMask::all_kept(2);
        assert_eq!(apply_mask(&w, &keep).unwrap().values(), &[2.0, 3.0]);

        let drop = PruneMask::all_pruned(2);
        assert_eq!(apply_mask(&w, &drop).unwrap().values(), &[0.0, 0.0]);

        let mixed = PruneMask::new(vec![-1, 1]).unwrap();
        assert_eq!(apply_mask(&w, &mixed).unwrap().values(), &[0.0, 3.0]);

        let short = PruneMask::all_kept(1);
        assert!(apply_mask(&w, &short).is_err());
    }

    #[test]
    fn apply_mask_idempotent() {
        let mut rng = crate::rng::RandomSource::new(88);
        let values: Vec<f64> = (0..64).map(|_| rng.next_normal()).collect();
        let w = wv(&values);
        let entries: Vec<i8> = (0..64)
            .map(|i| if rng.at(i as u64) & 1 == 0 { -1 } else { 1 })
            .collect();
        let x = PruneMask::new(entries).unwrap();
        let once = apply_mask(&w, &x).unwrap();
        let twice = apply_mask(&once, &x).unwrap();
        assert_eq!(once.values(), twice.values());
    }

    #[test]
    fn pruned_fraction_cases() {
        let m = PruneMask::new(vec![-1, -1, 1, 1]).unwrap();
        assert_eq!(pruned_fraction(&m), 0.5);
        assert_eq!(pruned_fraction(&PruneMask::all_kept(5)), 0.0);
        assert_eq!(pruned_fraction(&PruneMask::all_pruned(5)), 1.0);
    }

    #[test]
    fn agreement_cases() {
        let a = PruneMask::new(vec![-1, 1, 1, 1]).unwrap();
        let b = PruneMask::all_kept(4);
        assert_eq!(mask_agreement(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_agreement(&a, &b).unwrap(), 0.75);
        let inv = PruneMask::new(vec![1, -1, -1, -1]).unwrap();
        assert_eq!(mask_agreement(&a, &inv).unwrap(), 0.0);
        assert!(mask_agreement(&a, &PruneMask::all_kept(3)).is_err());
    }

    #[test]
    fn partition_validation() {
        assert!(NeighbourhoodPartition::new(vec![vec![0, 1], vec![2]], 3).is_ok());
        // overlap
        assert!(NeighbourhoodPartition::new(vec![vec![0, 1], vec![1, 2]], 3).is_err());
        // gap
        assert!(NeighbourhoodPartition::new(vec![vec![0, 1]], 3).is_err());
        // empty group
        assert!(NeighbourhoodPartition::new(vec![vec![0, 1, 2], vec![]], 3).is_err());
        // out of range
        assert!(NeighbourhoodPartition::new(vec![vec![0, 3]], 2).is_err());
    }

    #[test]
    fn prune_fraction_validation_and_resolution() {
        assert!(PruneFraction::new(1.5).is_err());
        assert!(PruneFraction::new(-0.1).is_err());
        assert!(PruneFraction::new(f64::NAN).is_err());
        let (count, achievable) = pf(0.5).resolve_count(4);
        assert_eq!((count, achievable), (2, true));
        let (count, achievable) = pf(0.5).resolve_count(5);
        assert_eq!(count, 3); // round half away from zero
        assert!(!achievable);
    }
}
