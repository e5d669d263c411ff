//! Square-root weighted stratified sampling.
//!
//! A budget of `M` items is split across strata in proportion to the square
//! root of their sizes, rounded by the largest-remainder rule so the
//! allocations sum to exactly `M`, and capped by each stratum's size.

use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SamplingError {
    #[error("at least one stratum is required")]
    NoStrata,
    #[error("cannot draw {budget} items from {available} available")]
    Infeasible { budget: u64, available: u64 },
}

const REMAINDER_TIE: f64 = 1e-9;

/// Largest-remainder rounding of real quotas summing to `total`.
/// Ties on the remainder go to the larger stratum, then the lower index.
fn largest_remainder(quotas: &[f64], sizes: &[u64], total: u64) -> Vec<u64> {
    let mut floors: Vec<u64> = quotas.iter().map(|q| (q + REMAINDER_TIE).floor() as u64).collect();
    let assigned: u64 = floors.iter().sum();
    let leftover = total.saturating_sub(assigned) as usize;
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - floors[a] as f64;
        let rb = quotas[b] - floors[b] as f64;
        if (ra - rb).abs() > REMAINDER_TIE {
            return rb.partial_cmp(&ra).unwrap_or(Ordering::Equal);
        }
        sizes[b].cmp(&sizes[a]).then(a.cmp(&b))
    });
    for &i in order.iter().take(leftover) {
        floors[i] += 1;
    }
    floors
}

/// Allocates `budget` items across strata of the given sizes.
pub fn sqrt_stratified_sample(sizes: &[u64], budget: u64) -> Result<Vec<u64>, SamplingError> {
    if sizes.is_empty() {
        return Err(SamplingError::NoStrata);
    }
    let available: u64 = sizes.iter().sum();
    if budget > available {
        return Err(SamplingError::Infeasible { budget, available });
    }
    let mut alloc = vec![0u64; sizes.len()];
    let mut active: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] > 0).collect();
    let mut remaining = budget;
    loop {
        if remaining == 0 || active.is_empty() {
            return Ok(alloc);
        }
        let roots: Vec<f64> = active.iter().map(|&i| (sizes[i] as f64).sqrt()).collect();
        let total_root: f64 = roots.iter().sum();
        let quotas: Vec<f64> = roots.iter().map(|r| remaining as f64 * r / total_root).collect();
        // strata whose quota reaches their size are filled and removed
        let capped: Vec<usize> = active
            .iter()
            .zip(&quotas)
            .filter(|(&i, &q)| q + REMAINDER_TIE >= sizes[i] as f64)
            .map(|(&i, _)| i)
            .collect();
        if capped.is_empty() {
            let active_sizes: Vec<u64> = active.iter().map(|&i| sizes[i]).collect();
            for (&i, n) in active.iter().zip(largest_remainder(&quotas, &active_sizes, remaining)) {
                alloc[i] = n;
            }
            return Ok(alloc);
        }
        for &i in &capped {
            alloc[i] = sizes[i];
            remaining -= sizes[i];
        }
        active.retain(|i| !capped.contains(i));
    }
}
