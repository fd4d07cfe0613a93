//! Work-conserving PRB scheduler with an optional class reservation.

use serde::{Deserialize, Serialize};

use super::{TargetClass, UeClass};

/// An active PRB reservation for one class of UEs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reservation {
    pub fraction: f64,
    pub target: TargetClass,
}

impl Reservation {
    /// PRBs set aside for the target class: `floor(fraction * total)`.
    pub fn pool(&self, total_prbs: u32) -> u32 {
        let pool = (self.fraction.clamp(0.0, 1.0) * f64::from(total_prbs)).floor();
        (pool as u32).min(total_prbs)
    }
}

/// Split `capacity` PRBs across `demands` in proportion to demand.
///
/// Never exceeds any demand and is work-conserving: the result sums to
/// `min(capacity, sum(demands))`. Integer shares use the largest-remainder
/// method; equal remainders go to the lower index.
pub fn proportional_share(capacity: u32, demands: &[u32]) -> Vec<u32> {
    let total: u64 = demands.iter().map(|&d| u64::from(d)).sum();
    if total <= u64::from(capacity) {
        return demands.to_vec();
    }
    let cap = u64::from(capacity);
    let mut shares = Vec::with_capacity(demands.len());
    let mut remainders = Vec::with_capacity(demands.len());
    for (i, &d) in demands.iter().enumerate() {
        let num = cap * u64::from(d);
        shares.push((num / total) as u32);
        remainders.push((num % total, i));
    }
    let handed: u64 = shares.iter().map(|&s| u64::from(s)).sum();
    let mut leftover = cap - handed;
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(rem, i) in &remainders {
        if leftover == 0 || rem == 0 {
            break;
        }
        shares[i] += 1;
        leftover -= 1;
    }
    shares
}

/// Allocate PRBs for one interval.
///
/// With a reservation, UEs of the target class first share the reserved pool
/// (each capped at its demand); the remaining capacity is then split across
/// all UEs by residual demand.
pub fn schedule(total_prbs: u32, classes: &[UeClass], demands: &[u32], reservation: Option<&Reservation>) -> Vec<u32> {
    debug_assert_eq!(classes.len(), demands.len());
    let mut alloc = vec![0u32; demands.len()];
    if let Some(res) = reservation {
        let targets: Vec<usize> = (0..demands.len()).filter(|&i| res.target.matches(classes[i])).collect();
        let target_demand: Vec<u32> = targets.iter().map(|&i| demands[i]).collect();
        let reserved = proportional_share(res.pool(total_prbs), &target_demand);
        for (&i, a) in targets.iter().zip(reserved) {
            alloc[i] = a;
        }
    }
    let used: u32 = alloc.iter().sum();
    let residual: Vec<u32> = demands.iter().zip(&alloc).map(|(d, a)| d - a).collect();
    for (a, extra) in alloc.iter_mut().zip(proportional_share(total_prbs - used, &residual)) {
        *a += extra;
    }
    alloc
}
