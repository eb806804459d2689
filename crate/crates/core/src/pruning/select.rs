use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::{CandidateUnit, PruneError, Scope, SparsityReport};

/// Candidates chosen for pruning, in the order they were taken.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PruneSet {
    pub units: Vec<CandidateUnit>,
}

impl PruneSet {
    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    /// Elements this set zeroes (not counting bias elements).
    pub fn elements(&self) -> usize {
        self.units.iter().map(|u| u.size).sum()
    }
}

/// Ascending score, then tensor name, then index.
pub(crate) fn candidate_order(a: &CandidateUnit, b: &CandidateUnit) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then_with(|| a.tensor.cmp(&b.tensor))
        .then_with(|| a.index.cmp(&b.index))
}

/// Smallest count `c` with `c / total >= rate`.
pub(crate) fn required_count(rate: f64, total: usize) -> usize {
    if total == 0 {
        return 0;
    }
    let t = total as f64;
    let mut c = ((rate * t).ceil() as usize).min(total);
    while c > 0 && (c - 1) as f64 / t >= rate {
        c -= 1;
    }
    while c < total && (c as f64 / t) < rate {
        c += 1;
    }
    c
}

fn take_lowest(mut pool: Vec<CandidateUnit>, already: usize, needed: usize, out: &mut Vec<CandidateUnit>) {
    pool.sort_by(candidate_order);
    let mut pruned = already;
    for c in pool {
        if pruned >= needed {
            break;
        }
        pruned += c.size;
        out.push(c);
    }
}

/// Takes candidates in ascending score order until the pruned fraction of
/// prunable elements first reaches `target_rate`. Elements already pruned
/// (per `current`) count toward the rate. With local scope the rule is
/// applied to each tensor on its own.
pub fn select_prune_set(
    candidates: Vec<CandidateUnit>,
    target_rate: f64,
    scope: Scope,
    current: &SparsityReport,
) -> Result<PruneSet, PruneError> {
    if !(0.0..=1.0).contains(&target_rate) {
        return Err(PruneError::Plan(format!("target_rate {target_rate} outside [0, 1]")));
    }
    let mut units = Vec::new();
    match scope {
        Scope::Global => {
            let needed = required_count(target_rate, current.total);
            take_lowest(candidates, current.pruned, needed, &mut units);
        }
        Scope::Local => {
            let mut by_tensor: BTreeMap<String, Vec<CandidateUnit>> = BTreeMap::new();
            for c in candidates {
                by_tensor.entry(c.tensor.clone()).or_default().push(c);
            }
            for t in &current.tensors {
                if let Some(pool) = by_tensor.remove(&t.name) {
                    take_lowest(pool, t.pruned, required_count(target_rate, t.total), &mut units);
                }
            }
            if let Some(name) = by_tensor.keys().next() {
                return Err(PruneError::UnknownParameter(name.clone()));
            }
        }
    }
    Ok(PruneSet { units })
}
