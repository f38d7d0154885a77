use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::ComplexityLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cannot vote over an empty list")]
pub struct EmptyVoteList;

/// Two-of-three rule: the highest level met or exceeded by at least two
/// elements, which is the median of the three.
pub fn combine_mdm(problem: ComplexityLevel, data: ComplexityLevel, risk: ComplexityLevel) -> ComplexityLevel {
    let mut levels = [problem, data, risk];
    levels.sort_unstable();
    levels[1]
}

/// Most frequent value; ties go to the smallest tied value, i.e. the first
/// one in the ascending-sorted vote list.
pub fn majority_vote<T: Ord + Clone>(votes: &[T]) -> Result<T, EmptyVoteList> {
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for v in votes {
        *counts.entry(v).or_default() += 1;
    }
    // BTreeMap iterates ascending, so the first maximum is the smallest.
    let mut best: Option<(&T, usize)> = None;
    for (value, count) in counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((value, count));
        }
    }
    best.map(|(v, _)| v.clone()).ok_or(EmptyVoteList)
}
