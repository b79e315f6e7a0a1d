//! Exact minimum hitting sets with a deterministic lexicographic tie-break.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use thiserror::Error;

use crate::lang::GuardId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MhsError {
    #[error("set #{0} of the instance is empty")]
    EmptySetMember(usize),
    #[error("universe has {0} elements; brute force handles at most {max}", max = BRUTE_FORCE_MAX)]
    UniverseTooLarge(usize),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

pub const BRUTE_FORCE_MAX: usize = 20;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HittingInstance {
    pub universe: BTreeSet<GuardId>,
    pub sets: Vec<BTreeSet<GuardId>>,
}

impl HittingInstance {
    /// Instance whose universe is the union of its sets.
    pub fn from_sets(sets: Vec<BTreeSet<GuardId>>) -> Self {
        let universe = sets.iter().flatten().copied().collect();
        HittingInstance { universe, sets }
    }

    pub fn push(&mut self, set: BTreeSet<GuardId>) {
        self.universe.extend(set.iter().copied());
        self.sets.push(set);
    }

    fn check(&self) -> Result<(), MhsError> {
        match self.sets.iter().position(BTreeSet::is_empty) {
            Some(i) => Err(MhsError::EmptySetMember(i)),
            None => Ok(()),
        }
    }
}

/// Plain-text form: one set per line, space-separated non-negative ids.
/// Blank lines and `#` comments are ignored.
impl FromStr for HittingInstance {
    type Err = MhsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut inst = HittingInstance::default();
        for (i, raw) in s.lines().enumerate() {
            let text = raw.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let mut set = BTreeSet::new();
            for tok in text.split_whitespace() {
                let id: u32 = tok.parse().map_err(|_| MhsError::Format {
                    line: i + 1,
                    message: format!("`{tok}` is not a non-negative integer"),
                })?;
                set.insert(GuardId(id));
            }
            inst.push(set);
        }
        Ok(inst)
    }
}

impl fmt::Display for HittingInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.sets {
            writeln!(f, "{}", s.iter().map(|g| g.0).join(" "))?;
        }
        Ok(())
    }
}

pub fn is_hitting_set(inst: &HittingInstance, h: &BTreeSet<GuardId>) -> bool {
    inst.sets.iter().all(|s| !s.is_disjoint(h))
}

/// Dense view of an instance: elements are indices into the sorted universe.
struct Dense {
    elems: Vec<GuardId>,
    sets: Vec<Vec<usize>>,
}

impl Dense {
    fn new(inst: &HittingInstance) -> Self {
        let elems: Vec<GuardId> = inst
            .universe
            .iter()
            .chain(inst.sets.iter().flatten())
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index = |g: &GuardId| elems.binary_search(g).expect("element in universe");
        let mut sets: Vec<Vec<usize>> = inst
            .sets
            .iter()
            .map(|s| s.iter().map(index).collect())
            .collect();
        sets.sort();
        sets.dedup();
        Dense { elems, sets }
    }

    /// Whether the sets not hit by `chosen` can be hit with at most
    /// `budget` further elements, all of index `>= min_elem`.
    fn coverable(&self, chosen: &mut Vec<bool>, budget: usize, min_elem: usize) -> bool {
        let mut pick: Option<Vec<usize>> = None;
        for s in &self.sets {
            if s.iter().any(|&e| chosen[e]) {
                continue;
            }
            let allowed: Vec<usize> = s.iter().copied().filter(|&e| e >= min_elem).collect();
            if allowed.is_empty() || budget == 0 {
                return false;
            }
            if pick.as_ref().is_none_or(|p| allowed.len() < p.len()) {
                pick = Some(allowed);
            }
        }
        let Some(branch) = pick else {
            return true;
        };
        if self.disjoint_lower_bound(chosen, min_elem) > budget {
            return false;
        }
        for e in branch {
            chosen[e] = true;
            let ok = self.coverable(chosen, budget - 1, min_elem);
            chosen[e] = false;
            if ok {
                return true;
            }
        }
        false
    }

    /// Number of pairwise-disjoint uncovered sets found greedily; each needs
    /// its own element.
    fn disjoint_lower_bound(&self, chosen: &[bool], min_elem: usize) -> usize {
        let mut used = vec![false; self.elems.len()];
        let mut count = 0;
        for s in &self.sets {
            if s.iter().any(|&e| chosen[e]) {
                continue;
            }
            let allowed = s.iter().filter(|&&e| e >= min_elem);
            if allowed.clone().all(|&e| !used[e]) {
                for &e in allowed {
                    used[e] = true;
                }
                count += 1;
            }
        }
        count
    }
}

/// Minimum-cardinality hitting set; among those, the lexicographically
/// smallest sorted sequence.
pub fn solve_mhs(inst: &HittingInstance) -> Result<BTreeSet<GuardId>, MhsError> {
    inst.check()?;
    let dense = Dense::new(inst);
    let n = dense.elems.len();
    let mut chosen = vec![false; n];
    let mut k = dense.disjoint_lower_bound(&chosen, 0);
    while !dense.coverable(&mut chosen, k, 0) {
        k += 1;
    }
    // Fix elements left to right: the smallest element that still admits a
    // cover of the remaining size using only larger elements.
    let mut out = BTreeSet::new();
    let mut min_elem = 0;
    for remaining in (0..k).rev() {
        if dense.coverable(&mut chosen, 0, n) {
            break;
        }
        let e = (min_elem..n)
            .find(|&e| {
                chosen[e] = true;
                let ok = dense.coverable(&mut chosen, remaining, e + 1);
                chosen[e] = false;
                ok
            })
            .expect("a cover of size k exists");
        chosen[e] = true;
        out.insert(dense.elems[e]);
        min_elem = e + 1;
    }
    Ok(out)
}

/// Exhaustive search in cardinality-then-lexicographic order.
pub fn brute_force_mhs(inst: &HittingInstance) -> Result<BTreeSet<GuardId>, MhsError> {
    inst.check()?;
    let elems: Vec<GuardId> = inst
        .universe
        .iter()
        .chain(inst.sets.iter().flatten())
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if elems.len() > BRUTE_FORCE_MAX {
        return Err(MhsError::UniverseTooLarge(elems.len()));
    }
    for k in 0..=elems.len() {
        for combo in elems.iter().copied().combinations(k) {
            let h: BTreeSet<GuardId> = combo.into_iter().collect();
            if is_hitting_set(inst, &h) {
                return Ok(h);
            }
        }
    }
    unreachable!("the whole universe hits every non-empty set")
}
