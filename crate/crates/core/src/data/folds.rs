use serde::Serialize;

use crate::error::{DmlError, Result};
use crate::rng;

/// A seeded partition of `0..n` into `k` near-equal folds.
///
/// Fold indices are 0-based. The partition depends only on `(n, k, seed)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPartition {
    k: usize,
    seed: u64,
    assignment: Vec<usize>,
    #[serde(skip)]
    members: Vec<Vec<usize>>,
}

/// Shuffles `0..n` with Fisher–Yates on the stream for `seed`, then slices
/// the permutation into `k` contiguous blocks. The first `n mod k` blocks get
/// one extra observation.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPartition> {
    if k < 2 {
        return Err(DmlError::arg(format!("fold count must be at least 2, got {k}")));
    }
    if k > n {
        return Err(DmlError::arg(format!(
            "fold count {k} exceeds the number of observations {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut stream = rng::stream(seed);
    rng::shuffle(&mut stream, &mut perm);

    let base = n / k;
    let extra = n % k;
    let mut assignment = vec![0; n];
    let mut members = Vec::with_capacity(k);
    let mut start = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let mut block = perm[start..start + size].to_vec();
        block.sort_unstable();
        for &i in &block {
            assignment[i] = fold;
        }
        members.push(block);
        start += size;
    }
    Ok(FoldPartition {
        k,
        seed,
        assignment,
        members,
    })
}

impl FoldPartition {
    /// Builds a partition from an explicit 0-based assignment vector.
    pub fn from_assignment(assignment: Vec<usize>, seed: u64) -> Result<Self> {
        let k = assignment.iter().max().map_or(0, |m| m + 1);
        if k < 2 {
            return Err(DmlError::arg("an explicit partition needs at least 2 folds"));
        }
        let mut members = vec![Vec::new(); k];
        for (i, &f) in assignment.iter().enumerate() {
            members[f].push(i);
        }
        if let Some(f) = members.iter().position(Vec::is_empty) {
            return Err(DmlError::arg(format!("fold {} is empty", f + 1)));
        }
        Ok(Self {
            k,
            seed,
            assignment,
            members,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Observations in fold `k`, ascending.
    pub fn fold(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    /// Observations outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != k).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Maps a unit-level partition onto rows, given each row's unit index.
    pub fn expand(&self, unit_of_row: &[usize]) -> FoldPartition {
        let assignment = unit_of_row.iter().map(|&u| self.assignment[u]).collect();
        FoldPartition::from_assignment(assignment, self.seed)
            .expect("every unit fold owns at least one row")
    }
}
