//! Downward-closed multi-index sets and their reduced margins.
//!
//! A [`MultiIndexSet`] defines the active terms of a polynomial expansion.
//! Adaptive training grows it one index at a time, always picking from the
//! reduced margin so that the set stays downward closed.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-variable polynomial orders of one tensor-product term.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(orders: Vec<usize>) -> Self {
        MultiIndex(orders)
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// Unit index `e_j` scaled by `order`.
    pub fn axis(dim: usize, j: usize, order: usize) -> Self {
        let mut v = vec![0; dim];
        v[j] = order;
        MultiIndex(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn orders(&self) -> &[usize] {
        &self.0
    }

    pub fn total_order(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn max_order(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&o| o == 0)
    }

    /// Coordinate-wise predecessors `α − e_j` for every `j` with `α_j > 0`.
    pub fn predecessors(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        (0..self.0.len()).filter(|&j| self.0[j] > 0).map(move |j| {
            let mut v = self.0.clone();
            v[j] -= 1;
            MultiIndex(v)
        })
    }

    fn successors(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        (0..self.0.len()).map(move |j| {
            let mut v = self.0.clone();
            v[j] += 1;
            MultiIndex(v)
        })
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, o) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{o}")?;
        }
        write!(f, ")")
    }
}

/// Optional bounds on candidate indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderCaps {
    pub max_per_variable: usize,
    pub max_total: usize,
}

impl Default for OrderCaps {
    fn default() -> Self {
        OrderCaps {
            max_per_variable: 5,
            max_total: 5,
        }
    }
}

impl OrderCaps {
    pub fn admits(&self, alpha: &MultiIndex) -> bool {
        alpha.max_order() <= self.max_per_variable && alpha.total_order() <= self.max_total
    }
}

/// A downward-closed set of multi-indices, stored in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiIndexSet {
    dim: usize,
    members: Vec<MultiIndex>,
}

impl MultiIndexSet {
    /// Builds a set and checks it is duplicate-free and downward closed.
    pub fn from_indices(dim: usize, indices: Vec<MultiIndex>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("index set dimension must be positive"));
        }
        let mut members = indices;
        for a in &members {
            if a.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: a.dim(),
                });
            }
        }
        members.sort();
        let before = members.len();
        members.dedup();
        if members.len() != before {
            return Err(Error::invalid("duplicate multi-index"));
        }
        let set = MultiIndexSet { dim, members };
        if let Some(bad) = set.members.iter().find(|a| !set.predecessors_present(a)) {
            return Err(Error::ClosureViolation(bad.clone()));
        }
        Ok(set)
    }

    /// `{0}` in `dim` variables.
    pub fn constant(dim: usize) -> Self {
        MultiIndexSet {
            dim,
            members: vec![MultiIndex::zero(dim)],
        }
    }

    /// `{0, e_last}`: constant plus linear term in the last variable.
    pub fn diagonal_linear(dim: usize) -> Self {
        let mut members = vec![MultiIndex::zero(dim), MultiIndex::axis(dim, dim - 1, 1)];
        members.sort();
        MultiIndexSet { dim, members }
    }

    /// All indices of total order at most `order`.
    pub fn total_order(dim: usize, order: usize) -> Self {
        let mut members = Vec::new();
        let mut cur = vec![0usize; dim];
        loop {
            if cur.iter().sum::<usize>() <= order {
                members.push(MultiIndex(cur.clone()));
            }
            // odometer
            let mut j = dim;
            loop {
                if j == 0 {
                    members.sort();
                    return MultiIndexSet { dim, members };
                }
                j -= 1;
                if cur[j] < order {
                    cur[j] += 1;
                    break;
                }
                cur[j] = 0;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[MultiIndex] {
        &self.members
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MultiIndex> {
        self.members.iter()
    }

    pub fn contains(&self, alpha: &MultiIndex) -> bool {
        self.members.binary_search(alpha).is_ok()
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.members.binary_search(alpha).ok()
    }

    /// Largest order appearing in variable `j`.
    pub fn max_order_in(&self, j: usize) -> usize {
        self.members.iter().map(|a| a.0[j]).max().unwrap_or(0)
    }

    /// Largest total order over members.
    pub fn max_total_order(&self) -> usize {
        self.members
            .iter()
            .map(MultiIndex::total_order)
            .max()
            .unwrap_or(0)
    }

    fn predecessors_present(&self, alpha: &MultiIndex) -> bool {
        alpha.predecessors().all(|p| self.contains(&p))
    }

    /// Indices outside the set whose predecessors all lie inside it,
    /// sorted lexicographically.
    pub fn reduced_margin(&self) -> Result<Vec<MultiIndex>> {
        if self.members.is_empty() {
            return Err(Error::EmptyIndexSet);
        }
        let candidates: BTreeSet<MultiIndex> = self
            .members
            .iter()
            .flat_map(|a| a.successors().collect::<Vec<_>>())
            .filter(|c| !self.contains(c) && self.predecessors_present(c))
            .collect();
        Ok(candidates.into_iter().collect())
    }

    /// Reduced margin restricted to indices admitted by `caps`.
    pub fn reduced_margin_capped(&self, caps: &OrderCaps) -> Result<Vec<MultiIndex>> {
        Ok(self
            .reduced_margin()?
            .into_iter()
            .filter(|a| caps.admits(a))
            .collect())
    }

    /// Returns a new set with `alpha` added. `alpha` must be in the reduced margin.
    pub fn add_index(&self, alpha: MultiIndex) -> Result<Self> {
        if alpha.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: alpha.dim(),
            });
        }
        if self.contains(&alpha) || !self.predecessors_present(&alpha) {
            return Err(Error::ClosureViolation(alpha));
        }
        let mut members = self.members.clone();
        let pos = members.binary_search(&alpha).unwrap_err();
        members.insert(pos, alpha);
        Ok(MultiIndexSet {
            dim: self.dim,
            members,
        })
    }

    /// Integer matrix view: one row per member.
    pub fn to_rows(&self) -> Vec<Vec<usize>> {
        self.members.iter().map(|a| a.0.clone()).collect()
    }

    pub fn from_rows(dim: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        Self::from_indices(dim, rows.into_iter().map(MultiIndex).collect())
    }
}

impl<'a> IntoIterator for &'a MultiIndexSet {
    type Item = &'a MultiIndex;
    type IntoIter = std::slice::Iter<'a, MultiIndex>;

    fn into_iter(self) -> Self::IntoIter {
        self.members.iter()
    }
}
