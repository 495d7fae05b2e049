use std::fmt;

use crate::error::{Error, Result};

/// A nonempty subset `u` of the input indices `{1..k}`.
///
/// Indices are stored zero-based and sorted; the complement is derived on demand.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SubsetIndex {
    k: usize,
    members: Vec<usize>,
    complement: Vec<usize>,
}

impl SubsetIndex {
    /// Builds the subset from one-based indices.
    pub fn new(k: usize, one_based: &[usize]) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("input dimension must be at least 1"));
        }
        if one_based.is_empty() {
            return Err(Error::invalid("subset u must be nonempty"));
        }
        let mut members = Vec::with_capacity(one_based.len());
        for &i in one_based {
            if i == 0 || i > k {
                return Err(Error::invalid(format!("index {i} outside 1..={k}")));
            }
            members.push(i - 1);
        }
        members.sort_unstable();
        members.dedup();
        let complement = (0..k)
            .filter(|j| members.binary_search(j).is_err())
            .collect();
        Ok(SubsetIndex {
            k,
            members,
            complement,
        })
    }

    pub fn full(k: usize) -> Result<Self> {
        Self::new(k, &(1..=k).collect::<Vec<_>>())
    }

    /// Parses a comma separated list of one-based indices such as `"1,2"`.
    pub fn parse(k: usize, text: &str) -> Result<Self> {
        let idx = text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad subset index {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(k, &idx)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Zero-based members of `u`.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Zero-based members of the complement.
    pub fn complement(&self) -> &[usize] {
        &self.complement
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_full(&self) -> bool {
        self.complement.is_empty()
    }

    pub fn contains(&self, zero_based: usize) -> bool {
        self.members.binary_search(&zero_based).is_ok()
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.members.iter().map(|i| i + 1).collect()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.members.iter().map(|&i| x[i]).collect()
    }

    pub fn project_complement(&self, x: &[f64]) -> Vec<f64> {
        self.complement.iter().map(|&i| x[i]).collect()
    }

    /// Writes `x_u` and `x_bar` into their positions of a full point.
    pub fn assemble_into(&self, x_u: &[f64], x_bar: &[f64], out: &mut [f64]) {
        for (&i, &v) in self.members.iter().zip(x_u) {
            out[i] = v;
        }
        for (&i, &v) in self.complement.iter().zip(x_bar) {
            out[i] = v;
        }
    }

    pub fn assemble(&self, x_u: &[f64], x_bar: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        self.assemble_into(x_u, x_bar, &mut out);
        out
    }

    /// `u ∪ v`, both over the same `k`.
    pub fn union(&self, other: &SubsetIndex) -> Result<SubsetIndex> {
        if self.k != other.k {
            return Err(Error::invalid("subsets over different dimensions"));
        }
        let mut all = self.one_based();
        all.extend(other.one_based());
        SubsetIndex::new(self.k, &all)
    }
}

impl fmt::Display for SubsetIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}
