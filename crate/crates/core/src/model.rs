//! Classical Ising Hamiltonians `H(s) = Σ J_ij s_i s_j + Σ h_i s_i` over sparse edge lists.

use std::fmt;

use crate::enumerate::{self, EnumerationLimits};
use crate::error::{Error, Result};

/// A single undirected coupling with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Ising model with a sparse coupling list and one local field per spin.
///
/// Couplings are normalized to `i < j` and kept sorted by `(i, j)`. A CSR
/// adjacency is built once at construction for single-flip energy deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    num_spins: usize,
    couplings: Vec<Coupling>,
    fields: Vec<f64>,
    adj_offsets: Vec<usize>,
    adj: Vec<(usize, f64)>,
}

impl IsingModel {
    pub fn new(num_spins: usize, couplings: Vec<(usize, usize, f64)>, fields: Vec<f64>) -> Result<Self> {
        if num_spins == 0 {
            return Err(Error::EmptyModel);
        }
        if fields.len() != num_spins {
            return Err(Error::FieldCount { expected: num_spins, got: fields.len() });
        }
        if fields.iter().any(|h| !h.is_finite()) {
            return Err(Error::NonFinite("local field"));
        }
        let mut normalized = Vec::with_capacity(couplings.len());
        for (a, b, value) in couplings {
            for index in [a, b] {
                if index >= num_spins {
                    return Err(Error::IndexOutOfRange { index, num_spins });
                }
            }
            if a == b {
                return Err(Error::SelfCoupling(a));
            }
            if !value.is_finite() {
                return Err(Error::NonFinite("coupling"));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            normalized.push(Coupling { i, j, value });
        }
        normalized.sort_by_key(|c| (c.i, c.j));
        for w in normalized.windows(2) {
            if (w[0].i, w[0].j) == (w[1].i, w[1].j) {
                return Err(Error::DuplicateCoupling(w[0].i, w[0].j));
            }
        }

        let mut degree = vec![0usize; num_spins];
        for c in &normalized {
            degree[c.i] += 1;
            degree[c.j] += 1;
        }
        let mut adj_offsets = Vec::with_capacity(num_spins + 1);
        adj_offsets.push(0);
        for d in &degree {
            adj_offsets.push(adj_offsets.last().unwrap() + d);
        }
        let mut fill = adj_offsets[..num_spins].to_vec();
        let mut adj = vec![(0usize, 0.0f64); adj_offsets[num_spins]];
        for c in &normalized {
            adj[fill[c.i]] = (c.j, c.value);
            fill[c.i] += 1;
            adj[fill[c.j]] = (c.i, c.value);
            fill[c.j] += 1;
        }

        Ok(Self { num_spins, couplings: normalized, fields, adj_offsets, adj })
    }

    /// Model with no couplings and zero fields.
    pub fn zeros(num_spins: usize) -> Result<Self> {
        Self::new(num_spins, Vec::new(), vec![0.0; num_spins])
    }

    pub fn num_spins(&self) -> usize {
        self.num_spins
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    /// Coupling value between `i` and `j`, if the edge exists.
    pub fn coupling(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.couplings
            .binary_search_by_key(&(a, b), |c| (c.i, c.j))
            .ok()
            .map(|k| self.couplings[k].value)
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[self.adj_offsets[i]..self.adj_offsets[i + 1]]
    }

    /// Energy of `config`, summed over couplings in sorted order and then fields.
    pub fn energy(&self, config: &SpinConfiguration) -> Result<f64> {
        if config.len() != self.num_spins {
            return Err(Error::LengthMismatch { expected: self.num_spins, got: config.len() });
        }
        Ok(self.energy_of(config.as_slice()))
    }

    /// Energy of a raw spin slice; the caller guarantees the length.
    pub fn energy_of(&self, spins: &[i8]) -> f64 {
        debug_assert_eq!(spins.len(), self.num_spins);
        let mut e = 0.0;
        for c in &self.couplings {
            e += c.value * f64::from(spins[c.i] * spins[c.j]);
        }
        for (h, &s) in self.fields.iter().zip(spins) {
            e += h * f64::from(s);
        }
        e
    }

    /// `h_i + Σ_j J_ij s_j`.
    #[inline]
    pub fn local_field(&self, spins: &[i8], i: usize) -> f64 {
        let mut f = self.fields[i];
        for &(j, value) in self.neighbors(i) {
            f += value * f64::from(spins[j]);
        }
        f
    }

    /// Energy change from flipping spin `i`.
    #[inline]
    pub fn flip_delta(&self, spins: &[i8], i: usize) -> f64 {
        -2.0 * f64::from(spins[i]) * self.local_field(spins, i)
    }

    /// Exhaustive density of states, energies bucketed at [`LEVEL_TOLERANCE`].
    pub fn energy_histogram(&self, limits: &EnumerationLimits) -> Result<EnergyLevelHistogram> {
        enumerate::energy_histogram(self, limits)
    }
}

/// Absolute tolerance used to merge energies into one level.
pub const LEVEL_TOLERANCE: f64 = 1e-9;

/// A configuration over {-1, +1}.
///
/// Configurations convert to and from integer indices with bit `i` set
/// meaning `s_i = +1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfiguration(Vec<i8>);

impl SpinConfiguration {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(&bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidSpin(i64::from(bad)));
        }
        Ok(Self(spins))
    }

    pub fn uniform(len: usize, value: i8) -> Self {
        assert!(value == 1 || value == -1);
        Self(vec![value; len])
    }

    pub fn from_index(index: u64, len: usize) -> Self {
        Self((0..len).map(|i| if (index >> i) & 1 == 1 { 1 } else { -1 }).collect())
    }

    pub fn index(&self) -> u64 {
        assert!(self.0.len() <= 64, "index form needs at most 64 spins");
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &s)| if s == 1 { acc | (1 << i) } else { acc })
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> i8 {
        self.0[i]
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] = -self.0[i];
    }

    pub fn set(&mut self, i: usize, value: i8) {
        assert!(value == 1 || value == -1);
        self.0[i] = value;
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [i8] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<i8> {
        self.0
    }
}

impl fmt::Display for SpinConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            f.write_str(if s == 1 { "+" } else { "-" })?;
        }
        Ok(())
    }
}

/// Energy levels with their exact degeneracies.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLevelHistogram {
    pub levels: Vec<(f64, u64)>,
}

impl EnergyLevelHistogram {
    pub fn total_states(&self) -> u64 {
        self.levels.iter().map(|&(_, g)| g).sum()
    }

    /// Index of the level within [`LEVEL_TOLERANCE`]-scaled distance of `energy`.
    pub fn level_of(&self, energy: f64, tolerance: f64) -> Option<usize> {
        let pos = self.levels.partition_point(|&(e, _)| e < energy);
        [pos.checked_sub(1), Some(pos)]
            .into_iter()
            .flatten()
            .filter(|&k| k < self.levels.len())
            .min_by(|&a, &b| {
                (self.levels[a].0 - energy).abs().total_cmp(&(self.levels[b].0 - energy).abs())
            })
            .filter(|&k| (self.levels[k].0 - energy).abs() <= tolerance)
    }

    /// `P_i = g_i e^{-βE_i} / Z` for every level.
    pub fn level_probabilities(&self, beta: f64) -> Vec<f64> {
        let e_min = self.levels.first().map_or(0.0, |l| l.0);
        let weights: Vec<f64> = self
            .levels
            .iter()
            .map(|&(e, g)| g as f64 * (-beta * (e - e_min)).exp())
            .collect();
        let z: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / z).collect()
    }
}
