//! Chunked Gray-code enumeration with a thread-count independent reduction.
//!
//! The state space `0..2^n` is cut into fixed chunks of `2^CHUNK_BITS`
//! configurations. Inside a chunk the low bits are walked in reflected Gray
//! order so each step flips exactly one spin and the energy is updated with a
//! single-spin delta. Chunk partials are combined in fixed blocks with a
//! pairwise tree, so results never depend on how rayon schedules the work.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{EnergyLevelHistogram, IsingModel, LEVEL_TOLERANCE};

pub const CHUNK_BITS: u32 = 16;
const BLOCK_CHUNKS: u64 = 64;

/// Caps on exhaustive enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationLimits {
    /// Largest state space walked, as a power of two.
    pub max_states_log2: u32,
    /// Largest dense per-configuration table materialized, as a power of two.
    pub max_table_log2: u32,
}

impl Default for EnumerationLimits {
    fn default() -> Self {
        Self { max_states_log2: 30, max_table_log2: 24 }
    }
}

impl EnumerationLimits {
    pub fn check_states(&self, spins: usize) -> Result<()> {
        if spins > self.max_states_log2 as usize {
            return Err(Error::TooLarge { states_log2: spins, cap_log2: self.max_states_log2 });
        }
        Ok(())
    }

    pub fn check_table(&self, spins: usize) -> Result<()> {
        self.check_states(spins)?;
        if spins > self.max_table_log2 as usize {
            return Err(Error::TooLarge { states_log2: spins, cap_log2: self.max_table_log2 });
        }
        Ok(())
    }
}

/// Number of chunks and bits per chunk for an `n`-spin state space.
pub(crate) fn chunking(n: usize) -> (u64, u32) {
    let bits = CHUNK_BITS.min(n as u32);
    (1u64 << (n as u32 - bits), bits)
}

/// Visits every configuration of chunk `chunk` in Gray order.
///
/// `visit(index, energy, flipped)` receives the configuration index, its
/// energy and the spin flipped to reach it (`None` for the first state).
#[inline]
pub(crate) fn walk_chunk<F>(model: &IsingModel, chunk_bits: u32, chunk: u64, mut visit: F)
where
    F: FnMut(u64, f64, Option<usize>),
{
    let n = model.num_spins();
    let base = chunk << chunk_bits;
    let mut spins: Vec<i8> = (0..n).map(|i| if (base >> i) & 1 == 1 { 1 } else { -1 }).collect();
    let mut energy = model.energy_of(&spins);
    let mut index = base;
    visit(index, energy, None);
    for t in 1u64..(1u64 << chunk_bits) {
        let bit = t.trailing_zeros() as usize;
        energy += model.flip_delta(&spins, bit);
        spins[bit] = -spins[bit];
        index ^= 1 << bit;
        visit(index, energy, Some(bit));
    }
}

/// Deterministic parallel map over chunk ids followed by a fixed-shape reduction.
pub(crate) fn map_reduce<T, M, R>(num_chunks: u64, map: M, merge: R) -> T
where
    T: Send,
    M: Fn(u64) -> T + Sync,
    R: Fn(T, T) -> T + Sync,
{
    assert!(num_chunks > 0);
    let mut acc: Option<T> = None;
    let mut start = 0;
    while start < num_chunks {
        let end = (start + BLOCK_CHUNKS).min(num_chunks);
        let parts: Vec<T> = (start..end).into_par_iter().map(&map).collect();
        let block = pairwise(parts, &merge);
        acc = Some(match acc {
            None => block,
            Some(a) => merge(a, block),
        });
        start = end;
    }
    acc.unwrap()
}

fn pairwise<T, R: Fn(T, T) -> T>(mut parts: Vec<T>, merge: &R) -> T {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(merge(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// Non-negative sums stored relative to a common log-scale `shift`:
/// the represented value of entry `k` is `sums[k] * exp(shift)`.
#[derive(Debug, Clone)]
pub(crate) struct ScaledSums {
    pub shift: f64,
    pub sums: Vec<f64>,
}

impl ScaledSums {
    pub fn merge(mut self, other: Self) -> Self {
        debug_assert_eq!(self.sums.len(), other.sums.len());
        if other.shift == f64::NEG_INFINITY {
            return self;
        }
        if self.shift == f64::NEG_INFINITY {
            return other;
        }
        let m = self.shift.max(other.shift);
        let a = (self.shift - m).exp();
        let b = (other.shift - m).exp();
        for (x, y) in self.sums.iter_mut().zip(&other.sums) {
            *x = *x * a + *y * b;
        }
        self.shift = m;
        self
    }
}

/// Numerically stable `ln Σ exp(x_k)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// `ln Z(β)` by exhaustive enumeration.
pub fn log_partition(model: &IsingModel, beta: f64, limits: &EnumerationLimits) -> Result<f64> {
    limits.check_states(model.num_spins())?;
    let (chunks, bits) = chunking(model.num_spins());
    let total = map_reduce(
        chunks,
        |chunk| {
            let mut energies = Vec::with_capacity(1 << bits);
            walk_chunk(model, bits, chunk, |_, e, _| energies.push(e));
            let shift = energies.iter().map(|&e| -beta * e).fold(f64::NEG_INFINITY, f64::max);
            let sum = energies.iter().map(|&e| (-beta * e - shift).exp()).sum::<f64>();
            ScaledSums { shift, sums: vec![sum] }
        },
        ScaledSums::merge,
    );
    Ok(total.shift + total.sums[0].ln())
}

/// Energy of every configuration, indexed by configuration index.
pub fn all_energies(model: &IsingModel, limits: &EnumerationLimits) -> Result<Vec<f64>> {
    limits.check_table(model.num_spins())?;
    let (chunks, bits) = chunking(model.num_spins());
    let per_chunk: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let base = chunk << bits;
            let mut out = vec![0.0; 1 << bits];
            walk_chunk(model, bits, chunk, |idx, e, _| out[(idx - base) as usize] = e);
            out
        })
        .collect();
    Ok(per_chunk.concat())
}

pub(crate) fn energy_histogram(model: &IsingModel, limits: &EnumerationLimits) -> Result<EnergyLevelHistogram> {
    limits.check_states(model.num_spins())?;
    let (chunks, bits) = chunking(model.num_spins());
    let levels = map_reduce(
        chunks,
        |chunk| {
            let mut energies = Vec::with_capacity(1 << bits);
            walk_chunk(model, bits, chunk, |_, e, _| energies.push(e));
            energies.sort_by(f64::total_cmp);
            coalesce(energies.into_iter().map(|e| (e, 1)))
        },
        merge_levels,
    );
    Ok(EnergyLevelHistogram { levels })
}

fn coalesce(sorted: impl Iterator<Item = (f64, u64)>) -> Vec<(f64, u64)> {
    let mut out: Vec<(f64, u64)> = Vec::new();
    for (e, g) in sorted {
        match out.last_mut() {
            Some(last) if (e - last.0).abs() <= LEVEL_TOLERANCE => last.1 += g,
            _ => out.push((e, g)),
        }
    }
    out
}

fn merge_levels(a: Vec<(f64, u64)>, b: Vec<(f64, u64)>) -> Vec<(f64, u64)> {
    let mut merged = Vec::with_capacity(a.len() + b.len());
    let (mut ia, mut ib) = (a.into_iter().peekable(), b.into_iter().peekable());
    loop {
        let next = match (ia.peek(), ib.peek()) {
            (Some(x), Some(y)) => {
                if x.0 <= y.0 {
                    ia.next()
                } else {
                    ib.next()
                }
            }
            (Some(_), None) => ia.next(),
            (None, Some(_)) => ib.next(),
            (None, None) => break,
        };
        merged.push(next.unwrap());
    }
    coalesce(merged.into_iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SpinConfiguration;

    fn ring(n: usize) -> IsingModel {
        let couplings = (0..n).map(|i| (i, (i + 1) % n, 0.2 * (i as f64) - 0.5)).collect();
        let fields = (0..n).map(|i| 0.1 * (i as f64 % 3.0) - 0.1).collect();
        IsingModel::new(n, couplings, fields).unwrap()
    }

    #[test]
    fn gray_walk_covers_every_state_once_with_correct_energy() {
        let m = ring(7);
        let (chunks, bits) = chunking(7);
        assert_eq!((chunks, bits), (1, 7));
        let mut seen = vec![false; 128];
        walk_chunk(&m, bits, 0, |idx, e, _| {
            assert!(!seen[idx as usize]);
            seen[idx as usize] = true;
            let direct = m.energy(&SpinConfiguration::from_index(idx, 7)).unwrap();
            assert!((e - direct).abs() < 1e-12);
        });
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn multi_chunk_walk_matches_direct() {
        let m = ring(18);
        let energies = all_energies(&m, &EnumerationLimits::default()).unwrap();
        assert_eq!(energies.len(), 1 << 18);
        for idx in (0..1u64 << 18).step_by(997) {
            let direct = m.energy(&SpinConfiguration::from_index(idx, 18)).unwrap();
            assert!((energies[idx as usize] - direct).abs() < 1e-11);
        }
    }

    #[test]
    fn log_partition_single_spin() {
        let free = IsingModel::zeros(1).unwrap();
        let lim = EnumerationLimits::default();
        assert!((log_partition(&free, 0.7, &lim).unwrap() - 2f64.ln()).abs() < 1e-15);
        let field = IsingModel::new(1, vec![], vec![1.0]).unwrap();
        let expected = (2.0 * 0.6f64.cosh()).ln();
        assert!((log_partition(&field, 0.6, &lim).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn log_partition_two_spin_ferromagnet() {
        let m = IsingModel::new(2, vec![(0, 1, -1.0)], vec![0.0, 0.0]).unwrap();
        let expected = (2.0 * 0.6f64.exp() + 2.0 * (-0.6f64).exp()).ln();
        let got = log_partition(&m, 0.6, &EnumerationLimits::default()).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn cap_is_enforced() {
        let lim = EnumerationLimits { max_states_log2: 4, max_table_log2: 3 };
        let m = IsingModel::zeros(5).unwrap();
        assert!(matches!(log_partition(&m, 1.0, &lim), Err(Error::TooLarge { .. })));
        assert!(matches!(m.energy_histogram(&lim), Err(Error::TooLarge { .. })));
        assert!(matches!(all_energies(&IsingModel::zeros(4).unwrap(), &lim), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn histograms_of_small_models() {
        let lim = EnumerationLimits::default();
        let one = IsingModel::new(1, vec![], vec![1.0]).unwrap();
        assert_eq!(one.energy_histogram(&lim).unwrap().levels, vec![(-1.0, 1), (1.0, 1)]);
        let ferro = IsingModel::new(2, vec![(0, 1, -1.0)], vec![0.0, 0.0]).unwrap();
        assert_eq!(ferro.energy_histogram(&lim).unwrap().levels, vec![(-1.0, 2), (1.0, 2)]);
    }

    #[test]
    fn histogram_over_chunks_sums_to_state_count() {
        let m = ring(19);
        let h = m.energy_histogram(&EnumerationLimits::default()).unwrap();
        assert_eq!(h.total_states(), 1 << 19);
        assert!(h.levels.windows(2).all(|w| w[1].0 - w[0].0 > LEVEL_TOLERANCE));
    }

    #[test]
    fn pairwise_shape_is_fixed() {
        let order = pairwise((0..5).map(|i| i.to_string()).collect(), &|a: String, b: String| format!("({a}{b})"));
        assert_eq!(order, "(((01)(23))4)");
    }
}
