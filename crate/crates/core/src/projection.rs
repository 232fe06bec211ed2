//! Projections from embedded configurations back to the native space.
//!
//! Majority vote takes each chain's majority value and flips a fair coin on
//! ties. Restricted resampling keeps every unbroken chain and redraws the
//! broken ones from the native Boltzmann distribution conditioned on the
//! unbroken values, either exactly or with a subset-restricted Metropolis run.

use rand::RngCore;

use crate::embedding::{ChainEmbedding, ChainStatus};
use crate::enumerate::{self, EnumerationLimits};
use crate::error::{Error, Result};
use crate::exact::{
    summarize_embedded, ternary_codes_of_binary, DistributionTable, EmbeddedSummary, SummaryOptions,
    MAJORITY_TIE, STATUS_BROKEN,
};
use crate::model::{IsingModel, SpinConfiguration};
use crate::rng;
use crate::sampler::{boltzmann_sample_over_subset_with, default_subset_budget};

/// Largest broken set resampled by direct enumeration of its completions.
pub const RRS_EXACT_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrsMode {
    Exact,
    Mcmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMethod {
    MajorityVote,
    Rrs(RrsMode),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    pub projected: SpinConfiguration,
    pub broken_count: usize,
    /// Method actually applied; RRS falls back to MCMC above [`RRS_EXACT_CAP`].
    pub method: ProjectionMethod,
}

pub fn majority_vote<R: RngCore>(
    emb: &ChainEmbedding,
    embedded: &SpinConfiguration,
    g: &mut R,
) -> Result<ProjectionReport> {
    let class = emb.classify(embedded)?;
    let k = emb.chain_len() as i32;
    let spins = (0..emb.native_n())
        .map(|i| {
            let up: i32 = emb.chain(embedded.as_slice(), i).iter().map(|&s| i32::from(s > 0)).sum();
            match (2 * up).cmp(&k) {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => rng::spin(g),
            }
        })
        .collect();
    Ok(ProjectionReport {
        projected: SpinConfiguration::new(spins)?,
        broken_count: class.broken_count,
        method: ProjectionMethod::MajorityVote,
    })
}

/// Restricted resampling of the broken chains at inverse temperature `beta`.
pub fn rrs<R: RngCore>(
    emb: &ChainEmbedding,
    native: &IsingModel,
    embedded: &SpinConfiguration,
    beta: f64,
    mode: RrsMode,
    g: &mut R,
) -> Result<ProjectionReport> {
    if native.num_spins() != emb.native_n() {
        return Err(Error::EmbeddingMismatch(format!(
            "native model has {} spins, embedding has {} chains",
            native.num_spins(),
            emb.native_n()
        )));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be finite and >= 0, got {beta}")));
    }
    let class = emb.classify(embedded)?;
    let mut broken = Vec::with_capacity(class.broken_count);
    let spins = class
        .statuses
        .iter()
        .enumerate()
        .map(|(i, status)| match *status {
            ChainStatus::Aligned(v) => v,
            ChainStatus::Broken => {
                broken.push(i);
                rng::spin(g)
            }
        })
        .collect();
    let mut start = SpinConfiguration::new(spins)?;
    let applied = if mode == RrsMode::Exact && broken.len() <= RRS_EXACT_CAP { RrsMode::Exact } else { RrsMode::Mcmc };
    let projected = if broken.is_empty() {
        start
    } else if applied == RrsMode::Exact {
        sample_completion(native, beta, &mut start, &broken, g);
        start
    } else {
        boltzmann_sample_over_subset_with(native, beta, &start, &broken, default_subset_budget(broken.len()), g)?
    };
    Ok(ProjectionReport { projected, broken_count: class.broken_count, method: ProjectionMethod::Rrs(applied) })
}

/// Draws the spins in `free` from the conditional Boltzmann distribution, in place.
fn sample_completion<R: RngCore>(native: &IsingModel, beta: f64, config: &mut SpinConfiguration, free: &[usize], g: &mut R) {
    for &i in free {
        config.set(i, -1);
    }
    let spins = config.as_mut_slice();
    let count = 1usize << free.len();
    let mut energies = Vec::with_capacity(count);
    let mut e = native.energy_of(spins);
    energies.push(e);
    for t in 1..count {
        let i = free[t.trailing_zeros() as usize];
        e += native.flip_delta(spins, i);
        spins[i] = -spins[i];
        energies.push(e);
    }
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = energies.iter().map(|&e| (-beta * (e - e_min)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let target = rng::unit(g) * total;
    let mut acc = 0.0;
    let mut pick = count - 1;
    for (t, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            pick = t;
            break;
        }
    }
    // Gray code of `pick` gives which free spins are up
    let gray = pick ^ (pick >> 1);
    for (b, &i) in free.iter().enumerate() {
        spins[i] = if (gray >> b) & 1 == 1 { 1 } else { -1 };
    }
}

/// Exact distribution over native configurations of the projected embedded Boltzmann ensemble.
pub fn exact_projected_distribution(
    emb: &ChainEmbedding,
    native: &IsingModel,
    beta: f64,
    method: ProjectionMethod,
    limits: &EnumerationLimits,
) -> Result<DistributionTable> {
    let summary = summarize_embedded(emb, native, &[beta], SummaryOptions { patterns: true }, limits)?.remove(0);
    let energies = enumerate::all_energies(native, limits)?;
    projected_from_summary(&summary, &energies, method)
}

/// Projected distribution from a pattern summary and the dense native energies.
pub fn projected_from_summary(
    summary: &EmbeddedSummary,
    native_energies: &[f64],
    method: ProjectionMethod,
) -> Result<DistributionTable> {
    let n = summary.native_n();
    if native_energies.len() != 1 << n {
        return Err(Error::LengthMismatch { expected: 1 << n, got: native_energies.len() });
    }
    let table = PatternTable::new(n);
    let codes = ternary_codes_of_binary(n);
    let weights = match method {
        ProjectionMethod::MajorityVote => {
            let mut mass = summary.majority_weights()?.to_vec();
            table.split_down(&mut mass, 0.5);
            codes.iter().map(|&c| mass[c as usize]).collect()
        }
        ProjectionMethod::Rrs(_) => {
            let beta = summary.beta;
            let e_min = native_energies.iter().copied().fold(f64::INFINITY, f64::min);
            let boltz: Vec<f64> = native_energies.iter().map(|&e| (-beta * (e - e_min)).exp()).collect();
            let mut z = vec![0.0; table.len()];
            for (idx, &c) in codes.iter().enumerate() {
                z[c as usize] = boltz[idx];
            }
            table.sum_up(&mut z);
            let mut g: Vec<f64> =
                summary.status_weights()?.iter().zip(&z).map(|(&w, &zp)| if w == 0.0 { 0.0 } else { w / zp }).collect();
            table.split_down(&mut g, 1.0);
            codes.iter().zip(&boltz).map(|(&c, &b)| b * g[c as usize]).collect::<Vec<f64>>()
        }
    };
    DistributionTable::from_weights(weights)
}

/// Base-3 codes with the position of their lowest `2` digit.
struct PatternTable {
    pow3: Vec<usize>,
    lowest_two: Vec<u8>,
}

const NO_TWO: u8 = u8::MAX;

impl PatternTable {
    fn new(n: usize) -> Self {
        debug_assert_eq!(STATUS_BROKEN, MAJORITY_TIE);
        let pow3: Vec<usize> = (0..=n).map(|i| 3usize.pow(i as u32)).collect();
        let lowest_two = (0..pow3[n])
            .map(|code| {
                let mut c = code;
                for d in 0..n {
                    if (c % 3) as u8 == STATUS_BROKEN {
                        return d as u8;
                    }
                    c /= 3;
                }
                NO_TWO
            })
            .collect();
        Self { pow3, lowest_two }
    }

    fn len(&self) -> usize {
        self.lowest_two.len()
    }

    /// `v[p] = Σ` of `v` over the binary completions of `p`, from the binary entries.
    fn sum_up(&self, v: &mut [f64]) {
        for code in 0..self.len() {
            let d = self.lowest_two[code];
            if d != NO_TWO {
                let p = self.pow3[d as usize];
                v[code] = v[code - 2 * p] + v[code - p];
            }
        }
    }

    /// Pushes each entry's mass onto its two children (lowest `2` set to 0 and to 1),
    /// scaled by `factor`, until only binary codes hold mass.
    fn split_down(&self, v: &mut [f64], factor: f64) {
        for code in (0..self.len()).rev() {
            let d = self.lowest_two[code];
            if d != NO_TWO {
                let p = self.pow3[d as usize];
                let m = v[code] * factor;
                v[code - 2 * p] += m;
                v[code - p] += m;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{build_embedding, EmbeddingMode};
    use crate::exact::{boltzmann_distribution, kl_divergence, logical_subspace_distribution};
    use crate::instance::{generate_instance, Topology};

    fn lim() -> EnumerationLimits {
        EnumerationLimits::default()
    }

    fn config(s: &[i8]) -> SpinConfiguration {
        SpinConfiguration::new(s.to_vec()).unwrap()
    }

    fn setup(n: usize, k: usize, seed: u64) -> (IsingModel, ChainEmbedding, IsingModel) {
        let native = generate_instance(n, Topology::FullyConnected, seed).unwrap();
        let (emb, embedded) = build_embedding(&native, k, -2.0, EmbeddingMode::Random { seed: seed + 1 }).unwrap();
        (native, emb, embedded)
    }

    #[test]
    fn majority_picks_majority_without_draws() {
        let native = IsingModel::zeros(1).unwrap();
        let (emb, _) = build_embedding(&native, 3, -1.0, EmbeddingMode::Deterministic).unwrap();
        let mut g = rng::seeded(1);
        let before = g.clone();
        let r = majority_vote(&emb, &config(&[1, 1, -1]), &mut g).unwrap();
        assert_eq!(r.projected.as_slice(), &[1]);
        assert_eq!(r.broken_count, 1);
        assert_eq!(g, before);
    }

    #[test]
    fn logical_inputs_are_unchanged() {
        let (native, emb, _) = setup(4, 3, 3);
        let mut g = rng::seeded(2);
        for idx in 0..16 {
            let logical = SpinConfiguration::from_index(idx, 4);
            let e = emb.embed_config(&logical).unwrap();
            assert_eq!(majority_vote(&emb, &e, &mut g).unwrap().projected, logical);
            let r = rrs(&emb, &native, &e, 0.6, RrsMode::Exact, &mut g).unwrap();
            assert_eq!(r.projected, logical);
            assert_eq!(r.broken_count, 0);
        }
    }

    #[test]
    fn majority_tie_is_fair() {
        let native = IsingModel::zeros(1).unwrap();
        let (emb, _) = build_embedding(&native, 2, -1.0, EmbeddingMode::Deterministic).unwrap();
        let mut g = rng::seeded(9);
        let n = 100_000;
        let ups = (0..n).filter(|_| majority_vote(&emb, &config(&[1, -1]), &mut g).unwrap().projected.get(0) == 1).count();
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((ups as f64 - n as f64 / 2.0).abs() < 3.0 * sigma, "{ups}");
    }

    #[test]
    fn rrs_keeps_unbroken_chains() {
        let (native, emb, _) = setup(5, 3, 4);
        let mut g = rng::seeded(3);
        for t in 0..300u64 {
            let e = SpinConfiguration::from_index(t.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 49, 15);
            let class = emb.classify(&e).unwrap();
            for mode in [RrsMode::Exact, RrsMode::Mcmc] {
                let r = rrs(&emb, &native, &e, 0.6, mode, &mut g).unwrap();
                assert_eq!(r.broken_count, class.broken_count);
                for (i, s) in class.statuses.iter().enumerate() {
                    if let ChainStatus::Aligned(v) = s {
                        assert_eq!(r.projected.get(i), *v);
                    }
                }
            }
        }
    }

    #[test]
    fn rrs_with_everything_broken_is_native_boltzmann() {
        let (native, emb, _) = setup(3, 3, 7);
        let all_broken = config(&[1, -1, 1, -1, 1, 1, 1, 1, -1]);
        assert_eq!(emb.classify(&all_broken).unwrap().broken_count, 3);
        let mut g = rng::seeded(5);
        let mut counts = vec![0.0; 8];
        for _ in 0..100_000 {
            counts[rrs(&emb, &native, &all_broken, 0.6, RrsMode::Exact, &mut g).unwrap().projected.index() as usize] += 1.0;
        }
        let exact = boltzmann_distribution(&native, 0.6, &lim()).unwrap();
        let expected: Vec<f64> = exact.probs().iter().map(|p| p * 100_000.0).collect();
        let chi2: f64 = counts.iter().zip(&expected).map(|(c, e)| (c - e).powi(2) / e).sum();
        // chi-square with 7 degrees of freedom, upper 1% point
        assert!(chi2 < 18.475, "{chi2}");
    }

    #[test]
    fn rrs_at_infinite_temperature_is_uniform_over_completions() {
        let (native, emb, _) = setup(2, 2, 1);
        let broken = config(&[1, -1, -1, 1]);
        let mut g = rng::seeded(8);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[rrs(&emb, &native, &broken, 0.0, RrsMode::Exact, &mut g).unwrap().projected.index() as usize] += 1;
        }
        let sigma = (40_000.0f64 * 0.25 * 0.75).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - 10_000.0).abs() < 3.0 * sigma), "{counts:?}");
    }

    #[test]
    fn exact_mode_falls_back_above_cap() {
        let n = RRS_EXACT_CAP + 1;
        let native = IsingModel::zeros(n).unwrap();
        let (emb, _) = build_embedding(&native, 2, -1.0, EmbeddingMode::Deterministic).unwrap();
        let e = SpinConfiguration::new((0..2 * n).map(|v| if v % 2 == 0 { 1 } else { -1 }).collect()).unwrap();
        let r = rrs(&emb, &native, &e, 1.0, RrsMode::Exact, &mut rng::seeded(0)).unwrap();
        assert_eq!(r.method, ProjectionMethod::Rrs(RrsMode::Mcmc));
        assert_eq!(r.broken_count, n);
    }

    #[test]
    fn chain_length_one_projects_to_native_boltzmann() {
        let native = generate_instance(5, Topology::FullyConnected, 4).unwrap();
        let (emb, _) = build_embedding(&native, 1, -2.0, EmbeddingMode::Deterministic).unwrap();
        let exact = boltzmann_distribution(&native, 0.6, &lim()).unwrap();
        for method in [ProjectionMethod::MajorityVote, ProjectionMethod::Rrs(RrsMode::Exact)] {
            let p = exact_projected_distribution(&emb, &native, 0.6, method, &lim()).unwrap();
            assert!(p.total_variation(&exact) < 1e-12);
        }
    }

    /// Direct sum over every embedded configuration, one projection kernel at a time.
    fn brute_force(emb: &ChainEmbedding, native: &IsingModel, embedded: &IsingModel, beta: f64, mv: bool) -> Vec<f64> {
        let n = native.num_spins();
        let total = embedded.num_spins();
        let mut out = vec![0.0; 1 << n];
        for idx in 0..1u64 << total {
            let c = SpinConfiguration::from_index(idx, total);
            let w = (-beta * embedded.energy(&c).unwrap()).exp();
            let class = emb.classify(&c).unwrap();
            if mv {
                let k = emb.chain_len() as i32;
                let mut partial = vec![(0u64, w)];
                for i in 0..n {
                    let up: i32 = emb.chain(c.as_slice(), i).iter().map(|&s| i32::from(s > 0)).sum();
                    partial = partial
                        .into_iter()
                        .flat_map(|(b, m)| match (2 * up).cmp(&k) {
                            std::cmp::Ordering::Greater => vec![(b | 1 << i, m)],
                            std::cmp::Ordering::Less => vec![(b, m)],
                            std::cmp::Ordering::Equal => vec![(b, m / 2.0), (b | 1 << i, m / 2.0)],
                        })
                        .collect();
                }
                for (b, m) in partial {
                    out[b as usize] += m;
                }
            } else {
                let agrees = |x: u64| {
                    class.statuses.iter().enumerate().all(|(i, s)| match s {
                        ChainStatus::Aligned(v) => (((x >> i) & 1) == 1) == (*v > 0),
                        ChainStatus::Broken => true,
                    })
                };
                let completions: Vec<u64> = (0..1u64 << n).filter(|&x| agrees(x)).collect();
                let ws: Vec<f64> = completions
                    .iter()
                    .map(|&x| (-beta * native.energy(&SpinConfiguration::from_index(x, n)).unwrap()).exp())
                    .collect();
                let z: f64 = ws.iter().sum();
                for (&x, wx) in completions.iter().zip(ws) {
                    out[x as usize] += w * wx / z;
                }
            }
        }
        let total: f64 = out.iter().sum();
        out.iter().map(|v| v / total).collect()
    }

    #[test]
    fn exact_kernels_match_brute_force() {
        for (n, k, seed) in [(3, 2, 1), (3, 3, 2), (4, 2, 3), (2, 4, 4)] {
            let (native, emb, embedded) = setup(n, k, seed);
            for (mv, method) in [(true, ProjectionMethod::MajorityVote), (false, ProjectionMethod::Rrs(RrsMode::Exact))] {
                let fast = exact_projected_distribution(&emb, &native, 0.7, method, &lim()).unwrap();
                let slow = brute_force(&emb, &native, &embedded, 0.7, mv);
                for (a, b) in fast.probs().iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12, "n={n} k={k} mv={mv}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn projected_distributions_are_normalized() {
        let (native, emb, _) = setup(6, 3, 10);
        for method in [ProjectionMethod::MajorityVote, ProjectionMethod::Rrs(RrsMode::Exact)] {
            let p = exact_projected_distribution(&emb, &native, 0.6, method, &lim()).unwrap();
            assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rrs_restricted_to_logical_inputs_is_conditional_boltzmann() {
        // with an enormous chain penalty nearly all mass is logical
        let native = generate_instance(4, Topology::FullyConnected, 30).unwrap();
        let (emb, _) = build_embedding(&native, 3, -40.0, EmbeddingMode::Random { seed: 2 }).unwrap();
        let logical = logical_subspace_distribution(&emb, &native, 0.6, &lim()).unwrap();
        for method in [ProjectionMethod::MajorityVote, ProjectionMethod::Rrs(RrsMode::Exact)] {
            let p = exact_projected_distribution(&emb, &native, 0.6, method, &lim()).unwrap();
            assert!(p.total_variation(&logical) < 1e-12);
        }
    }

    #[test]
    fn per_sample_rrs_converges_to_exact_kernel() {
        let (native, emb, embedded) = setup(4, 3, 17);
        let beta = 0.6;
        let embedded_exact = boltzmann_distribution(&embedded, beta, &lim()).unwrap();
        let cdf: Vec<f64> = embedded_exact
            .probs()
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let mut g = rng::seeded(123);
        let mut counts = vec![0.0; 16];
        for _ in 0..200_000 {
            let u = rng::unit(&mut g);
            let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let e = SpinConfiguration::from_index(idx as u64, 12);
            counts[rrs(&emb, &native, &e, beta, RrsMode::Exact, &mut g).unwrap().projected.index() as usize] += 1.0;
        }
        let emp = DistributionTable::from_weights(counts).unwrap();
        let exact =
            exact_projected_distribution(&emb, &native, beta, ProjectionMethod::Rrs(RrsMode::Exact), &lim()).unwrap();
        assert!(kl_divergence(&emp, &exact).unwrap() < 1e-3);
    }
}
