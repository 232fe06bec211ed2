//! Single-spin-flip Metropolis sampling.
//!
//! Each realization starts from a uniformly random configuration (one draw
//! per spin, in index order) and proposes flips of uniformly chosen spins. A
//! sample is emitted after every `N_T` proposals, rejected ones included.

use std::io::{self, Write};

use rand::RngCore;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instance::model_hash;
use crate::model::{IsingModel, SpinConfiguration};
use crate::rng;

/// Proposals between full re-evaluations of the tracked energy.
pub const AUDIT_INTERVAL: u64 = 100_000;
/// Largest acceptable gap between tracked and recomputed energy.
pub const AUDIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub beta: f64,
    pub thermalization_steps: u64,
    pub samples_per_realization: u64,
    pub realizations: u64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(
        beta: f64,
        thermalization_steps: u64,
        samples_per_realization: u64,
        realizations: u64,
        seed: u64,
    ) -> Result<Self> {
        let cfg = Self { beta, thermalization_steps, samples_per_realization, realizations, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if self.thermalization_steps == 0 || self.samples_per_realization == 0 || self.realizations == 0 {
            return Err(Error::InvalidParameter("sampler counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> u64 {
        self.samples_per_realization * self.realizations
    }
}

/// Samples in emission order, realization by realization.
///
/// Configurations are bit-packed: bit `i` of a row is set when spin `i` is `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    num_spins: usize,
    words: usize,
    packed: Vec<u64>,
    energies: Vec<f64>,
    pub config: SamplerConfig,
    pub model_hash: u64,
    /// Largest tracked-energy drift seen at any audit point.
    pub max_audit_drift: f64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn num_spins(&self) -> usize {
        self.num_spins
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn config(&self, sample: usize) -> SpinConfiguration {
        let row = self.row(sample);
        let spins = (0..self.num_spins).map(|i| if (row[i / 64] >> (i % 64)) & 1 == 1 { 1 } else { -1 }).collect();
        SpinConfiguration::new(spins).expect("packed spins are valid")
    }

    /// Configuration index of `sample`; only for at most 64 spins.
    pub fn index(&self, sample: usize) -> u64 {
        assert!(self.num_spins <= 64, "index needs at most 64 spins");
        self.packed[sample]
    }

    fn row(&self, sample: usize) -> &[u64] {
        &self.packed[sample * self.words..(sample + 1) * self.words]
    }

    /// Visit counts per configuration index (`2^n` entries).
    pub fn histogram(&self) -> Result<Vec<u64>> {
        if self.num_spins > 24 {
            return Err(Error::TooLarge { states_log2: self.num_spins, cap_log2: 24 });
        }
        let mut counts = vec![0u64; 1 << self.num_spins];
        for &idx in &self.packed {
            counts[idx as usize] += 1;
        }
        Ok(counts)
    }

    pub fn audits_passed(&self) -> bool {
        self.max_audit_drift <= AUDIT_TOLERANCE
    }

    /// Text dump: provenance comments, then one `+`/`-` line per sample.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        let c = &self.config;
        writeln!(w, "# model_hash {:016x}", self.model_hash)?;
        writeln!(
            w,
            "# beta {} thermalization_steps {} samples_per_realization {} realizations {} seed {}",
            c.beta, c.thermalization_steps, c.samples_per_realization, c.realizations, c.seed
        )?;
        for s in 0..self.len() {
            writeln!(w, "{}", self.config(s))?;
        }
        Ok(())
    }
}

#[inline]
fn metropolis_step<R: RngCore>(model: &IsingModel, beta: f64, spins: &mut [i8], i: usize, rng: &mut R) -> Option<f64> {
    let delta = model.flip_delta(spins, i);
    if delta <= 0.0 || rng::unit(rng) < (-beta * delta).exp() {
        spins[i] = -spins[i];
        Some(delta)
    } else {
        None
    }
}

fn pack(spins: &[i8], out: &mut Vec<u64>, words: usize) {
    let start = out.len();
    out.resize(start + words, 0);
    for (i, &s) in spins.iter().enumerate() {
        if s > 0 {
            out[start + i / 64] |= 1 << (i % 64);
        }
    }
}

struct Realization {
    packed: Vec<u64>,
    energies: Vec<f64>,
    drift: f64,
}

fn run_realization(model: &IsingModel, cfg: &SamplerConfig, r: u64, words: usize) -> Realization {
    let n = model.num_spins();
    let mut g = rng::stream(cfg.seed, r);
    let mut spins: Vec<i8> = (0..n).map(|_| rng::spin(&mut g)).collect();
    let mut energy = model.energy_of(&spins);
    let mut drift = 0.0f64;
    let mut since_audit = 0u64;
    let samples = cfg.samples_per_realization as usize;
    let mut packed = Vec::with_capacity(samples * words);
    let mut energies = Vec::with_capacity(samples);
    for _ in 0..samples {
        for _ in 0..cfg.thermalization_steps {
            let i = rng::index_below(&mut g, n);
            if let Some(delta) = metropolis_step(model, cfg.beta, &mut spins, i, &mut g) {
                energy += delta;
            }
            since_audit += 1;
            if since_audit == AUDIT_INTERVAL {
                since_audit = 0;
                let exact = model.energy_of(&spins);
                drift = drift.max((exact - energy).abs());
                energy = exact;
            }
        }
        pack(&spins, &mut packed, words);
        energies.push(model.energy_of(&spins));
    }
    Realization { packed, energies, drift }
}

/// Runs `cfg.realizations` independent chains; realization `r` uses stream `seed ^ r`.
pub fn metropolis_sample(model: &IsingModel, cfg: &SamplerConfig) -> Result<SampleBatch> {
    cfg.validate()?;
    let n = model.num_spins();
    if n == 0 {
        return Err(Error::EmptyModel);
    }
    let words = n.div_ceil(64);
    let parts: Vec<Realization> =
        (0..cfg.realizations).into_par_iter().map(|r| run_realization(model, cfg, r, words)).collect();
    let total = cfg.total_samples() as usize;
    let mut packed = Vec::with_capacity(total * words);
    let mut energies = Vec::with_capacity(total);
    let mut max_audit_drift = 0.0f64;
    for p in parts {
        packed.extend_from_slice(&p.packed);
        energies.extend_from_slice(&p.energies);
        max_audit_drift = max_audit_drift.max(p.drift);
    }
    Ok(SampleBatch {
        num_spins: n,
        words,
        packed,
        energies,
        config: *cfg,
        model_hash: model_hash(model),
        max_audit_drift,
    })
}

/// Default number of proposals for a subset of `len` spins: `max(1000, 10 len)`.
pub fn default_subset_budget(len: usize) -> u64 {
    1000u64.max(10 * len as u64)
}

/// Metropolis chain that only proposes flips of spins in `subset`.
pub fn boltzmann_sample_over_subset(
    model: &IsingModel,
    beta: f64,
    start: &SpinConfiguration,
    subset: &[usize],
    budget: u64,
    seed: u64,
) -> Result<SpinConfiguration> {
    boltzmann_sample_over_subset_with(model, beta, start, subset, budget, &mut rng::seeded(seed))
}

/// As [`boltzmann_sample_over_subset`], drawing from a caller-owned generator.
pub fn boltzmann_sample_over_subset_with<R: RngCore>(
    model: &IsingModel,
    beta: f64,
    start: &SpinConfiguration,
    subset: &[usize],
    budget: u64,
    g: &mut R,
) -> Result<SpinConfiguration> {
    let n = model.num_spins();
    if start.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: start.len() });
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be finite and >= 0, got {beta}")));
    }
    if let Some(&index) = subset.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index, num_spins: n });
    }
    let mut set = subset.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.is_empty() {
        return Ok(start.clone());
    }
    let mut out = start.clone();
    let spins = out.as_mut_slice();
    for _ in 0..budget {
        let i = set[rng::index_below(g, set.len())];
        metropolis_step(model, beta, spins, i, g);
    }
    let outside_fixed = (0..n).all(|i| set.binary_search(&i).is_ok() || spins[i] == start.get(i));
    assert!(outside_fixed, "spins outside the subset changed");
    Ok(out)
}
