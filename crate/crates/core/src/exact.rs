//! Exhaustive-enumeration oracle: Boltzmann distributions, logical-subspace
//! restrictions, broken-chain profiles, KL divergences and temperature fits.

use std::collections::HashMap;

use crate::embedding::ChainEmbedding;
use crate::enumerate::{self, chunking, map_reduce, walk_chunk, EnumerationLimits, ScaledSums};
use crate::error::{Error, Result};
use crate::model::{EnergyLevelHistogram, IsingModel};
use crate::theory;

/// Probability mass over configuration indices (or energy-level indices).
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTable {
    support: Vec<u64>,
    probs: Vec<f64>,
}

/// Tolerance on `Σ probs = 1` accepted by [`DistributionTable::new`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

impl DistributionTable {
    pub fn new(support: Vec<u64>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::SupportMismatch("support and probabilities differ in length".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidParameter(format!("probability {p} is not a non-negative number")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}")));
        }
        let mut sorted = support.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::SupportMismatch("duplicate support entries".into()));
        }
        Ok(Self { support, probs })
    }

    /// Distribution over `0..probs.len()`.
    pub fn dense(probs: Vec<f64>) -> Result<Self> {
        Self::new((0..probs.len() as u64).collect(), probs)
    }

    /// Normalizes non-negative weights into a dense distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidParameter(format!("weights sum to {total}")));
        }
        Self::dense(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(len: usize) -> Result<Self> {
        Self::dense(vec![1.0 / len as f64; len])
    }

    pub fn support(&self) -> &[u64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn is_dense(&self) -> bool {
        self.support.iter().enumerate().all(|(k, &s)| s == k as u64)
    }

    pub fn prob(&self, index: u64) -> f64 {
        if self.is_dense() {
            return self.probs.get(index as usize).copied().unwrap_or(0.0);
        }
        self.support.iter().position(|&s| s == index).map_or(0.0, |k| self.probs[k])
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        let mut merged: HashMap<u64, f64> = HashMap::new();
        for (&s, &p) in self.support.iter().zip(&self.probs) {
            *merged.entry(s).or_default() += p;
        }
        for (&s, &q) in other.support.iter().zip(&other.probs) {
            *merged.entry(s).or_default() -= q;
        }
        let mut diffs: Vec<(u64, f64)> = merged.into_iter().collect();
        diffs.sort_by_key(|&(s, _)| s);
        0.5 * diffs.iter().map(|&(_, d)| d.abs()).sum::<f64>()
    }
}

/// `ln Z(β)` by exhaustive enumeration with log-sum-exp accumulation.
pub fn partition_function(model: &IsingModel, beta: f64, limits: &EnumerationLimits) -> Result<f64> {
    enumerate::log_partition(model, beta, limits)
}

/// Exact Boltzmann probability of every configuration.
pub fn boltzmann_distribution(model: &IsingModel, beta: f64, limits: &EnumerationLimits) -> Result<DistributionTable> {
    let energies = enumerate::all_energies(model, limits)?;
    boltzmann_from_energies(&energies, beta)
}

pub fn boltzmann_from_energies(energies: &[f64], beta: f64) -> Result<DistributionTable> {
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    DistributionTable::from_weights(energies.iter().map(|&e| (-beta * (e - e_min)).exp()).collect())
}

/// Energy-level mode: `P_i = g_i e^{-βE_i} / Z` indexed by level.
pub fn level_distribution(histogram: &EnergyLevelHistogram, beta: f64) -> Result<DistributionTable> {
    DistributionTable::dense(histogram.level_probabilities(beta))
}

/// Exact distributions of broken chains and domain walls.
#[derive(Debug, Clone, PartialEq)]
pub struct BrokenChainProfile {
    /// `p_n[n]`: probability of exactly `n` broken chains, length `N + 1`.
    pub p_n: Vec<f64>,
    /// `p_ell[l]`: probability of exactly `l` domain walls, length `N (K - 1) + 1`.
    pub p_ell: Vec<f64>,
}

impl BrokenChainProfile {
    pub fn p0(&self) -> f64 {
        self.p_n[0]
    }

    /// `P_n / P_{n-1}` for `n = 1..=N`.
    pub fn ratios(&self) -> Vec<f64> {
        self.p_n.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// Chains above this count are not given per-pattern tables (`3^N` entries).
pub const MAX_PATTERN_CHAINS: usize = 12;

/// Digit of a chain in the status pattern: aligned down, aligned up, broken.
pub(crate) const STATUS_BROKEN: u8 = 2;
/// Digit of a chain in the majority pattern: majority down, majority up, tie.
pub(crate) const MAJORITY_TIE: u8 = 2;

/// Embedded-model thermal statistics produced by one enumeration pass.
///
/// Pattern tables are indexed by base-3 codes `Σ d_i 3^i` with one digit per
/// chain. The status table uses digits {0: aligned -1, 1: aligned +1,
/// 2: broken}; the majority table uses {0: majority -1, 1: majority +1, 2: tie}.
#[derive(Debug, Clone)]
pub struct EmbeddedSummary {
    pub beta: f64,
    /// `ln Z` of the embedded model.
    pub log_z: f64,
    pub profile: BrokenChainProfile,
    native_n: usize,
    patterns: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SummaryOptions {
    /// Accumulate per-pattern weights (needed for logical and projected distributions).
    pub patterns: bool,
}

impl EmbeddedSummary {
    pub fn native_n(&self) -> usize {
        self.native_n
    }

    pub fn p0(&self) -> f64 {
        self.profile.p0()
    }

    fn require_patterns(&self) -> Result<&(Vec<f64>, Vec<f64>)> {
        self.patterns
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("summary was computed without pattern tables".into()))
    }

    /// Thermal weight of each chain-status pattern, normalized over all embedded states.
    pub fn status_weights(&self) -> Result<&[f64]> {
        Ok(&self.require_patterns()?.0)
    }

    /// Thermal weight of each majority pattern, normalized over all embedded states.
    pub fn majority_weights(&self) -> Result<&[f64]> {
        Ok(&self.require_patterns()?.1)
    }

    /// Boltzmann distribution of the embedded model conditioned on the logical subspace,
    /// re-indexed by native configuration.
    pub fn logical_distribution(&self) -> Result<DistributionTable> {
        let status = self.status_weights()?;
        let codes = ternary_codes_of_binary(self.native_n);
        DistributionTable::from_weights(codes.iter().map(|&code| status[code as usize]).collect())
    }
}

/// Base-3 code of every native configuration index (bit `i` becomes digit `i`).
pub(crate) fn ternary_codes_of_binary(n: usize) -> Vec<u32> {
    let mut codes = vec![0u32; 1 << n];
    let mut pow = 1u32;
    for i in 0..n {
        for (idx, code) in codes.iter_mut().enumerate() {
            if (idx >> i) & 1 == 1 {
                *code += pow;
            }
        }
        pow *= 3;
    }
    codes
}

#[derive(Clone, Copy)]
struct ChainGeometry {
    k: usize,
    mask: u64,
}

impl ChainGeometry {
    #[inline]
    fn bits(&self, index: u64, chain: usize) -> u64 {
        (index >> (chain * self.k)) & self.mask
    }

    #[inline]
    fn status_digit(&self, bits: u64) -> u8 {
        if bits == 0 {
            0
        } else if bits == self.mask {
            1
        } else {
            STATUS_BROKEN
        }
    }

    #[inline]
    fn majority_digit(&self, bits: u64) -> u8 {
        let up = 2 * bits.count_ones() as usize;
        match up.cmp(&self.k) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => MAJORITY_TIE,
        }
    }

    #[inline]
    fn walls(&self, bits: u64) -> u32 {
        ((bits ^ (bits >> 1)) & (self.mask >> 1)).count_ones()
    }
}

/// Enumerates the embedded model once and accumulates statistics for every `β`.
pub fn summarize_embedded(
    emb: &ChainEmbedding,
    native: &IsingModel,
    betas: &[f64],
    options: SummaryOptions,
    limits: &EnumerationLimits,
) -> Result<Vec<EmbeddedSummary>> {
    let embedded = emb.embedded_model(native)?;
    let n = emb.native_n();
    let k = emb.chain_len();
    let total_spins = embedded.num_spins();
    limits.check_states(total_spins)?;
    if options.patterns && n > MAX_PATTERN_CHAINS {
        return Err(Error::TableTooLarge { chains: n, max: MAX_PATTERN_CHAINS });
    }
    if betas.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
        return Err(Error::InvalidParameter("inverse temperatures must be finite and non-negative".into()));
    }
    if betas.is_empty() {
        return Ok(Vec::new());
    }

    let geom = ChainGeometry { k, mask: if k == 64 { u64::MAX } else { (1u64 << k) - 1 } };
    let pow3: Vec<i64> = (0..n).map(|i| 3i64.pow(i as u32)).collect();
    let n_walls = n * (k - 1) + 1;
    let n_patterns = if options.patterns { 3usize.pow(n as u32) } else { 0 };
    let off_broken = 1;
    let off_walls = off_broken + n + 1;
    let off_status = off_walls + n_walls;
    let off_major = off_status + n_patterns;
    let width = off_major + n_patterns;

    let (chunks, bits) = chunking(total_spins);
    let map = |chunk: u64| -> Vec<ScaledSums> {
        let len = 1usize << bits;
        let mut energy = Vec::with_capacity(len);
        let mut status_code = Vec::with_capacity(if options.patterns { len } else { 0 });
        let mut major_code = Vec::with_capacity(if options.patterns { len } else { 0 });
        let mut broken = Vec::with_capacity(len);
        let mut walls = Vec::with_capacity(len);

        let mut st = vec![0u8; n];
        let mut mj = vec![0u8; n];
        let mut wl = vec![0u32; n];
        let (mut st_code, mut mj_code, mut n_broken, mut n_walls_now) = (0i64, 0i64, 0u32, 0u32);

        walk_chunk(&embedded, bits, chunk, |index, e, flipped| {
            match flipped {
                None => {
                    st_code = 0;
                    mj_code = 0;
                    n_broken = 0;
                    n_walls_now = 0;
                    for c in 0..n {
                        let b = geom.bits(index, c);
                        st[c] = geom.status_digit(b);
                        mj[c] = geom.majority_digit(b);
                        wl[c] = geom.walls(b);
                        st_code += i64::from(st[c]) * pow3[c];
                        mj_code += i64::from(mj[c]) * pow3[c];
                        n_broken += u32::from(st[c] == STATUS_BROKEN);
                        n_walls_now += wl[c];
                    }
                }
                Some(v) => {
                    let c = v / k;
                    let b = geom.bits(index, c);
                    let (s, m, w) = (geom.status_digit(b), geom.majority_digit(b), geom.walls(b));
                    st_code += (i64::from(s) - i64::from(st[c])) * pow3[c];
                    mj_code += (i64::from(m) - i64::from(mj[c])) * pow3[c];
                    n_broken = n_broken + u32::from(s == STATUS_BROKEN) - u32::from(st[c] == STATUS_BROKEN);
                    n_walls_now = n_walls_now + w - wl[c];
                    st[c] = s;
                    mj[c] = m;
                    wl[c] = w;
                }
            }
            energy.push(e);
            if options.patterns {
                status_code.push(st_code as u32);
                major_code.push(mj_code as u32);
            }
            broken.push(n_broken as u16);
            walls.push(n_walls_now as u16);
        });

        let e_min = energy.iter().copied().fold(f64::INFINITY, f64::min);
        betas
            .iter()
            .map(|&beta| {
                let mut sums = vec![0.0; width];
                for t in 0..energy.len() {
                    let w = (-beta * (energy[t] - e_min)).exp();
                    sums[0] += w;
                    sums[off_broken + broken[t] as usize] += w;
                    sums[off_walls + walls[t] as usize] += w;
                    if options.patterns {
                        sums[off_status + status_code[t] as usize] += w;
                        sums[off_major + major_code[t] as usize] += w;
                    }
                }
                ScaledSums { shift: -beta * e_min, sums }
            })
            .collect()
    };
    let merge = |a: Vec<ScaledSums>, b: Vec<ScaledSums>| -> Vec<ScaledSums> {
        a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect()
    };
    let totals = map_reduce(chunks, map, merge);

    Ok(betas
        .iter()
        .zip(totals)
        .map(|(&beta, t)| {
            let z = t.sums[0];
            let norm = |range: std::ops::Range<usize>| t.sums[range].iter().map(|w| w / z).collect::<Vec<f64>>();
            EmbeddedSummary {
                beta,
                log_z: t.shift + z.ln(),
                profile: BrokenChainProfile {
                    p_n: norm(off_broken..off_walls),
                    p_ell: norm(off_walls..off_status),
                },
                native_n: n,
                patterns: options
                    .patterns
                    .then(|| (norm(off_status..off_major), norm(off_major..width))),
            }
        })
        .collect())
}

fn single_summary(
    emb: &ChainEmbedding,
    native: &IsingModel,
    beta: f64,
    options: SummaryOptions,
    limits: &EnumerationLimits,
) -> Result<EmbeddedSummary> {
    Ok(summarize_embedded(emb, native, &[beta], options, limits)?.remove(0))
}

/// Embedded Boltzmann distribution restricted to the logical subspace, indexed by native configuration.
pub fn logical_subspace_distribution(
    emb: &ChainEmbedding,
    native: &IsingModel,
    beta: f64,
    limits: &EnumerationLimits,
) -> Result<DistributionTable> {
    single_summary(emb, native, beta, SummaryOptions { patterns: true }, limits)?.logical_distribution()
}

/// Exact probabilities of `n` broken chains and `l` domain walls.
pub fn broken_chain_profile(
    emb: &ChainEmbedding,
    native: &IsingModel,
    beta: f64,
    limits: &EnumerationLimits,
) -> Result<BrokenChainProfile> {
    Ok(single_summary(emb, native, beta, SummaryOptions::default(), limits)?.profile)
}

/// `KL(p ‖ q) = Σ p ln(p/q)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &DistributionTable, q: &DistributionTable) -> Result<f64> {
    let mut total = 0.0;
    if p.support == q.support {
        for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
            total += kl_term(pi, qi)?;
        }
    } else {
        let lookup: HashMap<u64, f64> = q.support.iter().copied().zip(q.probs.iter().copied()).collect();
        for (s, &pi) in p.support.iter().zip(&p.probs) {
            if pi == 0.0 {
                continue;
            }
            let qi = lookup
                .get(s)
                .copied()
                .ok_or_else(|| Error::SupportMismatch(format!("{s} is outside the support of q")))?;
            total += kl_term(pi, qi)?;
        }
    }
    Ok(total.max(0.0))
}

#[inline]
fn kl_term(p: f64, q: f64) -> Result<f64> {
    if p == 0.0 {
        Ok(0.0)
    } else if q > 0.0 {
        Ok(p * (p / q).ln())
    } else {
        Err(Error::SupportMismatch("q vanishes where p is positive".into()))
    }
}

/// Least-squares line through `(E, ln P)`; the inverse temperature is minus the slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureFit {
    pub beta: f64,
    pub intercept: f64,
}

pub fn fit_inverse_temperature(points: &[(f64, f64)]) -> Result<TemperatureFit> {
    if let Some(&(_, p)) = points.iter().find(|&&(_, p)| !(p > 0.0 && p.is_finite())) {
        return Err(Error::InvalidParameter(format!("probability {p} must be positive")));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, p) in points {
        let dx = x - mean_x;
        sxx += dx * dx;
        sxy += dx * (p.ln() - mean_y);
    }
    let distinct = points.iter().any(|p| p.0 != points[0].0);
    if points.len() < 2 || !distinct || sxx <= 0.0 {
        return Err(Error::SingularFit("need at least two distinct energies".into()));
    }
    let slope = sxy / sxx;
    Ok(TemperatureFit { beta: -slope, intercept: mean_y - slope * mean_x })
}

/// Per-configuration fit of a distribution over native configurations.
pub fn fit_distribution_temperature(dist: &DistributionTable, energies: &[f64]) -> Result<TemperatureFit> {
    let points: Vec<(f64, f64)> = dist
        .support()
        .iter()
        .zip(dist.probs())
        .map(|(&s, &p)| (energies[s as usize], p))
        .collect();
    fit_inverse_temperature(&points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalBeta {
    pub beta: f64,
    /// `KL(p ‖ Boltzmann(β_opt))`.
    pub kl: f64,
}

/// Default search interval for [`optimal_beta`].
pub const BETA_SEARCH: (f64, f64) = (1e-3, 5.0);
const BETA_TOLERANCE: f64 = 1e-6;
const COARSE_POINTS: usize = 64;

/// `argmin_β KL(p ‖ Boltzmann(model, β))` by a coarse grid followed by golden-section search.
pub fn optimal_beta(
    p: &DistributionTable,
    model: &IsingModel,
    search: (f64, f64),
    limits: &EnumerationLimits,
) -> Result<OptimalBeta> {
    let energies = enumerate::all_energies(model, limits)?;
    optimal_beta_from_energies(p, &energies, search)
}

pub fn optimal_beta_from_energies(p: &DistributionTable, energies: &[f64], search: (f64, f64)) -> Result<OptimalBeta> {
    let (lo, hi) = search;
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo) {
        return Err(Error::InvalidParameter(format!("bad search interval [{lo}, {hi}]")));
    }
    if p.support().iter().any(|&s| s as usize >= energies.len()) {
        return Err(Error::SupportMismatch("distribution support exceeds model state space".into()));
    }
    let mean_energy: f64 = p.support().iter().zip(p.probs()).map(|(&s, &q)| q * energies[s as usize]).sum();
    let neg_entropy: f64 = p.probs().iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum();
    let mut scratch = vec![0.0; energies.len()];
    let mut kl = |beta: f64| -> f64 {
        for (s, &e) in scratch.iter_mut().zip(energies) {
            *s = -beta * e;
        }
        neg_entropy + beta * mean_energy + enumerate::log_sum_exp(&scratch)
    };

    let step = (hi - lo) / (COARSE_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..COARSE_POINTS).map(|i| lo + step * i as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&b| kl(b)).collect();
    let best = (0..COARSE_POINTS).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(COARSE_POINTS - 1)];

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (kl(c), kl(d));
    while b - a > BETA_TOLERANCE {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = kl(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = kl(d);
        }
    }
    let mut beta = 0.5 * (a + b);
    let mut best_kl = kl(beta);
    for edge in [lo, hi] {
        let v = kl(edge);
        if v < best_kl {
            beta = edge;
            best_kl = v;
        }
    }
    Ok(OptimalBeta { beta, kl: best_kl.max(0.0) })
}

/// `Z / Z_L - 1` for the ferromagnetic ring on `N + 1` spins, where the logical
/// subspace is `s_0 = s_1`. Computed by enumerating all `2^{N+1}` states.
pub fn exact_ring_partition_ratio(n: usize, j_f_mag: f64, beta: f64) -> Result<f64> {
    let ring = theory::ring_model(n, j_f_mag)?;
    let energies = enumerate::all_energies(&ring, &EnumerationLimits::default())?;
    let (mut logical, mut broken) = (Vec::new(), Vec::new());
    for (idx, &e) in energies.iter().enumerate() {
        let aligned = (idx & 1) == ((idx >> 1) & 1);
        if aligned {
            logical.push(-beta * e);
        } else {
            broken.push(-beta * e);
        }
    }
    Ok((enumerate::log_sum_exp(&broken) - enumerate::log_sum_exp(&logical)).exp())
}
