//! Annealed-approximation predictions for chain embeddings, and the closed
//! forms of the two-chain ring counterexample.
//!
//! Everything is evaluated in log space (`ln_1p`, `exp_m1`, saddle-point
//! binomial terms) so the formulas stay finite and accurate for problem sizes
//! far beyond enumeration.

use std::f64::consts::PI;

use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::model::{IsingModel, SpinConfiguration};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    pub n_logical: usize,
    pub chain_len: usize,
    pub beta: f64,
    pub j_f: f64,
}

impl TheoryParams {
    pub fn new(n_logical: usize, chain_len: usize, beta: f64, j_f: f64) -> Result<Self> {
        if n_logical == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if chain_len == 0 {
            return Err(Error::InvalidChainLength);
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be finite and >= 0, got {beta}")));
        }
        if !(j_f.is_finite() && j_f < 0.0) {
            return Err(Error::NonFerromagneticChain(j_f));
        }
        Ok(Self { n_logical, chain_len, beta, j_f })
    }

    /// `ln(1 + e^{2βJ_F})`, the log weight of one chain bond.
    fn log_bond(&self) -> f64 {
        (2.0 * self.beta * self.j_f).exp().ln_1p()
    }

    fn bonds(&self) -> f64 {
        ((self.chain_len - 1) * self.n_logical) as f64
    }

    pub fn penalty_weight(&self) -> f64 {
        ((self.chain_len - 1) as f64 * self.log_bond()).exp_m1()
    }
}

/// Probability that a sample lies in the logical subspace, `(1 + e^{2βJ_F})^{-(K-1)N}`.
pub fn p0(params: &TheoryParams) -> f64 {
    if params.beta == 0.0 {
        // exact power of two so infinite-temperature rows compare bit-for-bit
        return 0.5f64.powi(params.bonds() as i32);
    }
    (-params.bonds() * params.log_bond()).exp()
}

/// `1 - P_0`.
pub fn p_out(params: &TheoryParams) -> f64 {
    -(-params.bonds() * params.log_bond()).exp_m1()
}

/// `P_0 ((1 + e^{2βJ_F})^{(K-1)N} - 1)`, the sum over all broken-wall sectors.
pub fn p_out_from_sectors(params: &TheoryParams) -> f64 {
    p0(params) * (params.bonds() * params.log_bond()).exp_m1()
}

/// `(1 + e^{2βJ_F})^{K-1} - 1`.
pub fn penalty_weight(chain_len: usize, beta: f64, j_f: f64) -> Result<f64> {
    Ok(TheoryParams::new(1, chain_len, beta, j_f)?.penalty_weight())
}

/// Probability of exactly `n` broken chains, `C(N,n) P_w^n / (P_w + 1)^N`.
pub fn pn(params: &TheoryParams, n: usize) -> Result<f64> {
    let big_n = params.n_logical;
    if n > big_n {
        return Err(Error::InvalidParameter(format!("n = {n} exceeds N = {big_n}")));
    }
    let pw = params.penalty_weight();
    Ok(binomial_pmf(n as u64, big_n as u64, pw / (1.0 + pw), 1.0 / (1.0 + pw)))
}

/// `ln n! - ln(sqrt(2πn) (n/e)^n)`.
fn stirling_error(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n == 0 {
        return 0.0;
    }
    let x = n as f64;
    if n <= 15 {
        return ln_factorial(n) - (x + 0.5) * x.ln() + x - 0.5 * (2.0 * PI).ln();
    }
    let xx = x * x;
    if n > 500 {
        (S0 - S1 / xx) / x
    } else if n > 80 {
        (S0 - (S1 - S2 / xx) / xx) / x
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / xx) / xx) / xx) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / xx) / xx) / xx) / xx) / x
    }
}

/// Deviance term `x ln(x/m) + m - x`, summed as a series near `x = m`.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let v2 = v * v;
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        for j in 1.. {
            ej *= v2;
            let next = s + ej / (2 * j + 1) as f64;
            if next == s {
                break;
            }
            s = next;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// Binomial probability of `x` successes in `n` trials, `p + q = 1`, in saddle-point form.
fn binomial_pmf(x: u64, n: u64, p: f64, q: f64) -> f64 {
    if p == 0.0 {
        return if x == 0 { 1.0 } else { 0.0 };
    }
    if q == 0.0 {
        return if x == n { 1.0 } else { 0.0 };
    }
    let nf = n as f64;
    if x == 0 {
        let lc = if p < 0.1 { -deviance(nf, nf * q) - nf * p } else { nf * q.ln() };
        return lc.exp();
    }
    if x == n {
        let lc = if q < 0.1 { -deviance(nf, nf * p) - nf * q } else { nf * p.ln() };
        return lc.exp();
    }
    let xf = x as f64;
    let lc = stirling_error(n) - stirling_error(x) - stirling_error(n - x) - deviance(xf, nf * p) - deviance(nf - xf, nf * q);
    let lf = (2.0 * PI).ln() + xf.ln() + (-xf / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// `P_n / P_{n-1} = ((N + 1)/n - 1) P_w` for `1 <= n <= N`.
pub fn pn_ratio(params: &TheoryParams, n: usize) -> Result<f64> {
    if n == 0 || n > params.n_logical {
        return Err(Error::InvalidParameter(format!("ratio needs 1 <= n <= N, got n = {n}")));
    }
    Ok(((params.n_logical + 1) as f64 / n as f64 - 1.0) * params.penalty_weight())
}

/// Most probable number of broken chains, `floor((N + 1) / (1 + 1/P_w))`.
pub fn n_max(params: &TheoryParams) -> usize {
    let pw = params.penalty_weight();
    if pw == 0.0 {
        return 0;
    }
    ((params.n_logical + 1) as f64 * pw / (1.0 + pw)).floor() as usize
}

/// Chain strength scaling `-(1/β) ln[((N+1)/N)^{1/(K-1)} - 1]`.
///
/// With bond weight `e^{2βJ_F}` this gives `P_w = 1/N` at `β/2`, so at `β`
/// itself `P_w` is below `1/N`.
pub fn jf_schedule(n: usize, chain_len: usize, beta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    if chain_len < 2 {
        return Err(Error::InvalidParameter("schedule needs chains of length >= 2".into()));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    let inner = ((1.0 / n as f64).ln_1p() / (chain_len - 1) as f64).exp_m1();
    Ok(-inner.ln() / beta)
}

/// Context configuration of the ring counterexample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingContext {
    /// Spins `2..=N` all down.
    C1,
    /// Spins `2..=N` alternating, spin `N` down and spin `2` up.
    C2,
}

/// Column order of [`ring_energy_table`]: values of `(s_0, s_1)`.
pub const RING_COLUMNS: [(i8, i8); 4] = [(-1, -1), (-1, 1), (1, -1), (1, 1)];

/// Ferromagnetic ring on `N + 1` spins with the split logical spin `(s_0, s_1)`:
/// `H = -|J_F| s_0 s_1 - Σ_{i=1}^{N} s_i s_{i+1}`, `s_{N+1} = s_0`.
pub fn ring_model(n: usize, j_f_mag: f64) -> Result<IsingModel> {
    check_ring(n, j_f_mag)?;
    let mut couplings = vec![(0, 1, -j_f_mag)];
    couplings.extend((1..n).map(|i| (i, i + 1, -1.0)));
    couplings.push((n, 0, -1.0));
    IsingModel::new(n + 1, couplings, vec![0.0; n + 1])
}

fn check_ring(n: usize, j_f_mag: f64) -> Result<()> {
    if n < 3 || n % 2 == 0 {
        return Err(Error::InvalidParameter(format!("ring size N must be odd and >= 3, got {n}")));
    }
    if !(j_f_mag.is_finite() && j_f_mag >= 0.0) {
        return Err(Error::InvalidParameter(format!("|J_F| must be finite and >= 0, got {j_f_mag}")));
    }
    Ok(())
}

/// Full ring configuration for context `ctx` with `(s_0, s_1) = pair`.
pub fn ring_configuration(n: usize, ctx: RingContext, pair: (i8, i8)) -> Result<SpinConfiguration> {
    check_ring(n, 0.0)?;
    let mut spins = vec![pair.0, pair.1];
    spins.extend((2..=n).map(|k| match ctx {
        RingContext::C1 => -1,
        RingContext::C2 => {
            if k % 2 == 0 {
                1
            } else {
                -1
            }
        }
    }));
    SpinConfiguration::new(spins)
}

/// Closed-form energies; row 0 is `C1`, row 1 is `C2`, columns follow [`RING_COLUMNS`].
pub fn ring_energy_table(n: usize, j_f_mag: f64) -> Result<[[f64; 4]; 2]> {
    check_ring(n, j_f_mag)?;
    let nf = n as f64;
    let j = j_f_mag;
    Ok([
        [-nf - j, -nf + 2.0 + j, -nf + 2.0 + j, -nf + 4.0 - j],
        [nf - 2.0 - j, nf - 4.0 + j, nf + j, nf - 2.0 - j],
    ])
}

/// `(r(C1), r(C2)) = (e^{-2β|J_F|} / cosh 2β, e^{-2β|J_F|} cosh 2β)`.
pub fn ring_r_values(beta: f64, j_f_mag: f64) -> (f64, f64) {
    let damp = (-2.0 * beta * j_f_mag).exp();
    let c = (2.0 * beta).cosh();
    (damp / c, damp * c)
}

/// `r(C)` from a row of energies: the single-context estimate of `Z/Z_L - 1`.
pub fn ring_r_from_energies(row: &[f64; 4], beta: f64) -> f64 {
    let w = |e: f64| (-beta * e).exp();
    (w(row[1]) + w(row[2])) / (w(row[0]) + w(row[3]))
}
