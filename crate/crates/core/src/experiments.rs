//! Reproducible experiment pipelines writing CSV tables.
//!
//! Every experiment is a pure function of its configuration. Instance `index`
//! of native size `N` uses seed `master + ((N << 32) | index)`, and its random
//! embedding uses that seed XOR [`EMBEDDING_SALT`]. Rows are written in
//! `(N, index)` order whatever the thread count.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{EmbeddingKind, Experiment, ExperimentConfig};
use crate::embedding::{build_embedding, ChainEmbedding, EmbeddingMode};
use crate::enumerate::{all_energies, EnumerationLimits};
use crate::error::{Error, Result};
use crate::exact::{
    boltzmann_from_energies, exact_ring_partition_ratio, fit_distribution_temperature, fit_inverse_temperature,
    kl_divergence, optimal_beta_from_energies, summarize_embedded, DistributionTable, EmbeddedSummary,
    SummaryOptions, TemperatureFit, BETA_SEARCH,
};
use crate::instance::{generate_instance, model_hash, parse_instance, to_instance_text, Topology};
use crate::model::{EnergyLevelHistogram, IsingModel, SpinConfiguration, LEVEL_TOLERANCE};
use crate::projection::{majority_vote, projected_from_summary, rrs, ProjectionMethod, RrsMode};
use crate::rng;
use crate::sampler::{metropolis_sample, SampleBatch, SamplerConfig};
use crate::theory::{self, RingContext, TheoryParams, RING_COLUMNS};

pub const EMBEDDING_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
pub const PROJECTION_SALT: u64 = 0xc2b2_ae3d_27d4_eb4f;
/// Numerical tolerance of the ring certificate.
pub const RING_TOLERANCE: f64 = 1e-5;

pub fn instance_seed(master: u64, n: usize, index: usize) -> u64 {
    master.wrapping_add(((n as u64) << 32) | index as u64)
}

pub fn embedding_seed(instance_seed: u64) -> u64 {
    instance_seed ^ EMBEDDING_SALT
}

/// A native instance and its chain embedding.
#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub n: usize,
    pub index: usize,
    pub seed: u64,
    pub native: IsingModel,
    pub emb: ChainEmbedding,
}

pub fn ensemble_member(
    master: u64,
    n: usize,
    index: usize,
    chain_len: usize,
    j_f: f64,
    kind: EmbeddingKind,
) -> Result<EnsembleMember> {
    let seed = instance_seed(master, n, index);
    let native = generate_instance(n, Topology::FullyConnected, seed)?;
    let mode = match kind {
        EmbeddingKind::Random => EmbeddingMode::Random { seed: embedding_seed(seed) },
        EmbeddingKind::Deterministic => EmbeddingMode::Deterministic,
    };
    let (emb, _) = build_embedding(&native, chain_len, j_f, mode)?;
    Ok(EnsembleMember { n, index, seed, native, emb })
}

impl EnsembleMember {
    /// Same instance and chain positions with a different chain coupling.
    pub fn with_j_f(&self, j_f: f64) -> Result<Self> {
        let emb = ChainEmbedding::from_parts(
            self.emb.native_n(),
            self.emb.chain_len(),
            j_f,
            self.emb.mode(),
            self.emb.edges().to_vec(),
        )?;
        Ok(Self { emb, ..self.clone() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub audits: Vec<Audit>,
    /// Human-readable result lines.
    pub report: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.audits.iter().all(|a| a.passed)
    }

    fn audit(&mut self, name: &str, passed: bool, detail: String) {
        self.audits.push(Audit { name: name.into(), passed, detail });
    }
}

/// Fixed 17-significant-digit float formatting.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl Table {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        let mut writer = csv::Writer::from_path(&path)?;
        writer.write_record(header)?;
        Ok(Self { path, writer })
    }

    fn row(&mut self, cells: &[String]) -> Result<()> {
        Ok(self.writer.write_record(cells)?)
    }

    fn finish(mut self, out: &mut Outcome) -> Result<()> {
        self.writer.flush()?;
        out.files.push(self.path);
        Ok(())
    }
}

macro_rules! cells {
    ($($x:expr),* $(,)?) => { vec![$(Cell::from($x).0),*] };
}

struct Cell(String);

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell(fmt_float(x))
    }
}

macro_rules! int_cell {
    ($($t:ty),*) => {$(impl From<$t> for Cell { fn from(x: $t) -> Self { Cell(x.to_string()) } })*};
}
int_cell!(usize, u64, u32, i64, bool);

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell(x)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean.
fn stderr(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64 / v.len() as f64).sqrt()
}

/// Runs the experiment named in `cfg`.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let limits = EnumerationLimits::default();
    match cfg.experiment {
        Experiment::Gen => run_gen(cfg),
        Experiment::TheoryCurves => run_theory_curves(cfg),
        Experiment::ExactPl => run_exact_pl(cfg, &limits),
        Experiment::RatioProfile => run_ratio_profile(cfg, &limits),
        Experiment::ProjectionExact => run_projection_exact(cfg, &limits),
        Experiment::McProjection => run_mc_projection(cfg, &limits),
        Experiment::Counterexample => run_counterexample(cfg),
    }
}

fn members(cfg: &ExperimentConfig, chain_len: usize, j_f: f64, sizes: &[usize]) -> Result<Vec<EnsembleMember>> {
    let keys: Vec<(usize, usize)> = sizes.iter().flat_map(|&n| (0..cfg.instances).map(move |i| (n, i))).collect();
    keys.par_iter()
        .map(|&(n, i)| ensemble_member(cfg.seed, n, i, chain_len, j_f, cfg.embedding))
        .collect()
}

fn n_range(cfg: &ExperimentConfig) -> Vec<usize> {
    (cfg.n_min..=cfg.n_max).collect()
}

fn run_gen(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let inst_dir = cfg.out_dir.join("instances");
    fs::create_dir_all(&inst_dir)?;
    let mut table = Table::create(
        &cfg.out_dir,
        "gen_instances.csv",
        &["n", "index", "instance_seed", "model_hash", "chain_len", "j_f", "instance_file", "embedding_file"],
    )?;
    let mut roundtrip = true;
    for m in members(cfg, cfg.chain_len, cfg.j_f[0], &n_range(cfg))? {
        let stem = format!("n{:02}_i{:04}", m.n, m.index);
        let text = to_instance_text(&m.native);
        roundtrip &= parse_instance(&text)? == m.native;
        let descriptor = m.emb.to_descriptor();
        roundtrip &= ChainEmbedding::parse_descriptor(&descriptor)? == m.emb;
        fs::write(inst_dir.join(format!("{stem}.txt")), text)?;
        fs::write(inst_dir.join(format!("{stem}.emb")), descriptor)?;
        table.row(&cells![
            m.n,
            m.index,
            m.seed,
            format!("{:016x}", model_hash(&m.native)),
            cfg.chain_len,
            cfg.j_f[0],
            format!("instances/{stem}.txt"),
            format!("instances/{stem}.emb"),
        ])?;
    }
    table.finish(&mut out)?;
    out.audit("instance and embedding text round-trip", roundtrip, String::new());
    out.report.push(format!("wrote {} instances", cfg.instances * (cfg.n_max - cfg.n_min + 1)));
    Ok(out)
}

/// Log-spaced sizes `{1, 2, 5} × 10^d` up to `max`.
pub fn schedule_sizes(max: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut decade = 1usize;
    while decade <= max {
        for m in [1, 2, 5] {
            if m * decade <= max {
                v.push(m * decade);
            }
        }
        decade = match decade.checked_mul(10) {
            Some(d) => d,
            None => break,
        };
    }
    v
}

fn run_theory_curves(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut worst_norm = 0.0f64;

    let mut p0_table = Table::create(
        &cfg.out_dir,
        "theory_p0.csv",
        &["beta", "chain_len", "j_f", "n", "p0", "p_out", "p_w", "n_max"],
    )?;
    for &beta in &cfg.betas {
        for &j_f in &cfg.j_f {
            for n in cfg.n_min..=cfg.n_max {
                let p = TheoryParams::new(n, cfg.chain_len, beta, j_f)?;
                let total: f64 = (0..=n).map(|k| theory::pn(&p, k)).sum::<Result<f64>>()?;
                worst_norm = worst_norm.max((total - 1.0).abs());
                p0_table.row(&cells![
                    beta,
                    cfg.chain_len,
                    j_f,
                    n,
                    theory::p0(&p),
                    theory::p_out(&p),
                    p.penalty_weight(),
                    theory::n_max(&p),
                ])?;
            }
        }
    }
    p0_table.finish(&mut out)?;

    let mut ratio_table = Table::create(
        &cfg.out_dir,
        "theory_ratio.csv",
        &["set_n", "chain_len", "beta", "j_f", "n", "n_over_n_plus_1", "x", "ratio", "p_w"],
    )?;
    for set in &cfg.ratio_sets {
        for &j_f in &cfg.j_f {
            let p = TheoryParams::new(set.n, set.chain_len, set.beta, j_f)?;
            for n in 1..=set.n {
                ratio_table.row(&cells![
                    set.n,
                    set.chain_len,
                    set.beta,
                    j_f,
                    n,
                    n as f64 / (set.n + 1) as f64,
                    (set.n + 1) as f64 / n as f64 - 1.0,
                    theory::pn_ratio(&p, n)?,
                    p.penalty_weight(),
                ])?;
            }
        }
    }
    ratio_table.finish(&mut out)?;

    let mut sched = Table::create(&cfg.out_dir, "theory_schedule.csv", &["chain_len", "beta", "n", "j_f_magnitude"])?;
    for &k in &cfg.schedule_chain_lens {
        for &beta in cfg.betas.iter().filter(|&&b| b > 0.0) {
            for n in schedule_sizes(cfg.schedule_n_max) {
                sched.row(&cells![k, beta, n, theory::jf_schedule(n, k, beta)?])?;
            }
        }
    }
    sched.finish(&mut out)?;

    out.audit("broken-count distribution sums to one", worst_norm <= 1e-12, format!("max deviation {worst_norm:e}"));
    Ok(out)
}

/// One `(instance, β)` row of the exact logical-subspace probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPlRow {
    pub n: usize,
    pub index: usize,
    pub seed: u64,
    pub j_f: f64,
    pub beta: f64,
    pub p0_exact: f64,
    pub p0_theory: f64,
    pub norm_error: f64,
}

pub fn exact_pl_rows(
    member: &EnsembleMember,
    betas: &[f64],
    limits: &EnumerationLimits,
) -> Result<Vec<ExactPlRow>> {
    let summaries = summarize_embedded(&member.emb, &member.native, betas, SummaryOptions::default(), limits)?;
    summaries
        .iter()
        .map(|s| {
            let p = TheoryParams::new(member.n, member.emb.chain_len(), s.beta, member.emb.j_f())?;
            Ok(ExactPlRow {
                n: member.n,
                index: member.index,
                seed: member.seed,
                j_f: member.emb.j_f(),
                beta: s.beta,
                p0_exact: s.p0(),
                p0_theory: theory::p0(&p),
                norm_error: (s.profile.p_n.iter().sum::<f64>() - 1.0).abs(),
            })
        })
        .collect()
}

fn run_exact_pl(cfg: &ExperimentConfig, limits: &EnumerationLimits) -> Result<Outcome> {
    let mut out = Outcome::default();
    let betas: Vec<f64> = cfg.betas.iter().chain(&cfg.cold_betas).copied().collect();
    let mut rows = Vec::new();
    for &j_f in &cfg.j_f {
        let ms = members(cfg, cfg.chain_len, j_f, &n_range(cfg))?;
        let per: Vec<Vec<ExactPlRow>> = ms.par_iter().map(|m| exact_pl_rows(m, &betas, limits)).collect::<Result<_>>()?;
        rows.extend(per.into_iter().flatten());
    }
    let regime = |b: f64| if cfg.betas.contains(&b) { "standard" } else { "cold" };
    let mut table = Table::create(
        &cfg.out_dir,
        "exact_pl.csv",
        &["n", "index", "instance_seed", "chain_len", "j_f", "beta", "regime", "p0_exact", "p0_theory"],
    )?;
    for r in &rows {
        table.row(&cells![r.n, r.index, r.seed, cfg.chain_len, r.j_f, r.beta, regime(r.beta), r.p0_exact, r.p0_theory])?;
    }
    table.finish(&mut out)?;

    let mut means = Table::create(
        &cfg.out_dir,
        "exact_pl_mean.csv",
        &["n", "chain_len", "j_f", "beta", "regime", "mean_p0", "stderr_p0", "p0_theory", "relative_error", "theory_exceeds_fraction"],
    )?;
    let mut infinite_temp_exact = true;
    for &j_f in &cfg.j_f {
        for &beta in &betas {
            for n in cfg.n_min..=cfg.n_max {
                let sel: Vec<&ExactPlRow> = rows.iter().filter(|r| r.n == n && r.beta == beta && r.j_f == j_f).collect();
                let vals: Vec<f64> = sel.iter().map(|r| r.p0_exact).collect();
                let theory_p0 = sel[0].p0_theory;
                let m = mean(&vals);
                let above = sel.iter().filter(|r| r.p0_theory >= r.p0_exact).count() as f64 / sel.len() as f64;
                if beta == 0.0 {
                    infinite_temp_exact &= sel.iter().all(|r| r.p0_exact == r.p0_theory);
                }
                means.row(&cells![
                    n,
                    cfg.chain_len,
                    j_f,
                    beta,
                    regime(beta),
                    m,
                    stderr(&vals),
                    theory_p0,
                    (m - theory_p0).abs() / theory_p0,
                    above,
                ])?;
            }
        }
    }
    means.finish(&mut out)?;
    let worst = rows.iter().map(|r| r.norm_error).fold(0.0, f64::max);
    out.audit("broken-count distribution sums to one", worst <= 1e-12, format!("max deviation {worst:e}"));
    out.audit("infinite-temperature rows equal theory", infinite_temp_exact, String::new());
    out.report.push(format!("{} instance rows", rows.len()));
    Ok(out)
}

/// Ordinary least squares `y = a + b x`; returns `(b, a)`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::SingularFit("need at least two points".into()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::SingularFit("abscissae are identical".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Exact `P_n / P_{n-1}` for `n = 1..=N` of one instance at `beta`, and `|Σ P_n - 1|`.
pub fn exact_ratios(member: &EnsembleMember, beta: f64, limits: &EnumerationLimits) -> Result<(Vec<f64>, f64)> {
    let s = summarize_embedded(&member.emb, &member.native, &[beta], SummaryOptions::default(), limits)?;
    let p_n = &s[0].profile.p_n;
    Ok((s[0].profile.ratios(), (p_n.iter().sum::<f64>() - 1.0).abs()))
}

fn run_ratio_profile(cfg: &ExperimentConfig, limits: &EnumerationLimits) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut worst_norm = 0.0f64;
    let mut rows_t = Table::create(
        &cfg.out_dir,
        "ratio_profile.csv",
        &["set_n", "chain_len", "beta", "j_f", "index", "instance_seed", "n", "n_over_n_plus_1", "x", "ratio_exact", "ratio_theory"],
    )?;
    let mut mean_t = Table::create(
        &cfg.out_dir,
        "ratio_profile_mean.csv",
        &["set_n", "chain_len", "beta", "j_f", "n", "x", "mean_ratio", "stderr_ratio", "ratio_theory"],
    )?;
    let mut fit_t = Table::create(
        &cfg.out_dir,
        "ratio_profile_fit.csv",
        &["set_n", "chain_len", "beta", "j_f", "slope", "intercept", "p_w", "relative_error"],
    )?;
    for set in &cfg.ratio_sets {
        for &j_f in &cfg.j_f {
            let ms = members(cfg, set.chain_len, j_f, &[set.n])?;
            let (ratios, norms): (Vec<Vec<f64>>, Vec<f64>) =
                ms.par_iter().map(|m| exact_ratios(m, set.beta, limits)).collect::<Result<Vec<_>>>()?.into_iter().unzip();
            worst_norm = norms.iter().copied().fold(worst_norm, f64::max);
            let p = TheoryParams::new(set.n, set.chain_len, set.beta, j_f)?;
            let x = |n: usize| (set.n + 1) as f64 / n as f64 - 1.0;
            for (m, r) in ms.iter().zip(&ratios) {
                for n in 1..=set.n {
                    rows_t.row(&cells![
                        set.n,
                        set.chain_len,
                        set.beta,
                        j_f,
                        m.index,
                        m.seed,
                        n,
                        n as f64 / (set.n + 1) as f64,
                        x(n),
                        r[n - 1],
                        theory::pn_ratio(&p, n)?,
                    ])?;
                }
            }
            let mut points = Vec::new();
            for n in 1..=set.n {
                let vals: Vec<f64> = ratios.iter().map(|r| r[n - 1]).collect();
                let mr = mean(&vals);
                points.push((x(n), mr));
                mean_t.row(&cells![set.n, set.chain_len, set.beta, j_f, n, x(n), mr, stderr(&vals), theory::pn_ratio(&p, n)?])?;
            }
            let (slope, intercept) = linear_fit(&points)?;
            let pw = p.penalty_weight();
            let rel = (slope - pw).abs() / pw;
            fit_t.row(&cells![set.n, set.chain_len, set.beta, j_f, slope, intercept, pw, rel])?;
            out.report.push(format!(
                "N={} K={} beta={} J_F={}: slope {slope:.5} vs P_w {pw:.5} ({:.1}%)",
                set.n,
                set.chain_len,
                set.beta,
                j_f,
                100.0 * rel
            ));
        }
    }
    rows_t.finish(&mut out)?;
    mean_t.finish(&mut out)?;
    fit_t.finish(&mut out)?;
    out.audit("broken-count distribution sums to one", worst_norm <= 1e-12, format!("max deviation {worst_norm:e}"));
    Ok(out)
}

/// Exact projection metrics of one instance at one `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRecord {
    pub n: usize,
    pub index: usize,
    pub seed: u64,
    pub j_f: f64,
    pub beta: f64,
    pub p0: f64,
    /// Total-variation distance between the logical-subspace restriction and the ideal distribution.
    pub logical_tv: f64,
    pub kl_mv: f64,
    pub kl_rrs: f64,
    pub fit_mv: f64,
    pub fit_rrs: f64,
    pub opt_mv: f64,
    pub opt_rrs: f64,
    pub norm_error: f64,
}

/// Ideal, majority-vote and restricted-resampling distributions of one instance.
pub struct ProjectedDistributions {
    pub energies: Vec<f64>,
    pub ideal: DistributionTable,
    pub logical: DistributionTable,
    pub mv: DistributionTable,
    pub rrs: DistributionTable,
}

pub fn projected_distributions(summary: &EmbeddedSummary, native: &IsingModel, limits: &EnumerationLimits) -> Result<ProjectedDistributions> {
    let energies = all_energies(native, limits)?;
    Ok(ProjectedDistributions {
        ideal: boltzmann_from_energies(&energies, summary.beta)?,
        logical: summary.logical_distribution()?,
        mv: projected_from_summary(summary, &energies, ProjectionMethod::MajorityVote)?,
        rrs: projected_from_summary(summary, &energies, ProjectionMethod::Rrs(RrsMode::Exact))?,
        energies,
    })
}

pub fn projection_record(
    member: &EnsembleMember,
    summary: &EmbeddedSummary,
    limits: &EnumerationLimits,
) -> Result<ProjectionRecord> {
    let d = projected_distributions(summary, &member.native, limits)?;
    let norm_error = [&d.mv, &d.rrs].iter().map(|t| (t.probs().iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    Ok(ProjectionRecord {
        n: member.n,
        index: member.index,
        seed: member.seed,
        j_f: member.emb.j_f(),
        beta: summary.beta,
        p0: summary.p0(),
        logical_tv: d.logical.total_variation(&d.ideal),
        kl_mv: kl_divergence(&d.mv, &d.ideal)?,
        kl_rrs: kl_divergence(&d.rrs, &d.ideal)?,
        fit_mv: fit_distribution_temperature(&d.mv, &d.energies)?.beta,
        fit_rrs: fit_distribution_temperature(&d.rrs, &d.energies)?.beta,
        opt_mv: optimal_beta_from_energies(&d.mv, &d.energies, BETA_SEARCH)?.beta,
        opt_rrs: optimal_beta_from_energies(&d.rrs, &d.energies, BETA_SEARCH)?.beta,
        norm_error,
    })
}

fn pattern_summaries(member: &EnsembleMember, betas: &[f64], limits: &EnumerationLimits) -> Result<Vec<EmbeddedSummary>> {
    summarize_embedded(&member.emb, &member.native, betas, SummaryOptions { patterns: true }, limits)
}

fn run_projection_exact(cfg: &ExperimentConfig, limits: &EnumerationLimits) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut worst_norm = 0.0f64;
    let mut worst_tv = 0.0f64;

    let mut scatter = Table::create(
        &cfg.out_dir,
        "projection_scatter.csv",
        &["instance_seed", "j_f", "beta", "config", "energy", "p_ideal", "p_logical", "p_mv", "p_rrs"],
    )?;
    let mut fits = Table::create(
        &cfg.out_dir,
        "projection_scatter_fits.csv",
        &["instance_seed", "j_f", "beta", "method", "beta_fit", "intercept", "kl_to_ideal", "beta_opt", "kl_at_opt"],
    )?;
    let base = ensemble_member(cfg.seed, cfg.scatter_n, 0, cfg.chain_len, cfg.scatter_j_f[0], cfg.embedding)?;
    for &j_f in &cfg.scatter_j_f {
        let member = base.with_j_f(j_f)?;
        for s in pattern_summaries(&member, &cfg.betas, limits)? {
            let d = projected_distributions(&s, &member.native, limits)?;
            for (c, &e) in d.energies.iter().enumerate() {
                let c = c as u64;
                scatter.row(&cells![member.seed, j_f, s.beta, c, e, d.ideal.prob(c), d.logical.prob(c), d.mv.prob(c), d.rrs.prob(c)])?;
            }
            for (name, dist) in [("ideal", &d.ideal), ("logical", &d.logical), ("mv", &d.mv), ("rrs", &d.rrs)] {
                let fit = fit_distribution_temperature(dist, &d.energies)?;
                let opt = optimal_beta_from_energies(dist, &d.energies, BETA_SEARCH)?;
                fits.row(&cells![
                    member.seed,
                    j_f,
                    s.beta,
                    name,
                    fit.beta,
                    fit.intercept,
                    kl_divergence(dist, &d.ideal)?,
                    opt.beta,
                    opt.kl
                ])?;
                if name == "mv" || name == "rrs" {
                    out.report.push(format!("scatter J_F={j_f} beta={}: {name} fitted beta {:.4}", s.beta, fit.beta));
                }
            }
            worst_tv = worst_tv.max(d.logical.total_variation(&d.ideal));
        }
    }
    scatter.finish(&mut out)?;
    fits.finish(&mut out)?;

    let mut records = Vec::new();
    for &j_f in &cfg.j_f {
        let ms = members(cfg, cfg.chain_len, j_f, &n_range(cfg))?;
        let per: Vec<Vec<ProjectionRecord>> = ms
            .par_iter()
            .map(|m| pattern_summaries(m, &cfg.betas, limits)?.iter().map(|s| projection_record(m, s, limits)).collect())
            .collect::<Result<_>>()?;
        records.extend(per.into_iter().flatten());
    }
    let mut rows = Table::create(
        &cfg.out_dir,
        "projection_ensemble.csv",
        &["n", "index", "instance_seed", "j_f", "beta", "p0", "kl_mv", "kl_rrs", "beta_fit_mv", "beta_fit_rrs", "beta_opt_mv", "beta_opt_rrs"],
    )?;
    for r in &records {
        worst_norm = worst_norm.max(r.norm_error);
        worst_tv = worst_tv.max(r.logical_tv);
        rows.row(&cells![r.n, r.index, r.seed, r.j_f, r.beta, r.p0, r.kl_mv, r.kl_rrs, r.fit_mv, r.fit_rrs, r.opt_mv, r.opt_rrs])?;
    }
    rows.finish(&mut out)?;

    let mut means = Table::create(
        &cfg.out_dir,
        "projection_ensemble_mean.csv",
        &[
            "n", "j_f", "beta", "instances", "mean_kl_mv", "mean_kl_rrs", "mean_beta_fit_mv", "mean_beta_fit_rrs",
            "mean_beta_opt_mv", "mean_beta_opt_rrs", "rrs_better_fraction",
        ],
    )?;
    for &j_f in &cfg.j_f {
        for &beta in &cfg.betas {
            for n in cfg.n_min..=cfg.n_max {
                let sel: Vec<&ProjectionRecord> = records.iter().filter(|r| r.n == n && r.j_f == j_f && r.beta == beta).collect();
                let avg = |f: fn(&ProjectionRecord) -> f64| mean(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
                let better = sel.iter().filter(|r| r.kl_rrs < r.kl_mv).count() as f64 / sel.len() as f64;
                means.row(&cells![
                    n,
                    j_f,
                    beta,
                    sel.len(),
                    avg(|r| r.kl_mv),
                    avg(|r| r.kl_rrs),
                    avg(|r| r.fit_mv),
                    avg(|r| r.fit_rrs),
                    avg(|r| r.opt_mv),
                    avg(|r| r.opt_rrs),
                    better,
                ])?;
            }
        }
    }
    means.finish(&mut out)?;
    out.audit("projected distributions sum to one", worst_norm <= 1e-12, format!("max deviation {worst_norm:e}"));
    out.audit(
        "logical subspace reproduces the native Boltzmann distribution",
        worst_tv < 1e-10,
        format!("max total variation {worst_tv:e}"),
    );
    Ok(out)
}

/// Energy-level statistics of the sampling pipeline.
#[derive(Debug, Clone)]
pub struct McProjectionResult {
    pub seed: u64,
    pub beta: f64,
    pub histogram: EnergyLevelHistogram,
    /// Exact level probabilities `g_i e^{-βE_i} / Z`.
    pub p_exact: Vec<f64>,
    /// Level counts of native Metropolis, majority vote and restricted resampling.
    pub counts: [Vec<u64>; 3],
    pub fits: [TemperatureFit; 3],
    pub levels_used: [usize; 3],
    pub total_samples: u64,
    /// Levels whose expected native count is at least `fit_min_count`.
    pub band_levels: usize,
    /// Of those, levels outside the 3σ Poisson band.
    pub band_failures: usize,
    pub max_audit_drift: f64,
    pub unmatched_energies: usize,
    pub rrs_mcmc_fallbacks: usize,
}

pub const MC_METHODS: [&str; 3] = ["native", "mv", "rrs"];

fn level_counts<I: Iterator<Item = f64>>(hist: &EnergyLevelHistogram, energies: I) -> (Vec<u64>, usize) {
    let mut counts = vec![0u64; hist.levels.len()];
    let mut unmatched = 0;
    for e in energies {
        match hist.level_of(e, LEVEL_TOLERANCE) {
            Some(k) => counts[k] += 1,
            None => unmatched += 1,
        }
    }
    (counts, unmatched)
}

/// Fit of `ln(P_i / g_i)` against `E_i` over levels with at least `min_count` samples.
pub fn level_fit(hist: &EnergyLevelHistogram, counts: &[u64], min_count: u64) -> Result<(TemperatureFit, usize)> {
    let total: u64 = counts.iter().sum();
    let points: Vec<(f64, f64)> = hist
        .levels
        .iter()
        .zip(counts)
        .filter(|(_, &c)| c >= min_count)
        .map(|(&(e, g), &c)| (e, c as f64 / total as f64 / g as f64))
        .collect();
    Ok((fit_inverse_temperature(&points)?, points.len()))
}

fn project_batch(
    emb: &ChainEmbedding,
    native: &IsingModel,
    batch: &SampleBatch,
    beta: f64,
    seed: u64,
    cap: usize,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let per = batch.config.samples_per_realization as usize;
    let parts: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..batch.config.realizations as usize)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, r as u64);
            let (mut mv_e, mut rrs_e, mut fallbacks) = (Vec::with_capacity(per), Vec::with_capacity(per), 0);
            for s in r * per..(r + 1) * per {
                let c = batch.config(s);
                let mv = majority_vote(emb, &c, &mut g)?;
                mv_e.push(native.energy(&mv.projected)?);
                let class = emb.classify(&c)?;
                let mode = if class.broken_count <= cap { RrsMode::Exact } else { RrsMode::Mcmc };
                let p = rrs(emb, native, &c, beta, mode, &mut g)?;
                fallbacks += usize::from(p.method == ProjectionMethod::Rrs(RrsMode::Mcmc));
                rrs_e.push(native.energy(&p.projected)?);
            }
            Ok((mv_e, rrs_e, fallbacks))
        })
        .collect::<Result<_>>()?;
    let mut mv = Vec::new();
    let mut rr = Vec::new();
    let mut fallbacks = 0;
    for (a, b, f) in parts {
        mv.extend(a);
        rr.extend(b);
        fallbacks += f;
    }
    Ok((mv, rr, fallbacks))
}

/// Samples the native and embedded models, projects the embedded samples and
/// compares energy-level distributions with the exact density of states.
pub fn mc_projection(cfg: &ExperimentConfig, beta: f64, j_f: f64, limits: &EnumerationLimits) -> Result<McProjectionResult> {
    let member = ensemble_member(cfg.seed, cfg.mc_n, 0, cfg.chain_len, j_f, cfg.embedding)?;
    let embedded = member.emb.embedded_model(&member.native)?;
    let histogram = member.native.energy_histogram(limits)?;
    let p_exact = histogram.level_probabilities(beta);

    let nt = |spins: usize| cfg.thermalization.unwrap_or(10 * spins as u64);
    let native_cfg = SamplerConfig::new(beta, nt(cfg.mc_n), cfg.samples, cfg.realizations, member.seed)?;
    let embedded_cfg =
        SamplerConfig::new(beta, nt(embedded.num_spins()), cfg.samples, cfg.realizations, member.seed ^ EMBEDDING_SALT)?;
    let native_batch = metropolis_sample(&member.native, &native_cfg)?;
    let embedded_batch = metropolis_sample(&embedded, &embedded_cfg)?;
    let (mv_e, rrs_e, rrs_mcmc_fallbacks) = project_batch(
        &member.emb,
        &member.native,
        &embedded_batch,
        beta,
        member.seed ^ PROJECTION_SALT,
        cfg.rrs_exact_cap,
    )?;

    let (c0, u0) = level_counts(&histogram, native_batch.energies().iter().copied());
    let (c1, u1) = level_counts(&histogram, mv_e.into_iter());
    let (c2, u2) = level_counts(&histogram, rrs_e.into_iter());
    let counts = [c0, c1, c2];
    let mut fits = Vec::new();
    let mut used = Vec::new();
    for c in &counts {
        let (f, k) = level_fit(&histogram, c, cfg.fit_min_count)?;
        fits.push(f);
        used.push(k);
    }
    let total = native_batch.len() as u64;
    let (mut band_levels, mut band_failures) = (0, 0);
    for (p, &c) in p_exact.iter().zip(&counts[0]) {
        let expected = p * total as f64;
        if expected >= cfg.fit_min_count as f64 {
            band_levels += 1;
            band_failures += usize::from((c as f64 - expected).abs() > 3.0 * expected.sqrt());
        }
    }
    Ok(McProjectionResult {
        seed: member.seed,
        beta,
        histogram,
        p_exact,
        counts,
        fits: [fits[0], fits[1], fits[2]],
        levels_used: [used[0], used[1], used[2]],
        total_samples: total,
        band_levels,
        band_failures,
        max_audit_drift: native_batch.max_audit_drift.max(embedded_batch.max_audit_drift),
        unmatched_energies: u0 + u1 + u2,
        rrs_mcmc_fallbacks,
    })
}

fn run_mc_projection(cfg: &ExperimentConfig, limits: &EnumerationLimits) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut levels = Table::create(
        &cfg.out_dir,
        "mc_levels.csv",
        &["instance_seed", "j_f", "beta", "level", "energy", "degeneracy", "p_exact", "expected_count", "count_native", "count_mv", "count_rrs"],
    )?;
    let mut fits = Table::create(
        &cfg.out_dir,
        "mc_fits.csv",
        &["instance_seed", "j_f", "beta", "method", "beta_fit", "intercept", "levels_used", "samples"],
    )?;
    for &j_f in &cfg.j_f {
        for &beta in &cfg.betas {
            let r = mc_projection(cfg, beta, j_f, limits)?;
            for (k, &(e, g)) in r.histogram.levels.iter().enumerate() {
                levels.row(&cells![
                    r.seed,
                    j_f,
                    beta,
                    k,
                    e,
                    g,
                    r.p_exact[k],
                    r.p_exact[k] * r.total_samples as f64,
                    r.counts[0][k],
                    r.counts[1][k],
                    r.counts[2][k],
                ])?;
            }
            for (m, name) in MC_METHODS.iter().enumerate() {
                fits.row(&cells![r.seed, j_f, beta, *name, r.fits[m].beta, r.fits[m].intercept, r.levels_used[m], r.total_samples])?;
                out.report.push(format!("J_F={j_f} beta={beta}: {name} fitted beta {:.4}", r.fits[m].beta));
            }
            out.report.push(format!(
                "J_F={j_f} beta={beta}: {} of {} levels outside the 3-sigma band",
                r.band_failures, r.band_levels
            ));
            out.audit(
                "incremental energy tracking",
                r.max_audit_drift <= crate::sampler::AUDIT_TOLERANCE,
                format!("max drift {:e}", r.max_audit_drift),
            );
            out.audit(
                "sample energies match exact levels",
                r.unmatched_energies == 0,
                format!("{} unmatched", r.unmatched_energies),
            );
        }
    }
    levels.finish(&mut out)?;
    fits.finish(&mut out)?;
    Ok(out)
}

/// Ring certificate values at one `β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingCertificate {
    pub beta: f64,
    pub r_c1: f64,
    pub r_c2: f64,
    pub exact: f64,
}

impl RingCertificate {
    pub fn new(n: usize, j_f_mag: f64, beta: f64) -> Result<Self> {
        let (r_c1, r_c2) = theory::ring_r_values(beta, j_f_mag);
        Ok(Self { beta, r_c1, r_c2, exact: exact_ring_partition_ratio(n, j_f_mag, beta)? })
    }

    /// Both single-context estimates differ from each other and from the exact ratio.
    pub fn separated(&self, tolerance: f64) -> bool {
        let gap = 10.0 * tolerance;
        (self.r_c1 - self.r_c2).abs() > gap && (self.r_c1 - self.exact).abs() > gap && (self.r_c2 - self.exact).abs() > gap
    }
}

fn run_counterexample(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let (n, j) = (cfg.ring_n, cfg.ring_j_f);
    let ring = theory::ring_model(n, j)?;
    let formula = theory::ring_energy_table(n, j)?;
    let mut table = Table::create(
        &cfg.out_dir,
        "counterexample_table.csv",
        &["context", "s0", "s1", "energy_formula", "energy_direct"],
    )?;
    let mut table_ok = true;
    for (row, ctx) in [RingContext::C1, RingContext::C2].into_iter().enumerate() {
        let mut line = format!("{ctx:?}:");
        for (col, &pair) in RING_COLUMNS.iter().enumerate() {
            let direct = ring.energy(&theory::ring_configuration(n, ctx, pair)?)?;
            table_ok &= direct == formula[row][col];
            table.row(&cells![format!("{ctx:?}"), i64::from(pair.0), i64::from(pair.1), formula[row][col], direct])?;
            line.push_str(&format!(" {:+}", formula[row][col]));
        }
        out.report.push(line);
    }
    table.finish(&mut out)?;
    out.audit("closed-form ring energies equal direct evaluation", table_ok, String::new());

    let mut ratios = Table::create(
        &cfg.out_dir,
        "counterexample_ratios.csv",
        &["n", "j_f_magnitude", "beta", "r_c1", "r_c2", "exact_ratio", "r_c1_from_table", "r_c2_from_table", "separated"],
    )?;
    for &beta in &cfg.betas {
        let c = RingCertificate::new(n, j, beta)?;
        let (t1, t2) = (theory::ring_r_from_energies(&formula[0], beta), theory::ring_r_from_energies(&formula[1], beta));
        let consistent = (t1 - c.r_c1).abs() <= 1e-12 * c.r_c1 && (t2 - c.r_c2).abs() <= 1e-12 * c.r_c2;
        out.audit("closed-form ratios match the energy table", consistent, format!("beta {beta}"));
        let separated = c.separated(RING_TOLERANCE);
        if beta > 0.0 {
            out.audit("single-context ratios disagree with each other and with Z/Z_L - 1", separated, format!("beta {beta}"));
        }
        ratios.row(&cells![n, j, beta, c.r_c1, c.r_c2, c.exact, t1, t2, separated])?;
        out.report.push(format!(
            "beta={beta}: r(C1)={:.6} r(C2)={:.6} Z/Z_L-1={:.6} -> {}",
            c.r_c1,
            c.r_c2,
            c.exact,
            if beta == 0.0 {
                "infinite temperature"
            } else if separated {
                "PASS: no configuration-independent ratio"
            } else {
                "FAIL"
            }
        ));
    }
    ratios.finish(&mut out)?;
    Ok(out)
}

/// Embedded energy of a logical state minus the chain offset.
pub fn logical_energy(emb: &ChainEmbedding, native: &IsingModel, logical: &SpinConfiguration) -> Result<f64> {
    let embedded = emb.embedded_model(native)?;
    Ok(embedded.energy(&emb.embed_config(logical)?)? - emb.energy_shift())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(e: Experiment, dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(e);
        c.out_dir = dir.to_path_buf();
        c.instances = 3;
        c.n_min = 2;
        c.n_max = 4;
        c.scatter_n = 4;
        c.mc_n = 6;
        c.samples = 2000;
        c.realizations = 2;
        c.schedule_n_max = 1000;
        c.ratio_sets.truncate(1);
        c.ratio_sets[0].n = 4;
        c
    }

    fn scratch(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("embedlab-exp-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn seeds_are_distinct_per_size_and_index() {
        assert_ne!(instance_seed(1, 2, 0), instance_seed(1, 3, 0));
        assert_ne!(instance_seed(1, 2, 0), instance_seed(1, 2, 1));
        assert_eq!(instance_seed(u64::MAX, 0, 1), 0);
    }

    #[test]
    fn schedule_sizes_are_log_spaced() {
        assert_eq!(schedule_sizes(100), vec![1, 2, 5, 10, 20, 50, 100]);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let (b, a) = linear_fit(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((b - 2.0).abs() < 1e-12 && (a - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn with_j_f_keeps_positions() {
        let m = ensemble_member(4, 5, 2, 3, -2.0, EmbeddingKind::Random).unwrap();
        let m3 = m.with_j_f(-3.0).unwrap();
        assert_eq!(m.emb.edges(), m3.emb.edges());
        assert_eq!(m3.emb.j_f(), -3.0);
    }

    #[test]
    fn logical_energy_is_native_energy() {
        let m = ensemble_member(4, 4, 0, 3, -2.0, EmbeddingKind::Random).unwrap();
        for idx in 0..16 {
            let c = SpinConfiguration::from_index(idx, 4);
            let diff = logical_energy(&m.emb, &m.native, &c).unwrap() - m.native.energy(&c).unwrap();
            assert!(diff.abs() < 1e-12);
        }
    }

    #[test]
    fn every_experiment_runs_and_passes_audits() {
        for e in Experiment::ALL {
            let dir = scratch(e.name());
            let out = run(&tiny(e, &dir)).unwrap();
            assert!(out.passed(), "{e}: {:?}", out.audits);
            assert!(!out.files.is_empty());
            for f in &out.files {
                let text = fs::read_to_string(f).unwrap();
                assert!(text.lines().count() >= 2, "{}", f.display());
            }
            fs::remove_dir_all(&dir).unwrap();
        }
    }

    #[test]
    fn theory_and_exact_agree_at_infinite_temperature() {
        let dir = scratch("beta0");
        let mut c = tiny(Experiment::ExactPl, &dir);
        c.betas = vec![0.0, 0.6];
        c.cold_betas = vec![];
        let out = run(&c).unwrap();
        assert!(out.passed(), "{:?}", out.audits);
        let exact = fs::read_to_string(dir.join("exact_pl.csv")).unwrap();
        let theory_cfg = ExperimentConfig { experiment: Experiment::TheoryCurves, ..c.clone() };
        run(&theory_cfg).unwrap();
        let theory_text = fs::read_to_string(dir.join("theory_p0.csv")).unwrap();
        for line in exact.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f[5].parse::<f64>().unwrap() != 0.0 {
                continue;
            }
            let n = f[0];
            let theory_row = theory_text
                .lines()
                .skip(1)
                .map(|l| l.split(',').collect::<Vec<_>>())
                .find(|t| t[0].parse::<f64>().unwrap() == 0.0 && t[3] == n)
                .unwrap();
            assert_eq!(f[7], theory_row[4], "N={n}");
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn counterexample_reports_certificate() {
        let c = RingCertificate::new(5, 2.0, 0.6).unwrap();
        assert!((c.r_c1 - 0.05010).abs() < 1e-5);
        assert!((c.r_c2 - 0.16426).abs() < 1e-5);
        assert!(c.separated(RING_TOLERANCE));
        let flat = RingCertificate::new(5, 2.0, 0.0).unwrap();
        assert_eq!((flat.r_c1, flat.r_c2), (1.0, 1.0));
    }
}
