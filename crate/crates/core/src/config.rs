//! Experiment configuration.
//!
//! The file format follows the instance format: one record per line, a key
//! followed by whitespace-separated values, `#` starting a comment line.
//!
//! ```text
//! experiment exact-pl
//! seed 7
//! n_range 2 8
//! betas 0.4 0.6
//! ratio_set 8 3 0.6
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::projection::RRS_EXACT_CAP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    Gen,
    TheoryCurves,
    ExactPl,
    RatioProfile,
    ProjectionExact,
    McProjection,
    Counterexample,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Gen,
        Experiment::TheoryCurves,
        Experiment::ExactPl,
        Experiment::RatioProfile,
        Experiment::ProjectionExact,
        Experiment::McProjection,
        Experiment::Counterexample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Gen => "gen",
            Experiment::TheoryCurves => "theory-curves",
            Experiment::ExactPl => "exact-pl",
            Experiment::RatioProfile => "ratio-profile",
            Experiment::ProjectionExact => "projection-exact",
            Experiment::McProjection => "mc-projection",
            Experiment::Counterexample => "counterexample",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment {s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Random,
    Deterministic,
}

/// One `(N, K, β)` parameter set of the broken-chain ratio profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSet {
    pub n: usize,
    pub chain_len: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Inclusive range of native sizes.
    pub n_min: usize,
    pub n_max: usize,
    pub chain_len: usize,
    /// Chain couplings of the instance ensemble.
    pub j_f: Vec<f64>,
    pub instances: usize,
    pub betas: Vec<f64>,
    pub cold_betas: Vec<f64>,
    pub embedding: EmbeddingKind,
    pub ratio_sets: Vec<RatioSet>,
    /// Native size and chain couplings of the per-configuration scatter.
    pub scatter_n: usize,
    pub scatter_j_f: Vec<f64>,
    /// Largest `N` of the chain-strength schedule curves.
    pub schedule_n_max: usize,
    pub schedule_chain_lens: Vec<usize>,
    pub ring_n: usize,
    pub ring_j_f: f64,
    pub mc_n: usize,
    /// Proposals per sample; `None` means ten per spin of the sampled model.
    pub thermalization: Option<u64>,
    pub samples: u64,
    pub realizations: u64,
    /// Smallest per-level count entering the energy-level temperature fit.
    pub fit_min_count: u64,
    pub rrs_exact_cap: usize,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = Self {
            experiment,
            seed: 1,
            out_dir: PathBuf::from("out"),
            n_min: 2,
            n_max: 8,
            chain_len: 3,
            j_f: vec![-2.0],
            instances: 100,
            betas: vec![0.4, 0.6],
            cold_betas: vec![2.0, 3.0],
            embedding: EmbeddingKind::Random,
            ratio_sets: vec![
                RatioSet { n: 8, chain_len: 3, beta: 0.6 },
                RatioSet { n: 6, chain_len: 4, beta: 0.6 },
                RatioSet { n: 8, chain_len: 3, beta: 0.4 },
            ],
            scatter_n: 8,
            scatter_j_f: vec![-2.0, -3.0],
            schedule_n_max: 1_000_000,
            schedule_chain_lens: vec![3, 4, 5],
            ring_n: 5,
            ring_j_f: 2.0,
            mc_n: 20,
            thermalization: None,
            samples: 50_000,
            realizations: 20,
            fit_min_count: 100,
            rrs_exact_cap: RRS_EXACT_CAP,
        };
        match experiment {
            Experiment::TheoryCurves => {
                c.n_min = 1;
                c.n_max = 10;
            }
            Experiment::ProjectionExact => {
                c.n_min = 4;
                c.instances = 500;
                c.betas = vec![0.6];
            }
            Experiment::McProjection | Experiment::Counterexample => c.betas = vec![0.6],
            _ => {}
        }
        c
    }

    /// Applies `text` on top of the defaults of the experiment it names
    /// (or of `fallback` when it names none).
    pub fn parse(text: &str, fallback: Experiment) -> Result<Self> {
        let records = records(text)?;
        let experiment = match records.iter().find(|r| r.key == "experiment") {
            Some(r) => single(r)?.parse().map_err(|e: Error| perr(r.line, e.to_string()))?,
            None => fallback,
        };
        let mut c = Self::defaults(experiment);
        let mut ratio_sets = Vec::new();
        for r in &records {
            let line = r.line;
            match r.key.as_str() {
                "experiment" => {}
                "seed" => c.seed = value(r, single(r)?)?,
                "out_dir" => c.out_dir = PathBuf::from(single(r)?),
                "n_range" => {
                    let v: Vec<usize> = values(r)?;
                    if v.len() != 2 {
                        return Err(perr(line, "n_range needs two values".into()));
                    }
                    (c.n_min, c.n_max) = (v[0], v[1]);
                }
                "chain_len" => c.chain_len = value(r, single(r)?)?,
                "j_f" => c.j_f = values(r)?,
                "instances" => c.instances = value(r, single(r)?)?,
                "betas" => c.betas = values(r)?,
                "cold_betas" => c.cold_betas = values(r)?,
                "embedding" => {
                    c.embedding = match single(r)? {
                        "random" => EmbeddingKind::Random,
                        "deterministic" => EmbeddingKind::Deterministic,
                        other => return Err(perr(line, format!("unknown embedding {other}"))),
                    }
                }
                "ratio_set" => {
                    if r.values.len() != 3 {
                        return Err(perr(line, "ratio_set needs N K beta".into()));
                    }
                    ratio_sets.push(RatioSet {
                        n: value(r, &r.values[0])?,
                        chain_len: value(r, &r.values[1])?,
                        beta: value(r, &r.values[2])?,
                    });
                }
                "scatter_n" => c.scatter_n = value(r, single(r)?)?,
                "scatter_j_f" => c.scatter_j_f = values(r)?,
                "schedule_n_max" => c.schedule_n_max = value(r, single(r)?)?,
                "schedule_chain_lens" => c.schedule_chain_lens = values(r)?,
                "ring_n" => c.ring_n = value(r, single(r)?)?,
                "ring_j_f" => c.ring_j_f = value(r, single(r)?)?,
                "mc_n" => c.mc_n = value(r, single(r)?)?,
                "thermalization" => c.thermalization = Some(value(r, single(r)?)?),
                "samples" => c.samples = value(r, single(r)?)?,
                "realizations" => c.realizations = value(r, single(r)?)?,
                "fit_min_count" => c.fit_min_count = value(r, single(r)?)?,
                "rrs_exact_cap" => c.rrs_exact_cap = value(r, single(r)?)?,
                other => return Err(perr(line, format!("unknown key {other}"))),
            }
        }
        if !ratio_sets.is_empty() {
            c.ratio_sets = ratio_sets;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.n_min == 0 || self.n_min > self.n_max {
            return bad("n_range must satisfy 1 <= min <= max");
        }
        if self.chain_len == 0 || self.schedule_chain_lens.iter().any(|&k| k < 2) {
            return bad("chain lengths must be positive (schedule needs >= 2)");
        }
        if self.instances == 0 || self.samples == 0 || self.realizations == 0 || self.thermalization == Some(0) {
            return bad("counts must be at least 1");
        }
        let all_j = self.j_f.iter().chain(&self.scatter_j_f);
        if self.j_f.is_empty() || all_j.clone().any(|j| !(j.is_finite() && *j < 0.0)) {
            return bad("j_f values must be finite and negative");
        }
        let all_b = self.betas.iter().chain(&self.cold_betas).chain(self.ratio_sets.iter().map(|s| &s.beta));
        if self.betas.is_empty() || all_b.clone().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return bad("inverse temperatures must be finite and >= 0");
        }
        if self.ratio_sets.iter().any(|s| s.n == 0 || s.chain_len == 0) {
            return bad("ratio sets need N, K >= 1");
        }
        if !(self.ring_j_f.is_finite() && self.ring_j_f >= 0.0) || self.ring_n < 3 || self.ring_n % 2 == 0 {
            return bad("ring needs odd N >= 3 and |J_F| >= 0");
        }
        if self.rrs_exact_cap > 30 {
            return bad("rrs_exact_cap above 30 is not supported");
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal configuration.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let joinu = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push(' ');
            s.push_str(&v);
            s.push('\n');
        };
        put("experiment", self.experiment.to_string());
        put("seed", self.seed.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("n_range", format!("{} {}", self.n_min, self.n_max));
        put("chain_len", self.chain_len.to_string());
        put("j_f", join(&self.j_f));
        put("instances", self.instances.to_string());
        put("betas", join(&self.betas));
        put("cold_betas", join(&self.cold_betas));
        put(
            "embedding",
            match self.embedding {
                EmbeddingKind::Random => "random",
                EmbeddingKind::Deterministic => "deterministic",
            }
            .into(),
        );
        for r in &self.ratio_sets {
            put("ratio_set", format!("{} {} {}", r.n, r.chain_len, r.beta));
        }
        put("scatter_n", self.scatter_n.to_string());
        put("scatter_j_f", join(&self.scatter_j_f));
        put("schedule_n_max", self.schedule_n_max.to_string());
        put("schedule_chain_lens", joinu(&self.schedule_chain_lens));
        put("ring_n", self.ring_n.to_string());
        put("ring_j_f", self.ring_j_f.to_string());
        put("mc_n", self.mc_n.to_string());
        if let Some(t) = self.thermalization {
            put("thermalization", t.to_string());
        }
        put("samples", self.samples.to_string());
        put("realizations", self.realizations.to_string());
        put("fit_min_count", self.fit_min_count.to_string());
        put("rrs_exact_cap", self.rrs_exact_cap.to_string());
        s
    }
}

struct Record {
    line: usize,
    key: String,
    values: Vec<String>,
}

fn perr(line: usize, message: String) -> Error {
    Error::Parse { line, message }
}

fn records(text: &str) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut tokens = t.split_whitespace();
        let key = tokens.next().unwrap().to_string();
        let values: Vec<String> = tokens.map(str::to_string).collect();
        if values.is_empty() {
            return Err(perr(i + 1, format!("{key} has no value")));
        }
        out.push(Record { line: i + 1, key, values });
    }
    Ok(out)
}

fn single(r: &Record) -> Result<&str> {
    match r.values.as_slice() {
        [v] => Ok(v),
        _ => Err(perr(r.line, format!("{} takes exactly one value", r.key))),
    }
}

fn value<T: FromStr>(r: &Record, tok: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    tok.parse().map_err(|e| perr(r.line, format!("{} value {tok}: {e}", r.key)))
}

fn values<T: FromStr>(r: &Record) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    r.values.iter().map(|t| value(r, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_roundtrip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("nope".parse::<Experiment>().is_err());
    }

    #[test]
    fn parse_overrides_defaults() {
        let c = ExperimentConfig::parse(
            "# demo\nexperiment ratio-profile\nseed 9\nn_range 3 5\nbetas 0.1 0.2\nratio_set 4 3 0.5\n",
            Experiment::Gen,
        )
        .unwrap();
        assert_eq!(c.experiment, Experiment::RatioProfile);
        assert_eq!((c.seed, c.n_min, c.n_max), (9, 3, 5));
        assert_eq!(c.betas, vec![0.1, 0.2]);
        assert_eq!(c.ratio_sets, vec![RatioSet { n: 4, chain_len: 3, beta: 0.5 }]);
        assert_eq!(c.instances, 100);
    }

    #[test]
    fn fallback_experiment_is_used() {
        let c = ExperimentConfig::parse("seed 3\n", Experiment::McProjection).unwrap();
        assert_eq!(c.experiment, Experiment::McProjection);
        assert_eq!(c.mc_n, 20);
    }

    #[test]
    fn text_roundtrip() {
        for e in Experiment::ALL {
            let mut c = ExperimentConfig::defaults(e);
            c.thermalization = Some(77);
            c.j_f = vec![-0.1 - 0.2];
            assert_eq!(ExperimentConfig::parse(&c.to_text(), Experiment::Gen).unwrap(), c);
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = |t: &str| ExperimentConfig::parse(t, Experiment::Gen).unwrap_err();
        assert!(matches!(err("seed 1\nbogus 2\n"), Error::Parse { line: 2, .. }));
        assert!(matches!(err("\nseed x\n"), Error::Parse { line: 2, .. }));
        assert!(matches!(err("seed\n"), Error::Parse { line: 1, .. }));
        assert!(matches!(err("n_range 1\n"), Error::Parse { line: 1, .. }));
        assert!(matches!(err("experiment what\n"), Error::Parse { line: 1, .. }));
        assert!(matches!(err("j_f 1.0\n"), Error::InvalidParameter(_)));
        assert!(matches!(err("n_range 5 2\n"), Error::InvalidParameter(_)));
        assert!(matches!(err("ring_n 4\n"), Error::InvalidParameter(_)));
    }
}
