//! Chain embeddings: every native spin becomes a path of `K` physical spins.
//!
//! Physical spin `(k, i)` (position `k` in the chain of logical spin `i`) has
//! the chain-major index `i * K + k`. Chains are glued by ferromagnetic
//! couplings `J_F < 0`, each native coupling becomes one inter-chain edge of
//! the same weight, and each native field is split evenly as `h_i / K`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{IsingModel, SpinConfiguration};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingMode {
    /// Edge `(i, j)` with `j > i` sits at `((k, i), (k, j))`, `k = (K - (j - i) mod K) mod K`.
    Deterministic,
    /// Chain positions drawn uniformly per edge, in sorted edge order.
    Random { seed: u64 },
}

/// Placement of one native coupling between two chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainEdge {
    pub i: usize,
    pub j: usize,
    pub k_i: usize,
    pub k_j: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainEmbedding {
    native_n: usize,
    chain_len: usize,
    j_f: f64,
    edges: Vec<ChainEdge>,
    mode: EmbeddingMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStatus {
    Aligned(i8),
    Broken,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainClassification {
    pub statuses: Vec<ChainStatus>,
    pub broken_count: usize,
    pub domain_walls: usize,
}

/// Chain position carrying native edge `(i, j)`, `i < j`, in deterministic mode.
pub fn deterministic_position(i: usize, j: usize, chain_len: usize) -> usize {
    debug_assert!(j > i);
    (chain_len - (j - i) % chain_len) % chain_len
}

/// Builds the embedding and the embedded model on `N * K` spins.
pub fn build_embedding(
    model: &IsingModel,
    chain_len: usize,
    j_f: f64,
    mode: EmbeddingMode,
) -> Result<(ChainEmbedding, IsingModel)> {
    if chain_len == 0 {
        return Err(Error::InvalidChainLength);
    }
    if !j_f.is_finite() {
        return Err(Error::NonFinite("chain coupling"));
    }
    if j_f >= 0.0 {
        return Err(Error::NonFerromagneticChain(j_f));
    }
    let edges = match mode {
        EmbeddingMode::Deterministic => model
            .couplings()
            .iter()
            .map(|c| {
                let k = deterministic_position(c.i, c.j, chain_len);
                ChainEdge { i: c.i, j: c.j, k_i: k, k_j: k }
            })
            .collect(),
        EmbeddingMode::Random { seed } => {
            let mut r = rng::seeded(seed);
            model
                .couplings()
                .iter()
                .map(|c| {
                    let k_i = rng::index_below(&mut r, chain_len);
                    let k_j = rng::index_below(&mut r, chain_len);
                    ChainEdge { i: c.i, j: c.j, k_i, k_j }
                })
                .collect()
        }
    };
    let emb = ChainEmbedding { native_n: model.num_spins(), chain_len, j_f, edges, mode };
    let embedded = emb.embedded_model(model)?;
    Ok((emb, embedded))
}

impl ChainEmbedding {
    /// Reassembles an embedding from its parts, e.g. after parsing a descriptor.
    pub fn from_parts(
        native_n: usize,
        chain_len: usize,
        j_f: f64,
        mode: EmbeddingMode,
        edges: Vec<ChainEdge>,
    ) -> Result<Self> {
        if native_n == 0 {
            return Err(Error::EmptyModel);
        }
        if chain_len == 0 {
            return Err(Error::InvalidChainLength);
        }
        if !(j_f < 0.0) {
            return Err(Error::NonFerromagneticChain(j_f));
        }
        for e in &edges {
            if e.i >= e.j || e.j >= native_n || e.k_i >= chain_len || e.k_j >= chain_len {
                return Err(Error::EmbeddingMismatch(format!("bad edge placement {e:?}")));
            }
        }
        Ok(Self { native_n, chain_len, j_f, edges, mode })
    }

    pub fn native_n(&self) -> usize {
        self.native_n
    }

    pub fn chain_len(&self) -> usize {
        self.chain_len
    }

    pub fn j_f(&self) -> f64 {
        self.j_f
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    pub fn edges(&self) -> &[ChainEdge] {
        &self.edges
    }

    pub fn num_physical(&self) -> usize {
        self.native_n * self.chain_len
    }

    #[inline]
    pub fn vertex(&self, chain: usize, position: usize) -> usize {
        chain * self.chain_len + position
    }

    /// Embedded model for `native`, which must carry exactly the embedded couplings.
    pub fn embedded_model(&self, native: &IsingModel) -> Result<IsingModel> {
        if native.num_spins() != self.native_n {
            return Err(Error::EmbeddingMismatch(format!(
                "embedding has {} chains, model has {} spins",
                self.native_n,
                native.num_spins()
            )));
        }
        if native.couplings().len() != self.edges.len() {
            return Err(Error::EmbeddingMismatch("coupling count differs from edge count".into()));
        }
        let k = self.chain_len;
        let mut couplings = Vec::with_capacity(self.native_n * (k - 1) + self.edges.len());
        for i in 0..self.native_n {
            for p in 0..k - 1 {
                couplings.push((self.vertex(i, p), self.vertex(i, p + 1), self.j_f));
            }
        }
        for (e, c) in self.edges.iter().zip(native.couplings()) {
            if (e.i, e.j) != (c.i, c.j) {
                return Err(Error::EmbeddingMismatch(format!("edge ({}, {}) not in model", e.i, e.j)));
            }
            couplings.push((self.vertex(e.i, e.k_i), self.vertex(e.j, e.k_j), c.value));
        }
        let fields = native
            .fields()
            .iter()
            .flat_map(|&h| std::iter::repeat(h / k as f64).take(k))
            .collect();
        IsingModel::new(self.num_physical(), couplings, fields)
    }

    fn check_physical(&self, config: &SpinConfiguration) -> Result<()> {
        if config.len() != self.num_physical() {
            return Err(Error::LengthMismatch { expected: self.num_physical(), got: config.len() });
        }
        Ok(())
    }

    pub fn chain<'a>(&self, embedded: &'a [i8], chain: usize) -> &'a [i8] {
        &embedded[chain * self.chain_len..(chain + 1) * self.chain_len]
    }

    /// Copies each logical value onto its whole chain.
    pub fn embed_config(&self, logical: &SpinConfiguration) -> Result<SpinConfiguration> {
        if logical.len() != self.native_n {
            return Err(Error::LengthMismatch { expected: self.native_n, got: logical.len() });
        }
        let spins = logical
            .as_slice()
            .iter()
            .flat_map(|&s| std::iter::repeat(s).take(self.chain_len))
            .collect();
        Ok(SpinConfiguration::new(spins).expect("copied from a valid configuration"))
    }

    /// Native configuration of a logical embedded configuration.
    pub fn project_logical(&self, embedded: &SpinConfiguration) -> Result<SpinConfiguration> {
        self.check_physical(embedded)?;
        let mut out = Vec::with_capacity(self.native_n);
        for i in 0..self.native_n {
            let chain = self.chain(embedded.as_slice(), i);
            if chain.iter().any(|&s| s != chain[0]) {
                return Err(Error::BrokenChain(i));
            }
            out.push(chain[0]);
        }
        Ok(SpinConfiguration::new(out).expect("taken from a valid configuration"))
    }

    pub fn classify(&self, embedded: &SpinConfiguration) -> Result<ChainClassification> {
        self.check_physical(embedded)?;
        let mut statuses = Vec::with_capacity(self.native_n);
        let mut broken_count = 0;
        let mut domain_walls = 0;
        for i in 0..self.native_n {
            let chain = self.chain(embedded.as_slice(), i);
            let walls = chain.windows(2).filter(|w| w[0] != w[1]).count();
            domain_walls += walls;
            if walls == 0 {
                statuses.push(ChainStatus::Aligned(chain[0]));
            } else {
                broken_count += 1;
                statuses.push(ChainStatus::Broken);
            }
        }
        Ok(ChainClassification { statuses, broken_count, domain_walls })
    }

    /// Constant offset `C = J_F Σ_i (K - 1)` between embedded and native energies.
    pub fn energy_shift(&self) -> f64 {
        self.j_f * (self.native_n * (self.chain_len - 1)) as f64
    }

    /// Text descriptor: `EMB N K J_F MODE SEED` followed by one `EDGE i j k_i k_j` per coupling.
    pub fn to_descriptor(&self) -> String {
        let (mode, seed) = match self.mode {
            EmbeddingMode::Deterministic => ("deterministic", "-".to_string()),
            EmbeddingMode::Random { seed } => ("random", seed.to_string()),
        };
        let mut s = format!("EMB {} {} {} {} {}\n", self.native_n, self.chain_len, self.j_f, mode, seed);
        for e in &self.edges {
            writeln!(s, "EDGE {} {} {} {}", e.i, e.j, e.k_i, e.k_j).unwrap();
        }
        s
    }

    pub fn parse_descriptor(text: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse { line, message };
        let mut header: Option<(usize, usize, f64, EmbeddingMode)> = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = trimmed.split_whitespace().collect();
            match tokens[0] {
                "EMB" => {
                    if header.is_some() {
                        return Err(perr(line, "duplicate EMB header".into()));
                    }
                    if tokens.len() != 6 {
                        return Err(perr(line, "EMB expects N K J_F MODE SEED".into()));
                    }
                    let n = tokens[1].parse().map_err(|e| perr(line, format!("N: {e}")))?;
                    let k = tokens[2].parse().map_err(|e| perr(line, format!("K: {e}")))?;
                    let j_f = tokens[3].parse().map_err(|e| perr(line, format!("J_F: {e}")))?;
                    let mode = match tokens[4] {
                        "deterministic" => EmbeddingMode::Deterministic,
                        "random" => EmbeddingMode::Random {
                            seed: tokens[5].parse().map_err(|e| perr(line, format!("SEED: {e}")))?,
                        },
                        other => return Err(perr(line, format!("unknown mode {other}"))),
                    };
                    header = Some((n, k, j_f, mode));
                }
                "EDGE" => {
                    if header.is_none() {
                        return Err(perr(line, "EDGE before EMB header".into()));
                    }
                    if tokens.len() != 5 {
                        return Err(perr(line, "EDGE expects i j k_i k_j".into()));
                    }
                    let mut v = [0usize; 4];
                    for (slot, tok) in v.iter_mut().zip(&tokens[1..]) {
                        *slot = tok.parse().map_err(|e| perr(line, format!("{tok}: {e}")))?;
                    }
                    edges.push(ChainEdge { i: v[0], j: v[1], k_i: v[2], k_j: v[3] });
                }
                other => return Err(perr(line, format!("unknown record {other}"))),
            }
        }
        let (n, k, j_f, mode) = header.ok_or_else(|| perr(0, "missing EMB header".into()))?;
        Self::from_parts(n, k, j_f, mode, edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> IsingModel {
        let mut couplings = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                couplings.push((i, j, 0.2 * ((i + 2 * j) % 11) as f64 - 1.0));
            }
        }
        let fields = (0..n).map(|i| 0.2 * (i % 11) as f64 - 1.0).collect();
        IsingModel::new(n, couplings, fields).unwrap()
    }

    #[test]
    fn deterministic_triangle_positions() {
        let (emb, _) = build_embedding(&complete(3), 3, -2.0, EmbeddingMode::Deterministic).unwrap();
        let placed: Vec<_> = emb.edges().iter().map(|e| ((e.k_i, e.i), (e.k_j, e.j))).collect();
        assert_eq!(placed, vec![((2, 0), (2, 1)), ((1, 0), (1, 2)), ((2, 1), (2, 2))]);
    }

    #[test]
    fn deterministic_rule_matches_original_statement() {
        // vertex (k, i) connects to (k, j) iff j = i + (K - k) + nK
        for k_len in 1..6 {
            for i in 0..12 {
                for j in i + 1..14 {
                    let k = deterministic_position(i, j, k_len);
                    let hits: Vec<usize> = (0..k_len)
                        .filter(|&kk| (0..20).any(|n| j == i + (k_len - kk) + n * k_len))
                        .collect();
                    assert_eq!(hits, vec![k], "K={k_len} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn identity_embedding_for_unit_chains() {
        let native = complete(4);
        let (emb, embedded) = build_embedding(&native, 1, -2.0, EmbeddingMode::Deterministic).unwrap();
        assert_eq!(embedded, native);
        assert_eq!(emb.energy_shift(), 0.0);
    }

    #[test]
    fn rejects_antiferromagnetic_chain() {
        let native = complete(3);
        assert!(matches!(
            build_embedding(&native, 2, 0.0, EmbeddingMode::Deterministic),
            Err(Error::NonFerromagneticChain(_))
        ));
        assert_eq!(
            build_embedding(&native, 0, -1.0, EmbeddingMode::Deterministic).unwrap_err(),
            Error::InvalidChainLength
        );
    }

    #[test]
    fn embedded_structure_n5_k3() {
        let native = complete(5);
        let (emb, embedded) = build_embedding(&native, 3, -2.0, EmbeddingMode::Deterministic).unwrap();
        assert_eq!(embedded.num_spins(), 15);
        assert_eq!(embedded.couplings().len(), 5 * 2 + 10);
        for e in emb.edges() {
            assert_eq!(e.k_i, e.k_j);
            let w = embedded.coupling(emb.vertex(e.i, e.k_i), emb.vertex(e.j, e.k_j)).unwrap();
            assert_eq!(w, native.coupling(e.i, e.j).unwrap());
        }
        for i in 0..5 {
            for p in 0..2 {
                assert_eq!(embedded.coupling(emb.vertex(i, p), emb.vertex(i, p + 1)), Some(-2.0));
            }
            for p in 0..3 {
                assert_eq!(embedded.fields()[emb.vertex(i, p)], native.fields()[i] / 3.0);
            }
        }
    }

    #[test]
    fn random_mode_is_seeded() {
        let native = complete(6);
        let a = build_embedding(&native, 4, -1.0, EmbeddingMode::Random { seed: 5 }).unwrap().0;
        let b = build_embedding(&native, 4, -1.0, EmbeddingMode::Random { seed: 5 }).unwrap().0;
        let c = build_embedding(&native, 4, -1.0, EmbeddingMode::Random { seed: 6 }).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a.edges(), c.edges());
        assert_eq!(a.edges().len(), 15);
        assert!(a.edges().iter().all(|e| e.k_i < 4 && e.k_j < 4));
    }

    #[test]
    fn embed_and_classify() {
        let native = complete(2);
        let (emb, _) = build_embedding(&native, 3, -1.0, EmbeddingMode::Deterministic).unwrap();
        let logical = SpinConfiguration::new(vec![1, -1]).unwrap();
        let e = emb.embed_config(&logical).unwrap();
        assert_eq!(e.as_slice(), &[1, 1, 1, -1, -1, -1]);
        let cls = emb.classify(&e).unwrap();
        assert_eq!((cls.broken_count, cls.domain_walls), (0, 0));
        assert_eq!(emb.project_logical(&e).unwrap(), logical);
    }

    #[test]
    fn domain_wall_counts() {
        let native = IsingModel::zeros(1).unwrap();
        let (emb4, _) = build_embedding(&native, 4, -1.0, EmbeddingMode::Deterministic).unwrap();
        let c = SpinConfiguration::new(vec![1, -1, -1, 1]).unwrap();
        let cls = emb4.classify(&c).unwrap();
        assert_eq!((cls.broken_count, cls.domain_walls), (1, 2));
        assert_eq!(cls.statuses, vec![ChainStatus::Broken]);

        let (emb6, _) = build_embedding(&native, 6, -1.0, EmbeddingMode::Deterministic).unwrap();
        let c = SpinConfiguration::new(vec![1, 1, -1, -1, 1, -1]).unwrap();
        assert_eq!(emb6.classify(&c).unwrap().domain_walls, 3);
    }

    #[test]
    fn project_logical_reports_first_broken_chain() {
        let native = IsingModel::zeros(3).unwrap();
        let (emb, _) = build_embedding(&native, 2, -1.0, EmbeddingMode::Deterministic).unwrap();
        let c = SpinConfiguration::new(vec![1, 1, 1, -1, -1, 1]).unwrap();
        assert_eq!(emb.project_logical(&c), Err(Error::BrokenChain(1)));
    }

    #[test]
    fn energy_shift_values() {
        let (emb, _) = build_embedding(&complete(5), 3, -2.0, EmbeddingMode::Deterministic).unwrap();
        assert_eq!(emb.energy_shift(), -20.0);
    }

    #[test]
    fn descriptor_roundtrip() {
        let native = complete(5);
        for mode in [EmbeddingMode::Deterministic, EmbeddingMode::Random { seed: 77 }] {
            let (emb, _) = build_embedding(&native, 3, -2.5, mode).unwrap();
            let text = emb.to_descriptor();
            assert_eq!(ChainEmbedding::parse_descriptor(&text).unwrap(), emb);
        }
        assert!(ChainEmbedding::parse_descriptor("EDGE 0 1 0 0\n").is_err());
        assert!(ChainEmbedding::parse_descriptor("EMB 2 2 1.0 deterministic -\n").is_err());
    }
}
