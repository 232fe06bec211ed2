//! Instance text format and random instance generation.
//!
//! ```text
//! # comment
//! N 3
//! J 0 1 -0.4
//! J 0 2 0.2
//! H 0 1
//! ```
//! Indices are 0-based. Values are written with the shortest representation
//! that parses back to the same `f64`.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::IsingModel;
use crate::rng;

/// The 11-point coupling grid `{-1.0, -0.8, ..., 1.0}`.
pub const GRID_POINTS: usize = 11;

/// Grid value `k`, correctly rounded from the decimal `-1 + 0.2 k`.
pub fn grid_value(k: usize) -> f64 {
    assert!(k < GRID_POINTS);
    (k as f64 - 5.0) / 5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    FullyConnected,
}

/// Random instance with every coupling and field drawn uniformly from the grid,
/// couplings first in sorted edge order, then fields in index order.
pub fn generate_instance(n: usize, topology: Topology, seed: u64) -> Result<IsingModel> {
    if n == 0 {
        return Err(Error::EmptyModel);
    }
    let mut r = rng::seeded(seed);
    let Topology::FullyConnected = topology;
    let mut couplings = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            couplings.push((i, j, grid_value(rng::index_below(&mut r, GRID_POINTS))));
        }
    }
    let fields = (0..n).map(|_| grid_value(rng::index_below(&mut r, GRID_POINTS))).collect();
    IsingModel::new(n, couplings, fields)
}

pub fn to_instance_text(model: &IsingModel) -> String {
    let mut s = format!("N {}\n", model.num_spins());
    for c in model.couplings() {
        writeln!(s, "J {} {} {}", c.i, c.j, c.value).unwrap();
    }
    for (i, h) in model.fields().iter().enumerate() {
        writeln!(s, "H {} {}", i, h).unwrap();
    }
    s
}

pub fn parse_instance(text: &str) -> Result<IsingModel> {
    let perr = |line: usize, message: String| Error::Parse { line, message };
    let mut n: Option<usize> = None;
    let mut couplings = Vec::new();
    let mut fields: Vec<Option<f64>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let index = |tok: &str| -> Result<usize> {
            let v: usize = tok.parse().map_err(|e| perr(line, format!("index {tok}: {e}")))?;
            let num_spins = n.unwrap();
            if v >= num_spins {
                return Err(perr(line, format!("index {v} out of range for N {num_spins}")));
            }
            Ok(v)
        };
        let value = |tok: &str| -> Result<f64> {
            let v: f64 = tok.parse().map_err(|e| perr(line, format!("value {tok}: {e}")))?;
            if !v.is_finite() {
                return Err(perr(line, format!("non-finite value {tok}")));
            }
            Ok(v)
        };
        match (tokens[0], n) {
            ("N", None) if tokens.len() == 2 => {
                let v: usize = tokens[1].parse().map_err(|e| perr(line, format!("N: {e}")))?;
                if v == 0 {
                    return Err(perr(line, "N must be positive".into()));
                }
                n = Some(v);
                fields = vec![None; v];
            }
            ("N", _) => return Err(perr(line, "malformed or repeated N line".into())),
            (_, None) => return Err(perr(line, "first record must be N".into())),
            ("J", Some(_)) if tokens.len() == 4 => {
                couplings.push((index(tokens[1])?, index(tokens[2])?, value(tokens[3])?));
            }
            ("H", Some(_)) if tokens.len() == 3 => {
                let i = index(tokens[1])?;
                if fields[i].replace(value(tokens[2])?).is_some() {
                    return Err(perr(line, format!("duplicate field for spin {i}")));
                }
            }
            (other, _) => return Err(perr(line, format!("malformed record {other}"))),
        }
    }
    let n = n.ok_or_else(|| perr(0, "missing N line".into()))?;
    IsingModel::new(n, couplings, fields.into_iter().map(|h| h.unwrap_or(0.0)).collect())
}

/// Stable 64-bit digest of the canonical instance text.
pub fn model_hash(model: &IsingModel) -> u64 {
    let digest = Sha256::digest(to_instance_text(model).as_bytes());
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}
