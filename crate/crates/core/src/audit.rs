//! Leakage audit: are the basis-conditional outcome distributions identical?
//!
//! The distance between two mixtures is the exact L2 distance, which for
//! equal-weight unit Gaussian mixtures reduces to sums of pairwise overlaps
//! `<N(a), N(b)> = exp(-|a - b|^2 / 2) / (2 pi)`.

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::mle::{clt_params, log_mixture_likelihood};
use crate::par;
use crate::rng::{tags, Amplitude, RandomStream};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Default classification tolerance on the L2 distance.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Above this basis count the pair table is subsampled.
pub const FULL_PAIR_LIMIT: usize = 150;
pub const SUBSAMPLED_PAIRS: usize = 10_000;

/// `integral p_a(z) p_b(z) dz` for the mixtures over `a` and `b`.
///
/// Terms are summed in sorted order so that permuted point lists give
/// bit-identical results.
pub fn mixture_overlap(a: &[Amplitude], b: &[Amplitude]) -> f64 {
    let mut terms: Vec<f64> = a
        .iter()
        .flat_map(|p| b.iter().map(move |q| (-(p - q).norm_sqr() / 2.0).exp()))
        .collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>() / (2.0 * PI * (a.len() * b.len()) as f64)
}

/// Exact L2 distance between `p(.|b_m)` and `p(.|b_m2)`.
pub fn mixture_l2_distance(spec: &Constellation, m: usize, m2: usize) -> Result<f64> {
    for &k in &[m, m2] {
        if k >= spec.bases() {
            return Err(Error::IndexOutOfRange {
                what: "basis",
                index: k,
                limit: spec.bases(),
            });
        }
    }
    let (a, b) = (spec.basis_points(m), spec.basis_points(m2));
    let d2 = mixture_overlap(a, a) + mixture_overlap(b, b) - 2.0 * mixture_overlap(a, b);
    Ok(d2.max(0.0).sqrt())
}

/// Monte Carlo estimate of the squared L2 distance and its standard error.
///
/// Samples from the half-half mixture `h = (p + q) / 2` and averages
/// `(p - q)^2 / h`, which is bounded by `2 |p - q|`.
pub fn mc_l2_squared(spec: &Constellation, m: usize, m2: usize, samples: usize, seed: u64) -> (f64, f64) {
    let (a, b) = (spec.basis_points(m), spec.basis_points(m2));
    let rs = RandomStream::new(seed, tags::MONTE_CARLO);
    let (pick, sym, noise) = (rs.derive(11), rs.derive(12), rs.derive(13));
    let parts = par::map_chunks(samples, par::CHUNK, |range| {
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in range {
            let i = i as u64;
            let pts = if pick.u64_at(i) & 1 == 0 { a } else { b };
            let z = pts[sym.index_below(i, pts.len())] + noise.complex_normal(i);
            let p = log_mixture_likelihood(a, z).exp();
            let q = log_mixture_likelihood(b, z).exp();
            let h = 0.5 * (p + q);
            let v = if h > 0.0 { (p - q).powi(2) / h } else { 0.0 };
            s1 += v;
            s2 += v * v;
        }
        (s1, s2)
    });
    let (s1, s2) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let n = samples as f64;
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    ConditionHolds,
    Leaky,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub m: usize,
    pub m2: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub kind: String,
    pub bases: usize,
    pub symbols: usize,
    pub tolerance: f64,
    pub max_pair_l2: f64,
    pub classification: Classification,
    pub gamma_estimate: f64,
    pub gamma_stderr: f64,
    pub gamma_samples: usize,
    /// True when only a random subset of basis pairs was examined.
    pub subsampled: bool,
    /// One-based basis indices.
    pub per_pair_table: Vec<PairDistance>,
}

impl AuditReport {
    pub fn verdict(&self) -> String {
        let what = match self.classification {
            Classification::ConditionHolds => {
                "basis-conditional distributions coincide; measurements reveal nothing about the basis secret"
            }
            Classification::Leaky => "basis-conditional distributions differ; measurements leak the basis secret",
        };
        format!(
            "{:?} ({} M={} L={}): max L2 distance {:.3e} (tolerance {:.1e}), gamma ~ {:.4} +/- {:.4}: {what}",
            self.classification,
            self.kind,
            self.bases,
            self.symbols,
            self.max_pair_l2,
            self.tolerance,
            self.gamma_estimate,
            self.gamma_stderr
        )
    }
}

/// Compares every pair of basis-conditional distributions and attaches a
/// Monte Carlo error-exponent estimate.
pub fn audit(spec: &Constellation, tolerance: f64, gamma_samples: usize, seed: u64) -> Result<AuditReport> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be > 0, got {tolerance}"
        )));
    }
    let m_count = spec.bases();
    let subsampled = m_count > FULL_PAIR_LIMIT;
    let pairs: Vec<(usize, usize)> = if subsampled {
        let rs = RandomStream::new(seed, tags::MONTE_CARLO).derive(21);
        (0..SUBSAMPLED_PAIRS as u64)
            .map(|i| {
                let a = rs.index_below(2 * i, m_count);
                let mut b = rs.index_below(2 * i + 1, m_count - 1);
                if b >= a {
                    b += 1;
                }
                (a.min(b), a.max(b))
            })
            .collect()
    } else {
        (0..m_count)
            .flat_map(|a| (a + 1..m_count).map(move |b| (a, b)))
            .collect()
    };
    let table: Vec<PairDistance> = par::map_slice(&pairs, |&(a, b)| PairDistance {
        m: a + 1,
        m2: b + 1,
        distance: mixture_l2_distance(spec, a, b).expect("indices in range"),
    });
    let max_pair_l2 = table.iter().map(|p| p.distance).fold(0.0, f64::max);
    let stats = clt_params(spec, gamma_samples, seed, 0.0)?;
    Ok(AuditReport {
        kind: spec.kind().to_string(),
        bases: m_count,
        symbols: spec.symbols(),
        tolerance,
        max_pair_l2,
        classification: if max_pair_l2 <= tolerance {
            Classification::ConditionHolds
        } else {
            Classification::Leaky
        },
        gamma_estimate: stats.gamma,
        gamma_stderr: stats.stderr.gamma,
        gamma_samples,
        subsampled,
        per_pair_table: table,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    /// Classical stream cipher: no physical measurement to attack.
    ConventionalStream,
    /// Basis and key streams share one secret.
    Y00Whole,
    /// Basis and key streams have separate secrets.
    Y00Divided,
}

/// Secret entropy left after the measurement-only attack has run to
/// completion.
pub fn remaining_entropy(protocol: Protocol, sigma_total: f64, sigma_phi: f64) -> Result<f64> {
    if !(0.0..=sigma_total).contains(&sigma_phi) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= sigma_phi <= sigma_total, got {sigma_phi} and {sigma_total}"
        )));
    }
    Ok(match protocol {
        Protocol::ConventionalStream => sigma_total,
        Protocol::Y00Whole => 0.0,
        Protocol::Y00Divided => sigma_total - sigma_phi,
    })
}
