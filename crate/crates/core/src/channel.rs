//! Transmission over the heterodyne channel and the legitimate / blind
//! decoders.

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::keystream::Secret;
use crate::par;
use crate::rng::{sample_heterodyne, tags, Amplitude, RandomStream};
use serde::{Deserialize, Serialize};
use std::io::Write;

const SYMBOL_LABEL: u64 = 1;
const NOISE_LABEL: u64 = 2;
const GUESS_LABEL: u64 = 3;

/// Heterodyne outcomes for one transmission.
///
/// Attacks only ever see [`MeasurementBatch::measurements`]; the ciphertext
/// symbols are kept for the legitimate receiver's error accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch {
    z: Vec<Amplitude>,
    ciphertext: Option<Vec<usize>>,
    pub seed: u64,
    pub secret_id: String,
}

impl MeasurementBatch {
    pub fn from_measurements(z: Vec<Amplitude>, seed: u64, secret_id: impl Into<String>) -> Self {
        Self {
            z,
            ciphertext: None,
            seed,
            secret_id: secret_id.into(),
        }
    }

    pub fn with_ciphertext(mut self, symbols: Vec<usize>) -> Result<Self> {
        if symbols.len() != self.z.len() {
            return Err(Error::LengthMismatch {
                left: self.z.len(),
                right: symbols.len(),
            });
        }
        self.ciphertext = Some(symbols);
        Ok(self)
    }

    pub fn measurements(&self) -> &[Amplitude] {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub(crate) fn ciphertext(&self) -> Option<&[usize]> {
        self.ciphertext.as_deref()
    }

    /// A prefix of the first `n` measurements.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.z.len());
        Self {
            z: self.z[..n].to_vec(),
            ciphertext: self.ciphertext.as_ref().map(|c| c[..n].to_vec()),
            seed: self.seed,
            secret_id: self.secret_id.clone(),
        }
    }

    /// CSV `n,re,im` with one-based `n`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "re", "im"])?;
        for (n, z) in self.z.iter().enumerate() {
            w.write_record([(n + 1).to_string(), crate::fmt_f64(z.re), crate::fmt_f64(z.im)])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn metadata(&self, spec: &Constellation) -> BatchMetadata {
        BatchMetadata {
            kind: spec.kind().to_string(),
            bases: spec.bases(),
            symbols: spec.symbols(),
            distance: spec.distance(),
            amplitude: spec.amplitude(),
            measurements: self.z.len(),
            seed: self.seed,
            secret_id: self.secret_id.clone(),
        }
    }
}

/// JSON sidecar written next to a batch CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetadata {
    pub kind: String,
    pub bases: usize,
    pub symbols: usize,
    pub distance: f64,
    pub amplitude: f64,
    pub measurements: usize,
    pub seed: u64,
    pub secret_id: String,
}

/// Alice sends `len` uniformly drawn ciphertext symbols under `secret`'s
/// basis sequence; Eve records one heterodyne outcome per slot.
pub fn transmit(spec: &Constellation, secret: &Secret, len: usize, seed: u64) -> MeasurementBatch {
    let channel = RandomStream::new(seed, tags::CHANNEL);
    let symbols_rs = channel.derive(SYMBOL_LABEL);
    let noise_rs = channel.derive(NOISE_LABEL);
    let l = spec.symbols();
    let m = spec.bases();
    let pairs: Vec<(usize, Amplitude)> = par::map_indices(len, |n| {
        let ell = symbols_rs.index_below(n as u64, l);
        let basis = secret.basis_at(n, m);
        let alpha = spec.basis_points(basis)[ell];
        (ell, sample_heterodyne(alpha, &noise_rs, n as u64))
    });
    let (symbols, z): (Vec<usize>, Vec<Amplitude>) = pairs.into_iter().unzip();
    MeasurementBatch {
        z,
        ciphertext: Some(symbols),
        seed,
        secret_id: format!("{secret:?}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub symbols: Vec<usize>,
    /// `None` when the batch carries no ciphertext to compare against.
    pub symbol_errors: Option<usize>,
    pub bit_error_rate: Option<f64>,
}

impl DecodeOutcome {
    pub fn symbol_error_rate(&self) -> Option<f64> {
        let n = self.symbols.len();
        self.symbol_errors
            .map(|e| if n == 0 { 0.0 } else { e as f64 / n as f64 })
    }
}

/// Index of the nearest point, smallest index on ties.
#[inline]
pub fn nearest_symbol(points: &[Amplitude], z: Amplitude) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = (z - p).norm_sqr();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn score(spec: &Constellation, decoded: Vec<usize>, batch: &MeasurementBatch) -> DecodeOutcome {
    let Some(truth) = batch.ciphertext() else {
        return DecodeOutcome {
            symbols: decoded,
            symbol_errors: None,
            bit_error_rate: None,
        };
    };
    let bits = usize::BITS - (spec.symbols() - 1).leading_zeros();
    let mut errors = 0;
    let mut bit_errors = 0u64;
    for (d, t) in decoded.iter().zip(truth) {
        if d != t {
            errors += 1;
            bit_errors += (d ^ t).count_ones() as u64;
        }
    }
    let total_bits = decoded.len() as f64 * bits as f64;
    DecodeOutcome {
        symbols: decoded,
        symbol_errors: Some(errors),
        bit_error_rate: Some(if total_bits == 0.0 {
            0.0
        } else {
            bit_errors as f64 / total_bits
        }),
    }
}

/// Bob's decoder: nearest point within the basis he knows.
pub fn bob_decode(spec: &Constellation, bases: &[usize], batch: &MeasurementBatch) -> Result<DecodeOutcome> {
    if bases.len() != batch.len() {
        return Err(Error::LengthMismatch {
            left: bases.len(),
            right: batch.len(),
        });
    }
    if let Some(&b) = bases.iter().find(|&&b| b >= spec.bases()) {
        return Err(Error::IndexOutOfRange {
            what: "basis",
            index: b,
            limit: spec.bases(),
        });
    }
    let z = batch.measurements();
    let decoded = par::map_indices(z.len(), |n| nearest_symbol(spec.basis_points(bases[n]), z[n]));
    Ok(score(spec, decoded, batch))
}

/// Decoding with a uniformly random basis guess per slot. Returns the
/// guesses alongside the outcome.
pub fn eve_blind_decode(spec: &Constellation, batch: &MeasurementBatch, seed: u64) -> (Vec<usize>, DecodeOutcome) {
    let guess_rs = RandomStream::new(seed, tags::DECOY).derive(GUESS_LABEL);
    let guesses: Vec<usize> = (0..batch.len())
        .map(|n| guess_rs.index_below(n as u64, spec.bases()))
        .collect();
    let z = batch.measurements();
    let decoded = par::map_indices(z.len(), |n| nearest_symbol(spec.basis_points(guesses[n]), z[n]));
    (guesses, score(spec, decoded, batch))
}
