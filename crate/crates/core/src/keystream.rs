//! Pre-shared secrets, the basis and key streams they seed, XOR
//! encryption, and the known-plaintext narrowing baseline.

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{tags, RandomStream};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// How the basis and key streams are derived from the shared secret.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Secret {
    /// One word seeds both streams under distinct domain tags.
    Whole(u64),
    /// Independent words for the key stream and the basis stream.
    Divided { key: u64, basis: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecretMode {
    Whole,
    Divided,
}

impl Secret {
    pub fn mode(&self) -> SecretMode {
        match self {
            Secret::Whole(_) => SecretMode::Whole,
            Secret::Divided { .. } => SecretMode::Divided,
        }
    }

    pub fn basis_stream(&self) -> RandomStream {
        match *self {
            Secret::Whole(s) | Secret::Divided { basis: s, .. } => RandomStream::new(s, tags::BASIS),
        }
    }

    pub fn key_stream(&self) -> RandomStream {
        match *self {
            Secret::Whole(s) | Secret::Divided { key: s, .. } => RandomStream::new(s, tags::KEY),
        }
    }

    /// Basis index at position `n` (zero-based).
    #[inline]
    pub fn basis_at(&self, n: usize, bases: usize) -> usize {
        self.basis_stream().index_below(n as u64, bases)
    }

    #[inline]
    pub fn key_bit_at(&self, n: usize) -> u8 {
        (self.key_stream().u64_at(n as u64) & 1) as u8
    }
}

/// Basis sequence `phi_1..phi_N` with zero-based entries in `0..M`.
pub fn basis_sequence(secret: &Secret, len: usize, bases: usize) -> Vec<usize> {
    assert!(bases >= 2, "need at least two bases");
    let s = secret.basis_stream();
    (0..len).map(|n| s.index_below(n as u64, bases)).collect()
}

pub fn key_bits(secret: &Secret, len: usize) -> Vec<u8> {
    (0..len).map(|n| secret.key_bit_at(n)).collect()
}

pub fn encrypt(plain: &[u8], key: &[u8]) -> Result<Vec<u8>> {
    if plain.len() != key.len() {
        return Err(Error::LengthMismatch {
            left: plain.len(),
            right: key.len(),
        });
    }
    Ok(plain.iter().zip(key).map(|(x, k)| x ^ k).collect())
}

pub fn decrypt(cipher: &[u8], key: &[u8]) -> Result<Vec<u8>> {
    encrypt(cipher, key)
}

/// A candidate secret with a stable identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub id: usize,
    pub secret: Secret,
}

/// The candidate space an attacker searches, with the true secret's position.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub candidates: Vec<Candidate>,
    pub true_index: usize,
}

impl Ensemble {
    /// True secret plus `decoys` random secrets of the same mode, in a
    /// seeded order. Candidate ids are positions in that order.
    pub fn with_decoys(mode: SecretMode, decoys: usize, seed: u64) -> Self {
        let stream = RandomStream::new(seed, tags::DECOY);
        let draw = |i: u64| match mode {
            SecretMode::Whole => Secret::Whole(stream.u64_at(2 * i)),
            SecretMode::Divided => Secret::Divided {
                key: stream.u64_at(2 * i),
                basis: stream.u64_at(2 * i + 1),
            },
        };
        let total = decoys + 1;
        let true_index = stream.derive(0x7E).index_below(0, total);
        let candidates = (0..total)
            .map(|id| Candidate {
                id,
                secret: draw(id as u64),
            })
            .collect();
        Self { candidates, true_index }
    }

    /// All `2^bits` whole secrets `base XOR i`; the true one is picked by `seed`.
    pub fn enumerated(bits: u32, base: u64, seed: u64) -> Self {
        assert!(bits <= 24, "enumerated ensembles are limited to 2^24");
        let total = 1usize << bits;
        let candidates = (0..total)
            .map(|i| Candidate {
                id: i,
                secret: Secret::Whole(base ^ i as u64),
            })
            .collect();
        let true_index = RandomStream::new(seed, tags::DECOY).index_below(1, total);
        Self { candidates, true_index }
    }

    /// Divided secrets over `2^key_bits x 2^basis_bits` enumerated words.
    pub fn enumerated_divided(key_bits: u32, basis_bits: u32, base: u64, seed: u64) -> Self {
        assert!(key_bits + basis_bits <= 24);
        let (nk, nb) = (1usize << key_bits, 1usize << basis_bits);
        let stream = RandomStream::new(seed, tags::DECOY);
        let basis_base = crate::rng::mix64(base ^ 0xB0B0);
        let candidates = (0..nk * nb)
            .map(|i| Candidate {
                id: i,
                secret: Secret::Divided {
                    key: base ^ (i % nk) as u64,
                    basis: basis_base ^ (i / nk) as u64,
                },
            })
            .collect();
        Self {
            candidates,
            true_index: stream.index_below(2, nk * nb),
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn true_secret(&self) -> Secret {
        self.candidates[self.true_index].secret
    }

    /// `ln |S|` in nats.
    pub fn entropy_nats(&self) -> f64 {
        (self.len() as f64).ln()
    }

    /// CSV `candidate_id,mode,s,s_k,s_phi` with hex words; unused columns are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["candidate_id", "mode", "s", "s_k", "s_phi"])?;
        for c in &self.candidates {
            let hex = |x: u64| format!("{x:016x}");
            let row = match c.secret {
                Secret::Whole(s) => [c.id.to_string(), "whole".into(), hex(s), String::new(), String::new()],
                Secret::Divided { key, basis } => {
                    [c.id.to_string(), "divided".into(), String::new(), hex(key), hex(basis)]
                }
            };
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads candidates back; `true_index` is not part of the file and is set to 0.
    pub fn read_csv<R: Read>(reader: R) -> Result<Vec<Candidate>> {
        let parse = |s: &str| {
            u64::from_str_radix(s, 16).map_err(|e| Error::InvalidArgument(format!("bad hex word {s:?}: {e}")))
        };
        let mut out = Vec::new();
        for rec in csv::Reader::from_reader(reader).records() {
            let rec = rec?;
            let id: usize = rec[0]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("bad candidate id: {e}")))?;
            let secret = match &rec[1] {
                "whole" => Secret::Whole(parse(&rec[2])?),
                "divided" => Secret::Divided {
                    key: parse(&rec[3])?,
                    basis: parse(&rec[4])?,
                },
                other => return Err(Error::InvalidArgument(format!("unknown secret mode {other:?}"))),
            };
            out.push(Candidate { id, secret });
        }
        Ok(out)
    }
}

/// Keeps the candidates whose key stream agrees with every observed
/// `(position, bit)` pair.
pub fn kpa_filter(candidates: &[Candidate], observed: &[(usize, u8)]) -> Vec<Candidate> {
    let keep = par::map_slice(candidates, |c| {
        observed.iter().all(|&(n, bit)| c.secret.key_bit_at(n) == bit)
    });
    candidates
        .iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(*c))
        .collect()
}

/// Number of consecutive known key bits (positions `0, 1, ...`) needed
/// before only one candidate remains, together with the survivor count.
pub fn kpa_bits_to_unique(candidates: &[Candidate], truth: &Secret, max_bits: usize) -> (usize, usize) {
    let mut survivors = candidates.to_vec();
    let mut used = 0;
    while survivors.len() > 1 && used < max_bits {
        let bit = truth.key_bit_at(used);
        survivors = kpa_filter(&survivors, &[(used, bit)]);
        used += 1;
    }
    (used, survivors.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_sequence_deterministic() {
        let s = Secret::Whole(0xABCDEF);
        assert_eq!(basis_sequence(&s, 100, 17), basis_sequence(&s, 100, 17));
        assert!(basis_sequence(&s, 1000, 17).iter().all(|&b| b < 17));
    }

    #[test]
    fn basis_frequencies_chi_square() {
        let s = Secret::Whole(2024);
        let n = 1_000_000;
        let mut counts = [0usize; 17];
        for b in basis_sequence(&s, n, 17) {
            counts[b] += 1;
        }
        let e = n as f64 / 17.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 39.25, "chi2 = {chi2}");
    }

    #[test]
    fn one_bit_change_decorrelates() {
        let n = 100_000;
        let a = basis_sequence(&Secret::Whole(0x1234), n, 17);
        let b = basis_sequence(&Secret::Whole(0x1235), n, 17);
        let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / n as f64;
        let p = 1.0 / 17.0;
        let tol = 4.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((agree - p).abs() < tol, "agreement {agree}");
    }

    #[test]
    fn key_bits_balanced() {
        let bits = key_bits(&Secret::Whole(9), 1_000_000);
        let mean = bits.iter().map(|&b| b as f64).sum::<f64>() / bits.len() as f64;
        assert!((mean - 0.5).abs() < 0.002);
        assert_eq!(bits, key_bits(&Secret::Whole(9), 1_000_000));
    }

    #[test]
    fn divided_streams_are_separated() {
        let a = Secret::Divided { key: 5, basis: 6 };
        let b = Secret::Divided { key: 5, basis: 7 };
        assert_eq!(key_bits(&a, 1000), key_bits(&b, 1000));
        assert_ne!(basis_sequence(&a, 1000, 8), basis_sequence(&b, 1000, 8));
    }

    #[test]
    fn whole_streams_uncorrelated() {
        let s = Secret::Whole(0xFEED);
        let n = 100_000;
        let bases: Vec<f64> = basis_sequence(&s, n, 2).into_iter().map(|b| b as f64).collect();
        let keys: Vec<f64> = key_bits(&s, n).into_iter().map(f64::from).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mb, mk) = (mean(&bases), mean(&keys));
        let cov = bases.iter().zip(&keys).map(|(b, k)| (b - mb) * (k - mk)).sum::<f64>() / n as f64;
        let sd = |v: &[f64], m: f64| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        let corr = cov / (sd(&bases, mb) * sd(&keys, mk));
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn xor_cases() {
        let x = vec![1, 0, 1, 1, 0];
        assert_eq!(encrypt(&x, &x).unwrap(), vec![0; 5]);
        assert_eq!(encrypt(&x, &[0; 5]).unwrap(), x);
        assert!(matches!(encrypt(&x, &[0; 4]), Err(Error::LengthMismatch { .. })));
        let s = RandomStream::new(1, 2);
        for case in 0..1000u64 {
            let x: Vec<u8> = (0..64).map(|i| (s.u64_at(case * 128 + i) & 1) as u8).collect();
            let k: Vec<u8> = (0..64).map(|i| (s.u64_at(case * 128 + 64 + i) & 1) as u8).collect();
            assert_eq!(decrypt(&encrypt(&x, &k).unwrap(), &k).unwrap(), x);
        }
    }

    #[test]
    fn kpa_no_observations_keeps_all() {
        let e = Ensemble::with_decoys(SecretMode::Whole, 50, 1);
        assert_eq!(kpa_filter(&e.candidates, &[]).len(), 51);
    }

    #[test]
    fn kpa_unique_after_twenty_bits() {
        let mut unique = 0;
        for trial in 0..100 {
            let e = Ensemble::with_decoys(SecretMode::Whole, 1000, trial);
            let truth = e.true_secret();
            let obs: Vec<(usize, u8)> = (0..20).map(|n| (n, truth.key_bit_at(n))).collect();
            let surv = kpa_filter(&e.candidates, &obs);
            assert!(surv.iter().any(|c| c.secret == truth));
            if surv.len() == 1 {
                unique += 1;
            }
        }
        assert!(unique >= 99, "{unique}");
    }

    #[test]
    fn kpa_sixteen_bits_on_two_to_sixteen() {
        let mut log_sum = 0.0;
        for trial in 0..100u64 {
            let e = Ensemble::enumerated(16, crate::rng::mix64(trial + 1), trial);
            let truth = e.true_secret();
            let obs: Vec<(usize, u8)> = (0..16).map(|n| (n, truth.key_bit_at(n))).collect();
            let count = kpa_filter(&e.candidates, &obs).len();
            assert!((1..=8).contains(&count), "trial {trial}: {count}");
            log_sum += (count as f64).ln();
        }
        let geo = (log_sum / 100.0).exp();
        assert!((0.5..=2.0).contains(&geo), "geometric mean {geo}");
    }

    #[test]
    fn ensemble_csv_round_trip() {
        let e = Ensemble::with_decoys(SecretMode::Divided, 5, 3);
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        assert_eq!(Ensemble::read_csv(buf.as_slice()).unwrap(), e.candidates);
    }
}
