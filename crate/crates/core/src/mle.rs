//! Maximum-likelihood recovery of the basis secret.
//!
//! Each heterodyne outcome is scored under the basis a candidate secret
//! predicts, using the `L`-component mixture that marginalises the unknown
//! ciphertext symbol. Candidates are ranked by total negative
//! log-likelihood; the Monte Carlo statistics below predict how quickly the
//! true secret separates from the rest.

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::keystream::Candidate;
use crate::par;
use crate::rng::{tags, Amplitude, RandomStream};
use std::f64::consts::PI;
use std::io::Write;

/// Lower clamp on `ln p(z|b)`; the smallest normal double is about `e^-708`
/// and subnormals end near `e^-745`.
pub const LN_FLOOR: f64 = -745.0;

/// Smallest Monte Carlo budget `clt_params` accepts.
pub const MIN_MC_SAMPLES: usize = 10_000;

/// `ln p(z|b_m)` for the equal-weight mixture over the basis's symbols,
/// clamped at [`LN_FLOOR`].
///
/// Terms are summed in sorted order, so the result does not depend on the
/// order of `points`.
#[inline]
pub fn log_mixture_likelihood(points: &[Amplitude], z: Amplitude) -> f64 {
    const STACK: usize = 32;
    let mut stack = [0.0f64; STACK];
    let mut heap = Vec::new();
    let exps: &mut [f64] = if points.len() <= STACK {
        &mut stack[..points.len()]
    } else {
        heap.resize(points.len(), 0.0);
        &mut heap
    };
    let mut best = f64::NEG_INFINITY;
    for (e, p) in exps.iter_mut().zip(points) {
        *e = -(z - p).norm_sqr();
        best = best.max(*e);
    }
    for e in exps.iter_mut() {
        *e = (*e - best).exp();
    }
    exps.sort_unstable_by(f64::total_cmp);
    let acc: f64 = exps.iter().sum();
    let v = best + acc.ln() - (PI * points.len() as f64).ln();
    v.max(LN_FLOOR)
}

/// `p(z|b_m)` for basis `m` of `spec`.
pub fn mixture_likelihood(spec: &Constellation, z: Amplitude, m: usize) -> Result<f64> {
    if m >= spec.bases() {
        return Err(Error::IndexOutOfRange {
            what: "basis",
            index: m,
            limit: spec.bases(),
        });
    }
    Ok(log_mixture_likelihood(spec.basis_points(m), z).exp())
}

/// `ln p(z_n|b_m)` for every measurement and basis.
#[derive(Debug, Clone)]
pub struct LikelihoodTable {
    bases: usize,
    values: Vec<f64>,
    floor_hits: usize,
}

impl LikelihoodTable {
    pub fn build(spec: &Constellation, measurements: &[Amplitude]) -> Self {
        let m_count = spec.bases();
        let rows: Vec<Vec<f64>> = par::map_slice(measurements, |&z| {
            (0..m_count)
                .map(|m| log_mixture_likelihood(spec.basis_points(m), z))
                .collect()
        });
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        let floor_hits = values.iter().filter(|&&v| v <= LN_FLOOR).count();
        Self {
            bases: m_count,
            values,
            floor_hits,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.bases
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entries clamped at the floor.
    pub fn floor_hits(&self) -> usize {
        self.floor_hits
    }

    #[inline]
    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.values[n * self.bases + m]
    }

    /// NLL of one candidate over the first `len` measurements.
    pub fn candidate_nll(&self, candidate: &Candidate, len: usize) -> f64 {
        let stream = candidate.secret.basis_stream();
        -(0..len)
            .map(|n| self.get(n, stream.index_below(n as u64, self.bases)))
            .sum::<f64>()
    }

    /// Running NLL of one candidate sampled at each checkpoint (ascending,
    /// each at most `len()`).
    pub fn candidate_nll_at(&self, candidate: &Candidate, checkpoints: &[usize]) -> Vec<f64> {
        let stream = candidate.secret.basis_stream();
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut acc = 0.0;
        let mut n = 0;
        for &cp in checkpoints {
            while n < cp {
                acc -= self.get(n, stream.index_below(n as u64, self.bases));
                n += 1;
            }
            out.push(acc);
        }
        out
    }
}

/// `-sum_n ln p(z_n | b_{phi_n})` in nats.
pub fn nll(spec: &Constellation, measurements: &[Amplitude], bases: &[usize]) -> Result<f64> {
    if measurements.len() != bases.len() {
        return Err(Error::LengthMismatch {
            left: measurements.len(),
            right: bases.len(),
        });
    }
    if let Some(&b) = bases.iter().find(|&&b| b >= spec.bases()) {
        return Err(Error::IndexOutOfRange {
            what: "basis",
            index: b,
            limit: spec.bases(),
        });
    }
    Ok(-measurements
        .iter()
        .zip(bases)
        .map(|(&z, &m)| log_mixture_likelihood(spec.basis_points(m), z))
        .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    pub candidate_id: usize,
    pub nll: f64,
    /// One-based.
    pub rank: usize,
}

/// Sorts scores ascending by NLL, ties by candidate id, and assigns ranks.
pub fn rank_scores(mut scores: Vec<(usize, f64)>) -> Vec<CandidateScore> {
    scores.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scores
        .into_iter()
        .enumerate()
        .map(|(i, (candidate_id, nll))| CandidateScore {
            candidate_id,
            nll,
            rank: i + 1,
        })
        .collect()
}

pub fn rank_candidates(
    spec: &Constellation,
    measurements: &[Amplitude],
    candidates: &[Candidate],
) -> Result<Vec<CandidateScore>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("candidate list is empty".into()));
    }
    let table = LikelihoodTable::build(spec, measurements);
    Ok(rank_with_table(&table, candidates, measurements.len()))
}

/// Ranking over the first `len` rows of a prebuilt table.
pub fn rank_with_table(table: &LikelihoodTable, candidates: &[Candidate], len: usize) -> Vec<CandidateScore> {
    let scores = par::map_slice(candidates, |c| (c.id, table.candidate_nll(c, len)));
    rank_scores(scores)
}

pub fn write_ranking_csv<W: Write>(ranking: &[CandidateScore], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "candidate_id", "nll"])?;
    for s in ranking {
        w.write_record([s.rank.to_string(), s.candidate_id.to_string(), crate::fmt_f64(s.nll)])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// NLL of the true candidate against the decoy band at one prefix length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub n: usize,
    pub nll_true: f64,
    pub nll_decoy_mean: f64,
    pub nll_decoy_min: f64,
    pub nll_decoy_max: f64,
}

/// Per-candidate running NLL at each checkpoint: `[candidate][checkpoint]`.
pub fn nll_paths(table: &LikelihoodTable, candidates: &[Candidate], checkpoints: &[usize]) -> Vec<Vec<f64>> {
    par::map_slice(candidates, |c| table.candidate_nll_at(c, checkpoints))
}

/// Summarises [`nll_paths`] output into trace rows; `true_index` is the
/// position of the true secret in `paths`.
pub fn trace_rows(paths: &[Vec<f64>], true_index: usize, checkpoints: &[usize]) -> Vec<TraceRow> {
    checkpoints
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let decoys = paths
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != true_index)
                .map(|(_, p)| p[k]);
            let (mut sum, mut count, mut lo, mut hi) = (0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY);
            for v in decoys {
                sum += v;
                count += 1;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            TraceRow {
                n,
                nll_true: paths[true_index][k],
                nll_decoy_mean: if count == 0 { f64::NAN } else { sum / count as f64 },
                nll_decoy_min: lo,
                nll_decoy_max: hi,
            }
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["N", "nll_true", "nll_decoy_mean", "nll_decoy_min", "nll_decoy_max"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            crate::fmt_f64(r.nll_true),
            crate::fmt_f64(r.nll_decoy_mean),
            crate::fmt_f64(r.nll_decoy_min),
            crate::fmt_f64(r.nll_decoy_max),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Equal-width histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bin width `2 * IQR * n^(-1/3)`; a single bin when the IQR vanishes.
    pub fn freedman_diaconis(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                lo: 0.0,
                width: 1.0,
                counts: Vec::new(),
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
        let (width, bins) = if width > 0.0 && hi > lo {
            (width, (((hi - lo) / width).floor() as usize + 1).min(10_000))
        } else {
            ((hi - lo).max(1.0), 1)
        };
        let mut counts = vec![0usize; bins];
        for v in &sorted {
            let k = (((v - lo) / width).floor() as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { lo, width, counts }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        for (k, c) in self.counts.iter().enumerate() {
            let a = self.lo + k as f64 * self.width;
            w.write_record([crate::fmt_f64(a), crate::fmt_f64(a + self.width), c.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Standard errors of the Monte Carlo estimates in [`AttackStatistics`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StdErrors {
    pub a_s: f64,
    pub var_s: f64,
    pub a_sprime: f64,
    pub var_sprime: f64,
    /// Of the paired difference `a_sprime - a_s`.
    pub gap: f64,
    pub gamma: f64,
}

/// Per-measurement NLL statistics for the true and a wrong candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackStatistics {
    pub a_s: f64,
    pub var_s: f64,
    pub a_sprime: f64,
    pub var_sprime: f64,
    /// `(a_s - a_sprime)^2 / (2 var_sprime)`.
    pub gamma: f64,
    /// `sigma / gamma`; infinite when `gamma` is zero.
    pub n_th: f64,
    pub sigma_nats: f64,
    pub mc_samples: usize,
    pub stderr: StdErrors,
}

impl AttackStatistics {
    /// Builds the derived fields from the four moments.
    pub fn from_moments(a_s: f64, var_s: f64, a_sprime: f64, var_sprime: f64, sigma_nats: f64) -> Self {
        let gamma = gamma_of(a_s, a_sprime, var_sprime);
        Self {
            a_s,
            var_s,
            a_sprime,
            var_sprime,
            gamma,
            n_th: if gamma > 0.0 { sigma_nats / gamma } else { f64::INFINITY },
            sigma_nats,
            mc_samples: 0,
            stderr: StdErrors::default(),
        }
    }

    pub fn gap(&self) -> f64 {
        self.a_sprime - self.a_s
    }
}

fn gamma_of(a_s: f64, a_sprime: f64, var_sprime: f64) -> f64 {
    (a_s - a_sprime).powi(2) / (2.0 * var_sprime)
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    x: [f64; 4],
    y: [f64; 4],
    xy: f64,
    xy2: f64,
    /// Sums of `y - x` and its square.
    diff: [f64; 2],
}

impl Moments {
    fn push(&mut self, x: f64, y: f64) {
        self.count += 1.0;
        let (mut px, mut py) = (1.0, 1.0);
        for k in 0..4 {
            px *= x;
            py *= y;
            self.x[k] += px;
            self.y[k] += py;
        }
        self.xy += x * y;
        self.xy2 += x * y * y;
        let d = y - x;
        self.diff[0] += d;
        self.diff[1] += d * d;
    }

    fn merge(&mut self, o: &Moments) {
        self.count += o.count;
        for k in 0..4 {
            self.x[k] += o.x[k];
            self.y[k] += o.y[k];
        }
        self.xy += o.xy;
        self.xy2 += o.xy2;
        self.diff[0] += o.diff[0];
        self.diff[1] += o.diff[1];
    }
}

fn central4(raw: &[f64; 4]) -> f64 {
    let [m1, m2, m3, m4] = *raw;
    m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4)
}

/// Monte Carlo estimate of the NLL statistics of `spec`.
///
/// Each sample draws a basis `m`, a symbol and heterodyne noise (an exact
/// draw from the basis mixture), plus an independent basis `m'`. The
/// sample contributes `-ln p(z|m)` to the true-candidate moments and
/// `-ln p(z|m')` to the wrong-candidate moments, which are unbiased for the
/// double average over `(m, m')`.
pub fn clt_params(spec: &Constellation, mc_samples: usize, seed: u64, sigma_nats: f64) -> Result<AttackStatistics> {
    if mc_samples < MIN_MC_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "mc_samples = {mc_samples} is below the minimum of {MIN_MC_SAMPLES}"
        )));
    }
    let mc = RandomStream::new(seed, tags::MONTE_CARLO);
    let (basis_rs, symbol_rs, other_rs, noise_rs) = (mc.derive(1), mc.derive(2), mc.derive(3), mc.derive(4));
    let (m_count, l) = (spec.bases(), spec.symbols());

    let parts = par::map_chunks(mc_samples, par::CHUNK, |range| {
        let mut acc = Moments::default();
        for i in range {
            let i = i as u64;
            let m = basis_rs.index_below(i, m_count);
            let ell = symbol_rs.index_below(i, l);
            let m2 = other_rs.index_below(i, m_count);
            let z = spec.basis_points(m)[ell] + noise_rs.complex_normal(i);
            let x = -log_mixture_likelihood(spec.basis_points(m), z);
            let y = if m2 == m {
                x
            } else {
                -log_mixture_likelihood(spec.basis_points(m2), z)
            };
            acc.push(x, y);
        }
        acc
    });
    let mut total = Moments::default();
    for p in &parts {
        total.merge(p);
    }

    let s = total.count;
    let ex: [f64; 4] = total.x.map(|v| v / s);
    let ey: [f64; 4] = total.y.map(|v| v / s);
    let (exy, exy2) = (total.xy / s, total.xy2 / s);

    let a_s = ex[0];
    let var_s = ex[1] - a_s * a_s;
    let a_sprime = ey[0];
    let var_sprime = ey[1] - a_sprime * a_sprime;
    let mut stats = AttackStatistics::from_moments(a_s, var_s, a_sprime, var_sprime, sigma_nats);
    stats.mc_samples = mc_samples;

    // Delta method for gamma as a function of (E x, E y, E y^2).
    let d = a_s - a_sprime;
    let v = var_sprime;
    let grad = if v > 0.0 {
        [d / v, -d / v + d * d * a_sprime / (v * v), -d * d / (2.0 * v * v)]
    } else {
        [0.0; 3]
    };
    let cov = [
        [var_s, exy - a_s * a_sprime, exy2 - a_s * ey[1]],
        [exy - a_s * a_sprime, var_sprime, ey[2] - a_sprime * ey[1]],
        [exy2 - a_s * ey[1], ey[2] - a_sprime * ey[1], ey[3] - ey[1] * ey[1]],
    ];
    let mut gamma_var = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            gamma_var += grad[i] * cov[i][j] * grad[j];
        }
    }
    let mean_diff = total.diff[0] / s;
    let gap_var = (total.diff[1] / s - mean_diff * mean_diff).max(0.0);
    stats.stderr = StdErrors {
        a_s: (var_s.max(0.0) / s).sqrt(),
        var_s: ((central4(&ex) - var_s * var_s).max(0.0) / s).sqrt(),
        a_sprime: (var_sprime.max(0.0) / s).sqrt(),
        var_sprime: ((central4(&ey) - var_sprime * var_sprime).max(0.0) / s).sqrt(),
        gap: (gap_var / s).sqrt(),
        gamma: (gamma_var.max(0.0) / s).sqrt(),
    };
    Ok(stats)
}

/// KL divergence between the CLT Gaussians of the true and a wrong
/// candidate's NLL after `n` measurements.
pub fn kl_gaussian_pair(stats: &AttackStatistics, n: usize) -> Result<f64> {
    if !(stats.var_s > 0.0 && stats.var_sprime > 0.0) {
        return Err(Error::Undefined("KL divergence needs positive variances"));
    }
    let lead = n as f64 * (stats.a_s - stats.a_sprime).powi(2);
    Ok((lead + stats.var_s) / (2.0 * stats.var_sprime) + 0.5 * (stats.var_sprime / stats.var_s).ln() - 0.5)
}

/// `exp(-n * gamma)`.
pub fn p_err(stats: &AttackStatistics, n: usize) -> f64 {
    (-(n as f64) * stats.gamma).exp()
}

/// `sigma / gamma`, the measurement budget for singling out one of
/// `e^sigma` candidates.
pub fn n_threshold(gamma: f64, sigma_nats: f64) -> Result<f64> {
    if gamma > 0.0 {
        Ok(sigma_nats / gamma)
    } else {
        Err(Error::Undefined(
            "gamma is zero: the basis-conditional distributions coincide",
        ))
    }
}

/// Column order of the statistics CSV.
pub const STATS_HEADER: [&str; 16] = [
    "kind",
    "M",
    "L",
    "d",
    "a_s",
    "var_s",
    "a_sprime",
    "var_sprime",
    "gamma",
    "n_th",
    "mc_samples",
    "a_s_se",
    "var_s_se",
    "a_sprime_se",
    "var_sprime_se",
    "gamma_se",
];

pub fn stats_record(spec: &Constellation, s: &AttackStatistics) -> Vec<String> {
    let f = crate::fmt_f64;
    vec![
        spec.kind().to_string(),
        spec.bases().to_string(),
        spec.symbols().to_string(),
        f(spec.distance()),
        f(s.a_s),
        f(s.var_s),
        f(s.a_sprime),
        f(s.var_sprime),
        f(s.gamma),
        f(s.n_th),
        s.mc_samples.to_string(),
        f(s.stderr.a_s),
        f(s.stderr.var_s),
        f(s.stderr.a_sprime),
        f(s.stderr.var_sprime),
        f(s.stderr.gamma),
    ]
}

pub fn write_stats_csv<W: Write>(rows: &[(Constellation, AttackStatistics)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(STATS_HEADER)?;
    for (spec, s) in rows {
        w.write_record(stats_record(spec, s))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
