//! Coherent-state constellations: the map from (ciphertext symbol, basis)
//! to a complex amplitude.
//!
//! Indices are zero-based in memory (`ell` in `0..L`, `m` in `0..M`). Files
//! written by this crate use one-based indices.

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{is_finite, Amplitude};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstellationKind {
    /// Phase-modulated: `2M` points on a circle, antipodal pairs per basis.
    P,
    /// Lattice: a coarse symbol lattice rigidly shifted per basis.
    N,
    /// Two states selected by `symbol XOR basis`.
    Toy,
    /// `2^J` states selected by the bitwise `symbol XOR basis`.
    ToyQam,
    /// Explicit `L x M` table.
    Custom,
}

impl std::fmt::Display for ConstellationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConstellationKind::P => "P",
            ConstellationKind::N => "N",
            ConstellationKind::Toy => "Toy",
            ConstellationKind::ToyQam => "ToyQam",
            ConstellationKind::Custom => "Custom",
        };
        f.write_str(s)
    }
}

/// An immutable constellation with its point table precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    kind: ConstellationKind,
    bases: usize,
    symbols: usize,
    distance: f64,
    amplitude: f64,
    /// Row `m` holds the `L` points of basis `m`.
    points: Vec<Amplitude>,
}

fn perfect_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

impl Constellation {
    /// P-type with `M` bases. `distance` is the separation of the two
    /// antipodal points of one basis, so the circle radius is `distance / 2`.
    /// Bit labels alternate around the ring (for odd `M`), so every point has
    /// neighbours carrying the other bit value.
    pub fn p_type(bases: usize, distance: f64) -> Result<Self> {
        if bases < 2 {
            return Err(Error::Constellation(format!("P-type needs M >= 2, got {bases}")));
        }
        check_positive(distance)?;
        let amplitude = distance / 2.0;
        let mut points = Vec::with_capacity(2 * bases);
        for m in 0..bases {
            for ell in 0..2 {
                let theta = PI * m as f64 / bases as f64 + PI * (ell ^ (m & 1)) as f64;
                points.push(Amplitude::from_polar(amplitude, theta));
            }
        }
        Ok(Self {
            kind: ConstellationKind::P,
            bases,
            symbols: 2,
            distance,
            amplitude,
            points,
        })
    }

    /// N-type: `sqrt(L) x sqrt(L)` coarse lattice of spacing `distance`,
    /// centred on the origin, shifted by one of `sqrt(M) x sqrt(M)` offsets
    /// of step `distance / sqrt(M)`. Basis 0 has zero shift.
    pub fn n_type(bases: usize, symbols: usize, distance: f64) -> Result<Self> {
        let (Some(sl), Some(sm)) = (perfect_sqrt(symbols), perfect_sqrt(bases)) else {
            return Err(Error::Constellation(format!(
                "N-type needs square L and M, got L={symbols}, M={bases}"
            )));
        };
        if bases < 2 || symbols < 2 {
            return Err(Error::Constellation("N-type needs M >= 4 and L >= 4".into()));
        }
        check_positive(distance)?;
        let half = sl as f64 / 2.0;
        let step = distance / sm as f64;
        let mut points = Vec::with_capacity(symbols * bases);
        for m in 0..bases {
            let (u, v) = (m / sm, m % sm);
            let shift = Amplitude::new(u as f64 * step, v as f64 * step);
            for ell in 0..symbols {
                let (i, j) = (ell / sl, ell % sl);
                let coarse = Amplitude::new((i as f64 + 0.5 - half) * distance, (j as f64 + 0.5 - half) * distance);
                points.push(coarse + shift);
            }
        }
        Ok(Self {
            kind: ConstellationKind::N,
            bases,
            symbols,
            distance,
            amplitude: points.iter().map(|p| p.norm()).fold(0.0, f64::max),
            points,
        })
    }

    /// Toy protocol: `alpha(ell, m) = +A` when `ell XOR m = 1`, else `-A`.
    pub fn toy(amplitude: f64) -> Result<Self> {
        check_positive(amplitude)?;
        let mut points = Vec::with_capacity(4);
        for m in 0..2usize {
            for ell in 0..2usize {
                let sign = if ell ^ m == 1 { 1.0 } else { -1.0 };
                points.push(Amplitude::new(sign * amplitude, 0.0));
            }
        }
        Ok(Self {
            kind: ConstellationKind::Toy,
            bases: 2,
            symbols: 2,
            distance: 2.0 * amplitude,
            amplitude,
            points,
        })
    }

    /// Toy protocol over `J`-bit words: `L = M = 2^J` and the state is the
    /// QAM point of `xi = ell XOR m` on a centred rectangular grid of spacing
    /// `distance`.
    pub fn toy_qam(bits: u32, distance: f64) -> Result<Self> {
        if !(1..=12).contains(&bits) {
            return Err(Error::Constellation(format!("ToyQam needs 1 <= J <= 12, got {bits}")));
        }
        check_positive(distance)?;
        let size = 1usize << bits;
        let cols = 1usize << bits.div_ceil(2);
        let rows = size / cols;
        let grid = |xi: usize| {
            let (c, r) = (xi % cols, xi / cols);
            Amplitude::new(
                (c as f64 + 0.5 - cols as f64 / 2.0) * distance,
                (r as f64 + 0.5 - rows as f64 / 2.0) * distance,
            )
        };
        let mut points = Vec::with_capacity(size * size);
        for m in 0..size {
            for ell in 0..size {
                points.push(grid(ell ^ m));
            }
        }
        Ok(Self {
            kind: ConstellationKind::ToyQam,
            bases: size,
            symbols: size,
            distance,
            amplitude: points.iter().map(|p| p.norm()).fold(0.0, f64::max),
            points,
        })
    }

    /// Explicit table; `table[m][ell]` is the point of symbol `ell` in basis `m`.
    pub fn custom(table: Vec<Vec<Amplitude>>) -> Result<Self> {
        let bases = table.len();
        let symbols = table.first().map_or(0, Vec::len);
        if bases < 2 || symbols < 2 {
            return Err(Error::Constellation(format!(
                "custom table needs M >= 2 and L >= 2, got M={bases}, L={symbols}"
            )));
        }
        if let Some(m) = table.iter().position(|row| row.len() != symbols) {
            return Err(Error::Constellation(format!(
                "basis {} has {} entries, expected {symbols}",
                m + 1,
                table[m].len()
            )));
        }
        let points: Vec<Amplitude> = table.into_iter().flatten().collect();
        if points.iter().any(|p| !is_finite(*p)) {
            return Err(Error::Constellation("custom table has a non-finite entry".into()));
        }
        let mut c = Self {
            kind: ConstellationKind::Custom,
            bases,
            symbols,
            distance: 0.0,
            amplitude: points.iter().map(|p| p.norm()).fold(0.0, f64::max),
            points,
        };
        c.distance = c.min_same_basis_distance();
        Ok(c)
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    /// `M`, the number of bases.
    pub fn bases(&self) -> usize {
        self.bases
    }

    /// `L`, the ciphertext alphabet size.
    pub fn symbols(&self) -> usize {
        self.symbols
    }

    /// Design distance `d`.
    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn map_point(&self, ell: usize, m: usize) -> Result<Amplitude> {
        if ell >= self.symbols {
            return Err(Error::IndexOutOfRange {
                what: "symbol",
                index: ell,
                limit: self.symbols,
            });
        }
        if m >= self.bases {
            return Err(Error::IndexOutOfRange {
                what: "basis",
                index: m,
                limit: self.bases,
            });
        }
        Ok(self.points[m * self.symbols + ell])
    }

    /// The `L` points of basis `m`. Panics if `m` is out of range.
    #[inline]
    pub fn basis_points(&self, m: usize) -> &[Amplitude] {
        &self.points[m * self.symbols..(m + 1) * self.symbols]
    }

    /// All `L * M` points, basis-major.
    pub fn points(&self) -> &[Amplitude] {
        &self.points
    }

    /// The same constellation rigidly translated by `offset`, as a custom table.
    pub fn translated(&self, offset: Amplitude) -> Result<Self> {
        Self::custom(
            (0..self.bases)
                .map(|m| self.basis_points(m).iter().map(|p| p + offset).collect())
                .collect(),
        )
    }

    fn min_same_basis_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for m in 0..self.bases {
            let pts = self.basis_points(m);
            for (i, a) in pts.iter().enumerate() {
                for b in &pts[i + 1..] {
                    best = best.min((a - b).norm());
                }
            }
        }
        best
    }

    /// Bob's correctness condition: every basis separates its symbols by
    /// more than `threshold`.
    pub fn check_correctness(&self, threshold: f64) -> CorrectnessReport {
        let min = self.min_same_basis_distance();
        CorrectnessReport {
            passes: min > threshold,
            min_same_basis_distance: min,
        }
    }

    /// Evaluates the hiding conditions at closeness threshold `epsilon`.
    pub fn check_hiding(&self, epsilon: f64) -> Result<HidingReport> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
        }
        let (l, m_count) = (self.symbols, self.bases);
        // counts[(ell * M + m) * L + ell2] = #{m2 : |alpha(ell,m) - alpha(ell2,m2)| <= eps}
        let counts: Vec<u32> = par::map_indices(l * m_count, |k| {
            let (ell, m) = (k / m_count, k % m_count);
            let a = self.points[m * l + ell];
            (0..l)
                .map(|ell2| {
                    (0..m_count)
                        .filter(|&m2| (a - self.points[m2 * l + ell2]).norm() <= epsilon)
                        .count() as u32
                })
                .collect::<Vec<u32>>()
        })
        .into_iter()
        .flatten()
        .collect();

        let hides_every_symbol = counts.iter().all(|&c| c > 0);
        let witnessed = (0..l * m_count)
            .filter(|&k| {
                let ell = k / m_count;
                (0..l).any(|ell2| ell2 != ell && counts[k * l + ell2] > 0)
            })
            .count();
        let total = l * m_count;
        let max = counts.iter().copied().max().unwrap_or(0);
        let min = counts.iter().copied().min().unwrap_or(0);
        let uniformity_spread = if min == 0 {
            f64::INFINITY
        } else {
            max as f64 / min as f64
        };
        Ok(HidingReport {
            epsilon,
            hides_every_symbol,
            neighbour_counts: counts,
            uniformity_spread,
            hides_some_symbol: witnessed == total,
            some_symbol_fraction: witnessed as f64 / total as f64,
        })
    }

    /// Reads a custom table from CSV with header `ell,m,re,im` (one-based).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            ell: usize,
            m: usize,
            re: f64,
            im: f64,
        }
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(reader).deserialize::<Row>() {
            rows.push(rec?);
        }
        let l = rows.iter().map(|r| r.ell).max().unwrap_or(0);
        let m = rows.iter().map(|r| r.m).max().unwrap_or(0);
        let mut table: Vec<Vec<Option<Amplitude>>> = vec![vec![None; l]; m];
        for r in &rows {
            if r.ell == 0 || r.m == 0 {
                return Err(Error::Constellation("indices in the table are one-based".into()));
            }
            let slot = &mut table[r.m - 1][r.ell - 1];
            if slot.is_some() {
                return Err(Error::Constellation(format!(
                    "duplicate entry ell={}, m={}",
                    r.ell, r.m
                )));
            }
            *slot = Some(Amplitude::new(r.re, r.im));
        }
        let table = table
            .into_iter()
            .enumerate()
            .map(|(mi, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(li, p)| {
                        p.ok_or_else(|| Error::Constellation(format!("missing entry ell={}, m={}", li + 1, mi + 1)))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::custom(table)
    }

    /// Writes the point table as CSV `ell,m,re,im` (one-based).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["ell", "m", "re", "im"])?;
        for m in 0..self.bases {
            for (ell, p) in self.basis_points(m).iter().enumerate() {
                w.write_record([
                    (ell + 1).to_string(),
                    (m + 1).to_string(),
                    crate::fmt_f64(p.re),
                    crate::fmt_f64(p.im),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn check_positive(x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Constellation(format!(
            "distance/amplitude must be positive, got {x}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectnessReport {
    pub passes: bool,
    pub min_same_basis_distance: f64,
}

/// Result of [`Constellation::check_hiding`].
///
/// `neighbour_counts` is indexed `(ell * M + m) * L + ell2` and holds the number
/// of bases `m2` that place `ell2` within `epsilon` of `alpha(ell, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HidingReport {
    pub epsilon: f64,
    /// Every symbol is reachable from every point through some basis.
    pub hides_every_symbol: bool,
    pub neighbour_counts: Vec<u32>,
    /// Max over min of `neighbour_counts`; infinite when some count is zero.
    pub uniformity_spread: f64,
    /// Every point has a different symbol within `epsilon` in some basis.
    pub hides_some_symbol: bool,
    /// Fraction of points that have such a witness.
    pub some_symbol_fraction: f64,
}
