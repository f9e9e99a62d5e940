//! Hard basis exclusion: a basis stays consistent with a measurement when
//! one of its points lies within radius `r`, and a candidate secret
//! survives while every basis it predicts stays consistent.

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::keystream::Candidate;
use crate::par;
use crate::rng::Amplitude;
use std::io::Write;

/// Membership mask of the consistent-basis set `B+(z)`.
pub fn consistent_mask(spec: &Constellation, z: Amplitude, r: f64) -> Vec<bool> {
    let r2 = r * r;
    (0..spec.bases())
        .map(|m| spec.basis_points(m).iter().any(|p| (z - p).norm_sqr() < r2))
        .collect()
}

/// Sorted basis indices with a point strictly within `r` of `z`.
pub fn consistent_bases(spec: &Constellation, z: Amplitude, r: f64) -> Result<Vec<usize>> {
    check_radius(r)?;
    Ok(consistent_mask(spec, z, r)
        .into_iter()
        .enumerate()
        .filter_map(|(m, ok)| ok.then_some(m))
        .collect())
}

/// `|B+(z)| / M`. An empty set excludes nothing and yields 1.
pub fn r_ratio(spec: &Constellation, z: Amplitude, r: f64) -> Result<f64> {
    check_radius(r)?;
    Ok(ratio_of(&consistent_mask(spec, z, r)))
}

fn ratio_of(mask: &[bool]) -> f64 {
    let k = mask.iter().filter(|&&b| b).count();
    if k == 0 {
        1.0
    } else {
        k as f64 / mask.len() as f64
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("radius must be > 0, got {r}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Window {
    pub fn square(center: Amplitude, half_side: f64) -> Self {
        Self {
            re_min: center.re - half_side,
            re_max: center.re + half_side,
            im_min: center.im - half_side,
            im_max: center.im + half_side,
        }
    }

    /// Smallest square around the origin containing every point plus `margin`.
    pub fn around(spec: &Constellation, margin: f64) -> Self {
        let reach = spec
            .points()
            .iter()
            .map(|p| p.re.abs().max(p.im.abs()))
            .fold(0.0, f64::max);
        Self::square(Amplitude::new(0.0, 0.0), reach + margin)
    }
}

/// `R(z)` sampled on a grid; cell centres at `min + (i + 1/2) * step`.
#[derive(Debug, Clone, PartialEq)]
pub struct RzGrid {
    pub cells: Vec<(Amplitude, f64)>,
}

impl RzGrid {
    pub fn mean(&self) -> f64 {
        self.cells.iter().map(|c| c.1).sum::<f64>() / self.cells.len().max(1) as f64
    }

    /// CSV `re,im,R`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["re", "im", "R"])?;
        for (z, r) in &self.cells {
            w.write_record([crate::fmt_f64(z.re), crate::fmt_f64(z.im), crate::fmt_f64(*r)])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn rz_map(spec: &Constellation, r: f64, window: Window, step: f64) -> Result<RzGrid> {
    check_radius(r)?;
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("grid step must be > 0, got {step}")));
    }
    let nx = ((window.re_max - window.re_min) / step).floor().max(0.0) as usize;
    let ny = ((window.im_max - window.im_min) / step).floor().max(0.0) as usize;
    let cells = par::map_indices(nx * ny, |k| {
        let (iy, ix) = (k / nx, k % nx);
        let z = Amplitude::new(
            window.re_min + (ix as f64 + 0.5) * step,
            window.im_min + (iy as f64 + 0.5) * step,
        );
        (z, ratio_of(&consistent_mask(spec, z, r)))
    });
    Ok(RzGrid { cells })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub n: usize,
    pub survivor_count: usize,
    pub log_expected_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionState {
    /// Ids of the surviving candidates, in input order.
    pub survivors: Vec<usize>,
    /// `sum_n ln R(z_n)`.
    pub log_expected_fraction: f64,
    pub n_processed: usize,
    /// Measurements whose consistent set was empty (treated as `R = 1`).
    pub empty_sets: usize,
    /// `ln R(z_n)` per measurement.
    pub log_ratios: Vec<f64>,
    /// One entry per prefix length `0..=N`.
    pub trace: Vec<TracePoint>,
}

impl ExclusionState {
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "survivor_count", "log_expected_fraction"])?;
        for t in &self.trace {
            w.write_record([
                t.n.to_string(),
                t.survivor_count.to_string(),
                crate::fmt_f64(t.log_expected_fraction),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Runs the exclusion attack over all measurements.
pub fn run_exclusion(
    spec: &Constellation,
    measurements: &[Amplitude],
    r: f64,
    candidates: &[Candidate],
) -> Result<ExclusionState> {
    check_radius(r)?;
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("candidate list is empty".into()));
    }
    let len = measurements.len();
    let masks: Vec<Vec<bool>> = par::map_slice(measurements, |&z| consistent_mask(spec, z, r));
    let empty: Vec<bool> = masks.iter().map(|m| !m.iter().any(|&b| b)).collect();
    let log_ratios: Vec<f64> = masks.iter().map(|m| ratio_of(m).ln()).collect();

    // First position at which each candidate's basis is excluded.
    let m_count = spec.bases();
    let first_failure: Vec<Option<usize>> = par::map_slice(candidates, |c| {
        let stream = c.secret.basis_stream();
        (0..len).find(|&n| !empty[n] && !masks[n][stream.index_below(n as u64, m_count)])
    });

    let mut failures_at = vec![0usize; len];
    for f in first_failure.iter().flatten() {
        failures_at[*f] += 1;
    }
    let mut trace = Vec::with_capacity(len + 1);
    let mut alive = candidates.len();
    let mut log_sum = 0.0;
    trace.push(TracePoint {
        n: 0,
        survivor_count: alive,
        log_expected_fraction: 0.0,
    });
    for n in 0..len {
        alive -= failures_at[n];
        log_sum += log_ratios[n];
        trace.push(TracePoint {
            n: n + 1,
            survivor_count: alive,
            log_expected_fraction: log_sum,
        });
    }
    let survivors = candidates
        .iter()
        .zip(&first_failure)
        .filter_map(|(c, f)| f.is_none().then_some(c.id))
        .collect();
    Ok(ExclusionState {
        survivors,
        log_expected_fraction: log_sum,
        n_processed: len,
        empty_sets: empty.iter().filter(|&&e| e).count(),
        log_ratios,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystream::{Ensemble, SecretMode};

    #[test]
    fn point_is_in_its_own_basis() {
        let spec = Constellation::p_type(17, 10.0).unwrap();
        for m in 0..17 {
            for ell in 0..2 {
                let z = spec.map_point(ell, m).unwrap();
                assert!(consistent_bases(&spec, z, 1e-6).unwrap().contains(&m));
            }
        }
    }

    #[test]
    fn toy_always_both_bases() {
        let spec = Constellation::toy(10.0).unwrap();
        let z = Amplitude::new(10.0, 0.0);
        assert_eq!(consistent_bases(&spec, z, 5.0).unwrap(), vec![0, 1]);
        assert_eq!(r_ratio(&spec, Amplitude::new(-9.0, 1.0), 10.0).unwrap(), 1.0);
    }

    #[test]
    fn brute_force_midpoint() {
        let spec = Constellation::p_type(17, 10.0).unwrap();
        let a = spec.map_point(0, 0).unwrap();
        let b = spec.map_point(0, 1).unwrap();
        let z = (a + b) / 2.0;
        let z = z / z.norm() * 5.0;
        let expected: Vec<usize> = (0..17)
            .filter(|&m| (0..2).any(|l| (z - spec.map_point(l, m).unwrap()).norm() < 5.0))
            .collect();
        assert_eq!(consistent_bases(&spec, z, 5.0).unwrap(), expected);
        assert!(!expected.is_empty() && expected.len() < 17);
    }

    #[test]
    fn far_measurement_is_not_excluding() {
        let spec = Constellation::p_type(17, 10.0).unwrap();
        let z = Amplitude::new(100.0, 100.0);
        assert!(consistent_bases(&spec, z, 5.0).unwrap().is_empty());
        assert_eq!(r_ratio(&spec, z, 5.0).unwrap(), 1.0);
    }

    #[test]
    fn radius_must_be_positive() {
        let spec = Constellation::toy(1.0).unwrap();
        assert!(r_ratio(&spec, Amplitude::new(0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn toy_grid_is_constant() {
        let spec = Constellation::toy(10.0).unwrap();
        let g = rz_map(&spec, 10.0, Window::square(Amplitude::new(0.0, 0.0), 12.0), 0.5).unwrap();
        assert!(g.cells.iter().all(|c| c.1 == 1.0));
    }

    #[test]
    fn no_measurements_keeps_everyone() {
        let spec = Constellation::p_type(17, 10.0).unwrap();
        let e = Ensemble::with_decoys(SecretMode::Whole, 20, 1);
        let st = run_exclusion(&spec, &[], 5.0, &e.candidates).unwrap();
        assert_eq!(st.survivors.len(), 21);
        assert_eq!(st.log_expected_fraction, 0.0);
        assert!(run_exclusion(&spec, &[], 5.0, &[]).is_err());
    }
}
