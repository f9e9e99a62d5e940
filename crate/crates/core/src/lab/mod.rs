//! Config-driven experiments. Every runner writes its artifacts, the
//! resolved config and a manifest into the output directory.

mod config;

pub use config::{default_table_rows, AttackKind, ConstellationConfig, KpaConfig, ScenarioConfig, SecretConfig};

use crate::audit::{self, AuditReport, Protocol};
use crate::channel::{self, MeasurementBatch};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::exclusion::{self, Window};
use crate::keystream::{self, Candidate, Ensemble};
use crate::mle::{self, Histogram, LikelihoodTable};
use crate::rng::{circle_mass_complement, mix64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
    /// Free-form facts about the run (binning rule, floor hits, ...).
    pub notes: BTreeMap<String, String>,
}

/// Collects artifacts in memory and writes them with their hashes.
pub struct Artifacts {
    dir: PathBuf,
    manifest: Manifest,
}

impl Artifacts {
    pub fn create(dir: &Path, command: &str, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                command: command.to_string(),
                seed,
                files: Vec::new(),
                notes: BTreeMap::new(),
            },
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.files.push(ManifestEntry {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
            seed: self.manifest.seed,
        });
        Ok(())
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.manifest.notes.insert(key.to_string(), value.to_string());
    }

    /// Writes `manifest.json` and returns the manifest.
    pub fn finish(self) -> Result<Manifest> {
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

/// A resolved config with its constellation and output directory.
pub struct Prepared {
    pub config: ScenarioConfig,
    pub spec: Constellation,
    pub base_dir: PathBuf,
}

impl Prepared {
    /// `base_dir` resolves relative paths inside the config.
    pub fn new(config: &ScenarioConfig, base_dir: &Path) -> Result<Self> {
        let config = config.resolve()?;
        let spec = config.constellation.build(base_dir)?;
        Ok(Self {
            config,
            spec,
            base_dir: base_dir.to_path_buf(),
        })
    }

    fn artifacts(&self, command: &str) -> Result<Artifacts> {
        let mut a = Artifacts::create(&self.config.output_dir, command, self.config.seed)?;
        a.write("config.resolved.json", self.config.to_json().as_bytes())?;
        Ok(a)
    }

    fn ensemble(&self) -> Ensemble {
        Ensemble::with_decoys(self.config.secret.mode, self.config.secret.decoys, self.config.seed)
    }

    fn transmit(&self, ensemble: &Ensemble) -> MeasurementBatch {
        let mut batch = channel::transmit(
            &self.spec,
            &ensemble.true_secret(),
            self.config.measurements,
            self.config.seed,
        );
        batch.secret_id = format!("candidate-{}", ensemble.true_index);
        batch
    }
}

fn write_batch(a: &mut Artifacts, spec: &Constellation, batch: &MeasurementBatch) -> Result<()> {
    a.write_with("scatter.csv", |b| batch.write_csv(b))?;
    a.write(
        "batch_meta.json",
        serde_json::to_string_pretty(&batch.metadata(spec))?.as_bytes(),
    )?;
    a.write_with("constellation.csv", |b| spec.write_csv(b))
}

/// `simulate`: one transmission and its scatter.
pub fn run_simulate(p: &Prepared) -> Result<Manifest> {
    let mut a = p.artifacts("simulate")?;
    let ensemble = p.ensemble();
    let batch = p.transmit(&ensemble);
    write_batch(&mut a, &p.spec, &batch)?;
    let bases = keystream::basis_sequence(&ensemble.true_secret(), batch.len(), p.spec.bases());
    let bob = channel::bob_decode(&p.spec, &bases, &batch)?;
    a.note("bob_symbol_errors", bob.symbol_errors.unwrap_or(0));
    a.finish()
}

/// `rz-map`: the consistent-basis ratio over the plane.
pub fn run_rz_map(p: &Prepared) -> Result<Manifest> {
    let mut a = p.artifacts("rz-map")?;
    write_rz_map(&mut a, p)?;
    a.finish()
}

fn write_rz_map(a: &mut Artifacts, p: &Prepared) -> Result<()> {
    let d = p.spec.distance();
    let r = p.config.r_over_d * d;
    let grid = exclusion::rz_map(&p.spec, r, Window::around(&p.spec, r), p.config.rz_grid_fraction * d)?;
    a.note("rz_radius", crate::fmt_f64(r));
    a.note("rz_mean", crate::fmt_f64(grid.mean()));
    a.write_with("rz_map.csv", |b| grid.write_csv(b))
}

/// `audit`: leakage report for the configured constellation.
pub fn run_audit(p: &Prepared) -> Result<(Manifest, AuditReport)> {
    let mut a = p.artifacts("audit")?;
    let report = write_audit(&mut a, p)?;
    Ok((a.finish()?, report))
}

fn write_audit(a: &mut Artifacts, p: &Prepared) -> Result<AuditReport> {
    let report = audit::audit(&p.spec, p.config.audit_tolerance, p.config.mc_samples, p.config.seed)?;
    a.write("audit.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
    a.note("audit_verdict", report.verdict());
    Ok(report)
}

/// `mc-table`: Monte Carlo statistics for each configured row.
pub fn run_mc_table(p: &Prepared) -> Result<Manifest> {
    let mut a = p.artifacts("mc-table")?;
    let rows = mc_table(&p.config, &p.base_dir)?;
    a.write_with("table.csv", |b| mle::write_stats_csv(&rows, b))?;
    a.finish()
}

/// One statistics row per entry of `config.table_rows`.
pub fn mc_table(config: &ScenarioConfig, base_dir: &Path) -> Result<Vec<(Constellation, mle::AttackStatistics)>> {
    let config = config.resolve()?;
    let sigma = ((config.secret.decoys + 1) as f64).ln();
    config
        .table_rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let spec = row.build(base_dir)?;
            let stats = mle::clt_params(&spec, config.mc_samples, config.seed.wrapping_add(i as u64), sigma)?;
            Ok((spec, stats))
        })
        .collect()
}

/// Summary of an attack scenario, alongside the files it wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub manifest: Manifest,
    pub true_rank: Option<usize>,
    pub exclusion_survivors: Option<usize>,
    pub true_survived_exclusion: Option<bool>,
    pub audit: AuditReport,
}

/// `attack`: transmission, the selected attacks, and the audit.
pub fn run_scenario(p: &Prepared) -> Result<ScenarioOutcome> {
    let cfg = &p.config;
    let spec = &p.spec;
    let mut a = p.artifacts("attack")?;
    let ensemble = p.ensemble();
    let batch = p.transmit(&ensemble);
    write_batch(&mut a, spec, &batch)?;
    a.write_with("candidates.csv", |b| ensemble.write_csv(b))?;
    a.note("true_candidate_id", ensemble.true_index);
    let z = batch.measurements();

    let mut true_rank = None;
    if matches!(cfg.attack, AttackKind::Mle | AttackKind::Both) {
        let table = LikelihoodTable::build(spec, z);
        a.note("likelihood_floor_hits", table.floor_hits());
        let n = z.len();
        let mut checkpoints: Vec<usize> = (cfg.trace_step..=n).step_by(cfg.trace_step).collect();
        if checkpoints.last() != Some(&n) && n > 0 {
            checkpoints.push(n);
        }
        let mut sections: Vec<usize> = cfg
            .cross_sections
            .iter()
            .copied()
            .filter(|&k| k <= n && k > 0)
            .collect();
        sections.sort_unstable();
        sections.dedup();
        let mut all_points = checkpoints.clone();
        all_points.extend(&sections);
        all_points.sort_unstable();
        all_points.dedup();

        let paths = mle::nll_paths(&table, &ensemble.candidates, &all_points);
        let rows: Vec<mle::TraceRow> = mle::trace_rows(&paths, ensemble.true_index, &all_points)
            .into_iter()
            .filter(|r| checkpoints.contains(&r.n))
            .collect();
        a.write_with("nll_trace.csv", |b| mle::write_trace_csv(&rows, b))?;

        for &k in &sections {
            let col = all_points.binary_search(&k).expect("section is a checkpoint");
            let decoys: Vec<f64> = paths
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != ensemble.true_index)
                .map(|(_, p)| p[col])
                .collect();
            let hist = Histogram::freedman_diaconis(&decoys);
            a.write_with(&format!("hist_N{k}.csv"), |b| hist.write_csv(b))?;
            a.note(
                &format!("hist_N{k}_true_nll"),
                crate::fmt_f64(paths[ensemble.true_index][col]),
            );
        }
        a.note("histogram_binning", "freedman-diaconis on decoy NLL");

        let ranking = mle::rank_with_table(&table, &ensemble.candidates, n);
        true_rank = ranking
            .iter()
            .find(|s| s.candidate_id == ensemble.true_index)
            .map(|s| s.rank);
        a.write_with("ranking.csv", |b| mle::write_ranking_csv(&ranking, b))?;

        let stats = mle::clt_params(spec, cfg.mc_samples, cfg.seed, ensemble.entropy_nats())?;
        if stats.a_sprime < stats.a_s - 4.0 * stats.stderr.gap {
            return Err(Error::Invariant(format!(
                "a_sprime = {} falls below a_s = {} beyond Monte Carlo error",
                stats.a_sprime, stats.a_s
            )));
        }
        a.write_with("mle_stats.csv", |b| mle::write_stats_csv(&[(spec.clone(), stats)], b))?;
    }

    let mut exclusion_survivors = None;
    let mut true_survived = None;
    if matches!(cfg.attack, AttackKind::Exclusion | AttackKind::Both) {
        write_rz_map(&mut a, p)?;
        let r = cfg.r_over_d * spec.distance();
        let state = exclusion::run_exclusion(spec, z, r, &ensemble.candidates)?;
        let survived = state.survivors.contains(&ensemble.true_index);
        if !survived && circle_mass_complement(r) * (z.len() as f64) < 1e-20 {
            return Err(Error::Invariant(
                "true secret was excluded although the radius encloses all noise mass".into(),
            ));
        }
        a.write_with("survivors.csv", |b| state.write_trace_csv(b))?;
        a.note("exclusion_empty_sets", state.empty_sets);
        exclusion_survivors = Some(state.survivors.len());
        true_survived = Some(survived);
    }

    let report = write_audit(&mut a, p)?;
    Ok(ScenarioOutcome {
        manifest: a.finish()?,
        true_rank,
        exclusion_survivors,
        true_survived_exclusion: true_survived,
        audit: report,
    })
}

/// One protocol row of the known-plaintext comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct KpaRow {
    pub protocol: Protocol,
    pub ensemble_size: usize,
    pub sigma_total: f64,
    pub sigma_phi: f64,
    pub measurements: usize,
    pub survivors_after_measurement: usize,
    /// Whether the measurement-only narrowing kept the true secret.
    pub truth_retained: bool,
    pub kpa_bits_to_unique: usize,
    pub predicted_kpa_bits: f64,
    pub remaining_entropy: f64,
}

/// Measurement-only narrowing followed by known-plaintext filtering, for
/// a conventional stream cipher and both secret layouts.
pub fn kpa_compare(p: &Prepared) -> Result<Vec<KpaRow>> {
    let cfg = &p.config;
    let spec = &p.spec;
    let bits = cfg.kpa.enumerated_bits;
    let phi_bits = cfg.kpa.phi_bits;
    let base = mix64(cfg.seed ^ 0x5EC2E7);
    let sigma_total = bits as f64 * std::f64::consts::LN_2;
    let sigma_phi = phi_bits as f64 * std::f64::consts::LN_2;
    let stats = mle::clt_params(spec, cfg.mc_samples, cfg.seed, sigma_total)?;
    let budget = |sigma: f64| -> usize {
        if stats.gamma > 0.0 {
            (cfg.kpa.margin * sigma / stats.gamma).ceil() as usize
        } else {
            0
        }
    };
    let max_kpa = 64 + bits as usize;
    let mut rows = Vec::new();

    // Conventional cipher: nothing to measure.
    let conv = Ensemble::enumerated(bits, base, cfg.seed);
    let (kb, left) = keystream::kpa_bits_to_unique(&conv.candidates, &conv.true_secret(), max_kpa);
    debug_assert_eq!(left, 1);
    rows.push(KpaRow {
        protocol: Protocol::ConventionalStream,
        ensemble_size: conv.len(),
        sigma_total,
        sigma_phi: 0.0,
        measurements: 0,
        survivors_after_measurement: conv.len(),
        truth_retained: true,
        kpa_bits_to_unique: kb,
        predicted_kpa_bits: audit::remaining_entropy(Protocol::ConventionalStream, sigma_total, 0.0)?
            / std::f64::consts::LN_2,
        remaining_entropy: audit::remaining_entropy(Protocol::ConventionalStream, sigma_total, 0.0)?,
    });

    // Whole secret: the basis stream pins down everything.
    let whole = Ensemble::enumerated(bits, base, cfg.seed);
    let n = budget(sigma_total);
    let (survivors, retained) = measurement_narrowing(spec, &whole, n, cfg.seed, |c| c.id);
    let (kb, _) = keystream::kpa_bits_to_unique(&survivors, &whole.true_secret(), max_kpa);
    let rem = audit::remaining_entropy(Protocol::Y00Whole, sigma_total, sigma_total)?;
    rows.push(KpaRow {
        protocol: Protocol::Y00Whole,
        ensemble_size: whole.len(),
        sigma_total,
        sigma_phi: sigma_total,
        measurements: n,
        survivors_after_measurement: survivors.len(),
        truth_retained: retained,
        kpa_bits_to_unique: kb,
        predicted_kpa_bits: rem / std::f64::consts::LN_2,
        remaining_entropy: rem,
    });

    // Divided secret: only the basis half is exposed.
    let divided = Ensemble::enumerated_divided(bits - phi_bits, phi_bits, base, cfg.seed);
    let n = budget(sigma_phi);
    let key_count = 1usize << (bits - phi_bits);
    let (survivors, retained) = measurement_narrowing(spec, &divided, n, cfg.seed, |c| c.id / key_count);
    let (kb, _) = keystream::kpa_bits_to_unique(&survivors, &divided.true_secret(), max_kpa);
    let rem = audit::remaining_entropy(Protocol::Y00Divided, sigma_total, sigma_phi)?;
    rows.push(KpaRow {
        protocol: Protocol::Y00Divided,
        ensemble_size: divided.len(),
        sigma_total,
        sigma_phi,
        measurements: n,
        survivors_after_measurement: survivors.len(),
        truth_retained: retained,
        kpa_bits_to_unique: kb,
        predicted_kpa_bits: rem / std::f64::consts::LN_2,
        remaining_entropy: rem,
    });
    Ok(rows)
}

/// Keeps the candidates whose basis class (given by `class`) attains the
/// minimum NLL over `n` measurements. With `n = 0` nothing is excluded.
fn measurement_narrowing<F>(
    spec: &Constellation,
    ensemble: &Ensemble,
    n: usize,
    seed: u64,
    class: F,
) -> (Vec<Candidate>, bool)
where
    F: Fn(&Candidate) -> usize,
{
    if n == 0 {
        return (ensemble.candidates.clone(), true);
    }
    let truth = ensemble.candidates[ensemble.true_index];
    let batch = channel::transmit(spec, &truth.secret, n, seed);
    let table = LikelihoodTable::build(spec, batch.measurements());
    // One representative per basis class.
    let mut reps: BTreeMap<usize, Candidate> = BTreeMap::new();
    for c in &ensemble.candidates {
        reps.entry(class(c)).or_insert(*c);
    }
    let reps: Vec<Candidate> = reps.into_values().collect();
    let ranking = mle::rank_with_table(&table, &reps, n);
    let winner = ranking[0].candidate_id;
    let winner_class = class(reps.iter().find(|c| c.id == winner).expect("winner is a rep"));
    let survivors: Vec<Candidate> = ensemble
        .candidates
        .iter()
        .filter(|c| class(c) == winner_class)
        .copied()
        .collect();
    let retained = survivors.iter().any(|c| c.id == truth.id);
    (survivors, retained)
}

pub fn write_kpa_csv<W: std::io::Write>(rows: &[KpaRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "protocol",
        "ensemble_size",
        "sigma_total_nats",
        "sigma_phi_nats",
        "measurements",
        "survivors_after_measurement",
        "truth_retained",
        "kpa_bits_to_unique",
        "predicted_kpa_bits",
        "remaining_entropy_nats",
    ])?;
    let f = crate::fmt_f64;
    for r in rows {
        w.write_record([
            format!("{:?}", r.protocol),
            r.ensemble_size.to_string(),
            f(r.sigma_total),
            f(r.sigma_phi),
            r.measurements.to_string(),
            r.survivors_after_measurement.to_string(),
            r.truth_retained.to_string(),
            r.kpa_bits_to_unique.to_string(),
            f(r.predicted_kpa_bits),
            f(r.remaining_entropy),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// `kpa`: writes `kpa.csv`.
pub fn run_kpa(p: &Prepared) -> Result<(Manifest, Vec<KpaRow>)> {
    let mut a = p.artifacts("kpa")?;
    let rows = kpa_compare(p)?;
    a.write_with("kpa.csv", |b| write_kpa_csv(&rows, b))?;
    Ok((a.finish()?, rows))
}
