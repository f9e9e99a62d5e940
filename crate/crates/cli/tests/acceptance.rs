//! Acceptance suite. Runs every criterion at its stated tolerance and
//! prints one PASS/FAIL line each; exits nonzero if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use num_complex::Complex64;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;
use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;
use y00lab::audit::{self, mc_l2_squared, mixture_l2_distance, Classification};
use y00lab::channel::{bob_decode, transmit};
use y00lab::exclusion::run_exclusion;
use y00lab::keystream::{basis_sequence, key_bits, kpa_filter};
use y00lab::mle::{clt_params, n_threshold, nll_paths, rank_scores, LikelihoodTable};
use y00lab::rng::{circle_mass_complement, sample_heterodyne, tags, RandomStream};
use y00lab::{Constellation, Ensemble, SecretMode};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_y00lab")
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "y00lab {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path.display().to_string()
}

/// `table.csv` rows keyed by `(kind, M)`.
type TableRows = BTreeMap<(String, usize), BTreeMap<String, f64>>;

fn read_table(path: &Path) -> Result<TableRows, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let mut rows = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let kind = rec[0].to_string();
        let m: usize = rec[1].parse().map_err(|e| format!("{e}"))?;
        let values = headers
            .iter()
            .zip(rec.iter())
            .skip(2)
            .map(|(h, v)| (h.to_string(), v.parse::<f64>().unwrap_or(f64::NAN)))
            .collect();
        rows.insert((kind, m), values);
    }
    Ok(rows)
}

fn table_1(rows: &TableRows) -> Outcome {
    // (kind, M, a_s, a_sprime, var_sprime, gamma)
    let reference = [
        ("P", 3, 2.8, 20.0, 170.0, 0.80),
        ("P", 9, 2.8, 21.0, 250.0, 0.63),
        ("P", 17, 2.8, 21.0, 250.0, 0.63),
        ("P", 257, 2.8, 21.0, 250.0, 0.63),
        ("N", 16, 4.9, 25.0, 290.0, 0.68),
        ("N", 64, 4.9, 25.0, 320.0, 0.63),
        ("N", 256, 4.9, 25.0, 320.0, 0.62),
        ("N", 1024, 4.9, 25.0, 330.0, 0.61),
    ];
    let mut worst = (0.0f64, String::new());
    for (kind, m, a, ap, vp, g) in reference {
        let Some(row) = rows.get(&(kind.to_string(), m)) else {
            return Err(format!("row {kind} M={m} missing"));
        };
        for (col, want) in [("a_s", a), ("a_sprime", ap), ("var_sprime", vp), ("gamma", g)] {
            let got = row[col];
            let rel = (got - want).abs() / want;
            if !(rel <= worst.0) {
                worst = (rel, format!("{kind} M={m} {col} {got:.4} vs {want}"));
            }
        }
    }
    check(
        worst.0 <= 0.15,
        format!("worst relative deviation {:.3} ({})", worst.0, worst.1),
    )
}

fn entropy_anchor(rows: &TableRows) -> Outcome {
    let mut worst = 0.0f64;
    for ((kind, m), row) in rows {
        let l = row["L"];
        let want = (std::f64::consts::PI * std::f64::consts::E).ln() + l.ln();
        let rel = (row["a_s"] - want).abs() / want;
        if rel > worst {
            worst = rel;
        }
        if rel > 0.01 {
            return Err(format!("{kind} M={m}: a_s {} vs {want:.4}", row["a_s"]));
        }
    }
    Ok(format!("8 rows, worst relative deviation {worst:.2e}"))
}

struct AttackTrial {
    true_rank: Vec<usize>,
    /// `(gap, decoy sd)` at the second checkpoint.
    gap: (f64, f64),
}

fn mle_trial(spec: &Constellation, decoys: usize, checkpoints: &[usize], seed: u64) -> AttackTrial {
    let e = Ensemble::with_decoys(SecretMode::Whole, decoys, seed);
    let n = *checkpoints.last().unwrap();
    let batch = transmit(spec, &e.true_secret(), n, seed);
    let table = LikelihoodTable::build(spec, batch.measurements());
    let paths = nll_paths(&table, &e.candidates, checkpoints);
    let true_rank = (0..checkpoints.len())
        .map(|k| {
            let scores = paths.iter().enumerate().map(|(i, p)| (i, p[k])).collect();
            rank_scores(scores)
                .iter()
                .position(|s| s.candidate_id == e.true_index)
                .unwrap()
                + 1
        })
        .collect();
    let last = checkpoints.len() - 1;
    let decoy: Vec<f64> = paths
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != e.true_index)
        .map(|(_, p)| p[last])
        .collect();
    let mean = decoy.iter().sum::<f64>() / decoy.len() as f64;
    let sd = (decoy.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (decoy.len() - 1) as f64).sqrt();
    let min = decoy.iter().copied().fold(f64::INFINITY, f64::min);
    AttackTrial {
        true_rank,
        gap: (min - paths[e.true_index][last], sd),
    }
}

fn mle_success() -> Outcome {
    let spec = Constellation::p_type(17, 10.0).unwrap();
    let mut first = 0;
    let mut worst_ratio = f64::INFINITY;
    for t in 0..100 {
        let r = mle_trial(&spec, 1000, &[200, 800], 1000 + t);
        if r.true_rank[0] == 1 {
            first += 1;
        }
        worst_ratio = worst_ratio.min(r.gap.0 / r.gap.1);
    }
    check(
        first >= 99 && worst_ratio > 10.0,
        format!("rank 1 at N=200 in {first}/100 trials; smallest gap at N=800 is {worst_ratio:.1} decoy sd"),
    )
}

fn toy_immunity() -> Outcome {
    let spec = Constellation::toy(5.0).unwrap();
    let trials = 200;
    let mut deciles = [0usize; 10];
    for t in 0..trials {
        let rank = mle_trial(&spec, 1000, &[800], 5000 + t).true_rank[0];
        deciles[(rank - 1) * 10 / 1001] += 1;
    }
    let expected = trials as f64 / 10.0;
    let chi2: f64 = deciles.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(chi2);
    let stats = clt_params(&spec, 1_000_000, 3, (1001f64).ln()).map_err(|e| e.to_string())?;
    let zero = stats.gamma.abs() <= 4.0 * stats.stderr.gamma;
    check(
        p > 0.01 && stats.gamma.abs() < 1e-3 && zero,
        format!(
            "decile chi-square {chi2:.2} (p = {p:.3}); gamma = {:.2e} +/- {:.2e}",
            stats.gamma, stats.stderr.gamma
        ),
    )
}

fn random_custom(rs: &RandomStream, hiding: bool) -> Constellation {
    let i = std::cell::Cell::new(0u64);
    let next = |n: usize| {
        i.set(i.get() + 1);
        rs.index_below(i.get(), n)
    };
    let m = 2 + next(4);
    let l = 2 + next(3);
    let coord = || (next(1_000_001) as f64 / 1e6 - 0.5) * 12.0;
    let base: Vec<Complex64> = (0..l).map(|_| Complex64::new(coord(), coord())).collect();
    let table: Vec<Vec<Complex64>> = (0..m)
        .map(|_| {
            if hiding {
                let mut perm: Vec<Complex64> = base.clone();
                for k in (1..l).rev() {
                    perm.swap(k, next(k + 1));
                }
                perm
            } else {
                (0..l).map(|_| Complex64::new(coord(), coord())).collect()
            }
        })
        .collect();
    Constellation::custom(table).unwrap()
}

fn jensen() -> Outcome {
    let mut holds = 0;
    for k in 0..50u64 {
        let rs = RandomStream::new(k, tags::DECOY).derive(77);
        let spec = random_custom(&rs, k % 2 == 0);
        let mut dist = 0.0f64;
        for a in 0..spec.bases() {
            for b in a + 1..spec.bases() {
                dist = dist.max(mixture_l2_distance(&spec, a, b).unwrap());
            }
        }
        let s = clt_params(&spec, 200_000, k, 0.0).map_err(|e| e.to_string())?;
        let gap = s.a_sprime - s.a_s;
        let tol = 4.0 * s.stderr.gap;
        if gap < -tol {
            return Err(format!("spec {k}: a_sprime {} < a_s {} - {tol}", s.a_sprime, s.a_s));
        }
        let equal = gap.abs() <= tol;
        if equal != (dist < 1e-9) {
            return Err(format!(
                "spec {k}: gap {gap:.3e} (4 se {tol:.3e}) but audit distance {dist:.3e}"
            ));
        }
        holds += usize::from(equal);
    }
    Ok(format!(
        "50 constellations, {holds} with equality, all matching the audit"
    ))
}

fn exclusion_calibration() -> Outcome {
    let spec = Constellation::p_type(17, 10.0).unwrap();
    let r = 0.5 * spec.distance();
    let (decoys, n) = (10_000, 10);
    let mut rows = Vec::new();
    let mut all_log_r = Vec::new();
    for t in 0..100u64 {
        let e = Ensemble::with_decoys(SecretMode::Whole, decoys, 200 + t);
        let batch = transmit(&spec, &e.true_secret(), n, 200 + t);
        let state = run_exclusion(&spec, batch.measurements(), r, &e.candidates).map_err(|e| e.to_string())?;
        let decoy_survivors = state.survivors.iter().filter(|&&id| id != e.true_index).count();
        rows.push((decoy_survivors, state.log_expected_fraction));
        all_log_r.extend(state.log_ratios);
    }
    let mean = all_log_r.iter().sum::<f64>() / all_log_r.len() as f64;
    let var = all_log_r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (all_log_r.len() - 1) as f64;
    let band = 4.0 * (n as f64 * var).sqrt();
    let mut worst = 0.0f64;
    for &(surv, predicted) in &rows {
        if surv == 0 {
            return Err("a trial lost every decoy before the checkpoint".into());
        }
        worst = worst.max(((surv as f64 / decoys as f64).ln() - predicted).abs());
    }

    // The truth must survive long runs.
    let mut survived = 0;
    for t in 0..100u64 {
        let e = Ensemble::with_decoys(SecretMode::Whole, 10, 900 + t);
        let batch = transmit(&spec, &e.true_secret(), 1000, 900 + t);
        let state = run_exclusion(&spec, batch.measurements(), r, &e.candidates).map_err(|e| e.to_string())?;
        survived += usize::from(state.survivors.contains(&e.true_index));
    }

    let toy = Constellation::toy(5.0).unwrap();
    let e = Ensemble::with_decoys(SecretMode::Whole, 100, 4);
    let batch = transmit(&toy, &e.true_secret(), 500, 4);
    let state =
        run_exclusion(&toy, batch.measurements(), 0.5 * toy.distance(), &e.candidates).map_err(|e| e.to_string())?;
    let toy_constant = state.trace.iter().all(|t| t.survivor_count == 101);

    check(
        worst <= band && survived == 100 && toy_constant,
        format!(
            "max |ln fraction - sum ln R| = {worst:.3} within band {band:.3}; truth survived {survived}/100 runs of N=1000; Toy survivor set constant: {toy_constant}"
        ),
    )
}

fn n_th_formula() -> Outcome {
    let nth = n_threshold(0.63, (1001f64).ln()).map_err(|e| e.to_string())?;
    let spec = Constellation::p_type(17, 10.0).unwrap();
    let n = (5.0 * nth).ceil() as usize;
    let trials = 200;
    let wins = (0..trials)
        .filter(|&t| mle_trial(&spec, 1000, &[n], 7000 + t as u64).true_rank[0] == 1)
        .count();
    check(
        (nth - 10.97).abs() <= 0.01 && wins * 100 >= 99 * trials,
        format!("N_th = {nth:.4}; rank 1 at N = {n} in {wins}/{trials} trials"),
    )
}

fn auditor() -> Outcome {
    let tol = audit::DEFAULT_TOLERANCE;
    let mut notes = Vec::new();
    for spec in [
        Constellation::toy(5.0).unwrap(),
        Constellation::toy_qam(4, 10.0).unwrap(),
    ] {
        let r = audit::audit(&spec, tol, 20_000, 1).map_err(|e| e.to_string())?;
        if r.classification != Classification::ConditionHolds || !(r.max_pair_l2 < 1e-12) {
            return Err(format!(
                "{} classified {:?} (max {:.2e})",
                r.kind, r.classification, r.max_pair_l2
            ));
        }
        notes.push(format!("{} holds", r.kind));
    }
    let p = Constellation::p_type(17, 10.0).unwrap();
    let n = Constellation::n_type(64, 16, 10.0).unwrap();
    for spec in [&p, &n] {
        let r = audit::audit(spec, tol, 20_000, 1).map_err(|e| e.to_string())?;
        if r.classification != Classification::Leaky {
            return Err(format!("{} M={} not flagged", r.kind, r.bases));
        }
        notes.push(format!("{} leaky", r.kind));
    }
    let mut worst = 0.0f64;
    for (spec, a, b) in [(&p, 0, 1), (&p, 0, 8), (&n, 0, 1), (&n, 0, 63), (&n, 5, 40)] {
        let exact = mixture_l2_distance(spec, a, b).unwrap().powi(2);
        let (est, se) = mc_l2_squared(spec, a, b, 400_000, 17);
        let z = (est - exact).abs() / se;
        worst = worst.max(z);
    }
    check(
        worst <= 4.0,
        format!("{}; closed form vs Monte Carlo within {worst:.2} se", notes.join(", ")),
    )
}

fn kpa_baseline() -> Outcome {
    let trials = 500u64;
    let ks = [4usize, 8, 12, 16];
    let mut log_sums = [0.0f64; 4];
    for t in 0..trials {
        let base = RandomStream::new(t, tags::KEY).u64_at(99);
        let e = Ensemble::enumerated(16, base, t);
        let truth = key_bits(&e.true_secret(), 16);
        let mut left = e.candidates.clone();
        let mut done = 0;
        for (j, &k) in ks.iter().enumerate() {
            let obs: Vec<(usize, u8)> = (done..k).map(|n| (n, truth[n])).collect();
            left = kpa_filter(&left, &obs);
            done = k;
            log_sums[j] += (left.len() as f64).ln();
        }
    }
    let mut parts = Vec::new();
    let mut ok = true;
    for (j, &k) in ks.iter().enumerate() {
        let geo = (log_sums[j] / trials as f64).exp();
        let want = 2f64.powi(16 - k as i32);
        ok &= geo / want <= 2.0 && want / geo <= 2.0;
        parts.push(format!("k={k}: {geo:.1} vs {want}"));
    }
    check(ok, parts.join(", "))
}

fn channel_sanity() -> Outcome {
    let alpha = Complex64::new(3.0, 4.0);
    let rs = RandomStream::new(5, tags::CHANNEL);
    let n = 100_000usize;
    let z: Vec<Complex64> = (0..n as u64).map(|i| sample_heterodyne(alpha, &rs, i)).collect();
    let mean = z.iter().sum::<Complex64>() / n as f64;
    let var_re = z.iter().map(|v| (v.re - mean.re).powi(2)).sum::<f64>() / (n - 1) as f64;
    let var_im = z.iter().map(|v| (v.im - mean.im).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se_mean = (0.5 / n as f64).sqrt();
    let se_var = 0.5 * (2.0 / n as f64).sqrt();
    let sampler_ok = (mean.re - 3.0).abs() <= 4.0 * se_mean
        && (mean.im - 4.0).abs() <= 4.0 * se_mean
        && (var_re - 0.5).abs() <= 4.0 * se_var
        && (var_im - 0.5).abs() <= 4.0 * se_var;

    // Union bound on the nearest-point error: each same-basis neighbour at
    // distance D is preferred with probability erfc(D / 2) / 2.
    let specs = [
        Constellation::p_type(17, 10.0).unwrap(),
        Constellation::n_type(64, 16, 10.0).unwrap(),
        Constellation::toy(5.0).unwrap(),
        Constellation::toy_qam(4, 10.0).unwrap(),
    ];
    let mut worst_bound = 0.0f64;
    let mut errors = 0;
    for spec in &specs {
        for m in 0..spec.bases() {
            let pts = spec.basis_points(m);
            for a in pts {
                let bound: f64 = pts
                    .iter()
                    .filter(|b| *b != a)
                    .map(|b| 0.5 * erfc((a - b).norm() / 2.0))
                    .sum();
                worst_bound = worst_bound.max(bound);
            }
        }
        let secret = Ensemble::with_decoys(SecretMode::Whole, 0, 3).true_secret();
        let batch = transmit(spec, &secret, n, 3);
        let bases = basis_sequence(&secret, n, spec.bases());
        errors += bob_decode(spec, &bases, &batch)
            .map_err(|e| e.to_string())?
            .symbol_errors
            .unwrap_or(usize::MAX);
    }
    let tail = circle_mass_complement(10.0);
    let tail_ok = (tail - 3.7e-44).abs() / 3.7e-44 < 0.02;
    check(
        sampler_ok && worst_bound < 1e-6 && errors == 0 && tail_ok,
        format!(
            "sampler mean {mean:.4}, variances {var_re:.4}/{var_im:.4}; Bob error bound {worst_bound:.1e}, {errors} errors in 4 x {n}; circle tail {tail:.3e}"
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = write_config(
        dir.path(),
        r#"{"measurements": 1000, "secret": {"decoys": 500}, "cross_sections": [200, 800], "mc_samples": 200000, "seed": 21,
            "table_rows": [{"kind": "P", "bases": 17}, {"kind": "N", "bases": 64}], "kpa": {"enumerated_bits": 12, "phi_bits": 6}}"#,
    );
    let (mut compared, mut csvs) = (0, 0);
    for cmd in ["attack", "mc-table", "kpa", "simulate", "rz-map", "audit"] {
        let mut outputs = Vec::new();
        for workers in ["1", "8"] {
            let out = dir.path().join(format!("{cmd}-{workers}"));
            let out_s = out.display().to_string();
            run_cli(&[cmd, "--config", &config, "--output", &out_s, "--workers", workers])?;
            let mut files = BTreeMap::new();
            for entry in std::fs::read_dir(&out).map_err(|e| e.to_string())? {
                let path = entry.map_err(|e| e.to_string())?.path();
                // The config echo and the manifest record the output path.
                let name = path.file_name().unwrap().to_string_lossy().into_owned();
                if name != "config.resolved.json" && name != "manifest.json" {
                    files.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
                }
            }
            outputs.push(files);
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            return Err(format!("{cmd}: artifacts differ between 1 and 8 workers"));
        }
        compared += outputs[0].len();
        csvs += outputs[0].keys().filter(|k| k.ends_with(".csv")).count();
    }
    Ok(format!(
        "{compared} artifacts ({csvs} CSV) byte-identical across 1 and 8 workers"
    ))
}

fn main() {
    let started = Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let config = write_config(dir.path(), r#"{"mc_samples": 1000000}"#);
    let out = dir.path().join("table");
    let mc_started = Instant::now();
    let table = run_cli(&["mc-table", "--config", &config, "--output", &out.display().to_string()])
        .and_then(|()| read_table(&out.join("table.csv")));
    let mc_secs = mc_started.elapsed().as_secs_f64();

    let criteria: Vec<Criterion> = vec![
        (
            "statistics table reproduction",
            Box::new(|| {
                let r = table.clone().and_then(|t| table_1(&t));
                let with_time = |d: String| format!("{d}; mc-table with 10^6 samples per row took {mc_secs:.1}s");
                r.map(with_time).map_err(with_time)
            }),
        ),
        (
            "entropy anchor",
            Box::new(|| table.clone().and_then(|t| entropy_anchor(&t))),
        ),
        ("MLE attack success", Box::new(mle_success)),
        ("Toy immunity", Box::new(toy_immunity)),
        ("Jensen property", Box::new(jensen)),
        ("exclusion calibration", Box::new(exclusion_calibration)),
        ("N_th formula", Box::new(n_th_formula)),
        ("security auditor", Box::new(auditor)),
        ("KPA baseline", Box::new(kpa_baseline)),
        ("channel sanity", Box::new(channel_sanity)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} {:>2}. {name}: {detail} [{:.1}s]",
            i + 1,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
