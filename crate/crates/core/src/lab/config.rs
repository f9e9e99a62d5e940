use crate::constellation::{Constellation, ConstellationKind};
use crate::error::{Error, Result};
use crate::keystream::SecretMode;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Exclusion,
    Mle,
    Both,
}

/// Constellation parameters. Unset fields take per-kind defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationConfig {
    pub kind: ConstellationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bases: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    /// Toy only: the two states are `-A` and `+A`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// ToyQam only: `J`, the bits per state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<u32>,
    /// Custom only: CSV table `ell,m,re,im`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_csv: Option<PathBuf>,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        Self {
            kind: ConstellationKind::P,
            bases: None,
            symbols: None,
            distance: None,
            amplitude: None,
            bits: None,
            points_csv: None,
        }
    }
}

impl ConstellationConfig {
    pub fn p(bases: usize) -> Self {
        Self {
            bases: Some(bases),
            ..Self::default()
        }
    }

    pub fn n(bases: usize) -> Self {
        Self {
            kind: ConstellationKind::N,
            bases: Some(bases),
            ..Self::default()
        }
    }

    /// Fills every unset field with its default.
    pub fn resolve(&self) -> Result<Self> {
        let mut c = self.clone();
        match c.kind {
            ConstellationKind::P => {
                c.bases.get_or_insert(17);
                c.symbols.get_or_insert(2);
                c.distance.get_or_insert(10.0);
            }
            ConstellationKind::N => {
                c.bases.get_or_insert(64);
                c.symbols.get_or_insert(16);
                c.distance.get_or_insert(10.0);
            }
            ConstellationKind::Toy => {
                let a = *c.amplitude.get_or_insert(10.0);
                c.bases.get_or_insert(2);
                c.symbols.get_or_insert(2);
                c.distance.get_or_insert(2.0 * a);
            }
            ConstellationKind::ToyQam => {
                let j = *c.bits.get_or_insert(2);
                c.bases.get_or_insert(1 << j);
                c.symbols.get_or_insert(1 << j);
                c.distance.get_or_insert(10.0);
            }
            ConstellationKind::Custom => {
                if c.points_csv.is_none() {
                    return Err(Error::Config("custom constellation needs `points_csv`".into()));
                }
            }
        }
        Ok(c)
    }

    /// Builds the constellation; relative CSV paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Constellation> {
        let c = self.resolve()?;
        let spec = match c.kind {
            ConstellationKind::P => {
                if c.symbols != Some(2) {
                    return Err(Error::Config("P-type constellations have exactly 2 symbols".into()));
                }
                Constellation::p_type(c.bases.unwrap(), c.distance.unwrap())
            }
            ConstellationKind::N => Constellation::n_type(c.bases.unwrap(), c.symbols.unwrap(), c.distance.unwrap()),
            ConstellationKind::Toy => {
                if c.bases != Some(2) || c.symbols != Some(2) {
                    return Err(Error::Config("Toy constellations have M = L = 2".into()));
                }
                Constellation::toy(c.amplitude.unwrap())
            }
            ConstellationKind::ToyQam => {
                let j = c.bits.unwrap();
                if c.bases != Some(1 << j) || c.symbols != Some(1 << j) {
                    return Err(Error::Config("ToyQam constellations have M = L = 2^bits".into()));
                }
                Constellation::toy_qam(j, c.distance.unwrap())
            }
            ConstellationKind::Custom => {
                let path = base_dir.join(c.points_csv.as_ref().unwrap());
                let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                Constellation::read_csv(file)
            }
        };
        spec.map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecretConfig {
    #[serde(default = "default_mode")]
    pub mode: SecretMode,
    #[serde(default = "default_decoys")]
    pub decoys: usize,
}

fn default_mode() -> SecretMode {
    SecretMode::Whole
}
fn default_decoys() -> usize {
    1000
}

impl Default for SecretConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            decoys: default_decoys(),
        }
    }
}

/// Settings for the known-plaintext comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpaConfig {
    /// The candidate space is `2^enumerated_bits` secrets.
    #[serde(default = "default_kpa_bits")]
    pub enumerated_bits: u32,
    /// Bits of the divided secret that seed the basis stream.
    #[serde(default = "default_phi_bits")]
    pub phi_bits: u32,
    /// Measurements are taken at `margin * N_th`.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_kpa_bits() -> u32 {
    16
}
fn default_phi_bits() -> u32 {
    8
}
fn default_margin() -> f64 {
    5.0
}

impl Default for KpaConfig {
    fn default() -> Self {
        Self {
            enumerated_bits: default_kpa_bits(),
            phi_bits: default_phi_bits(),
            margin: default_margin(),
        }
    }
}

/// A declarative experiment. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub constellation: ConstellationConfig,
    #[serde(default)]
    pub secret: SecretConfig,
    #[serde(default = "default_attack")]
    pub attack: AttackKind,
    /// `N`, the number of transmitted states.
    #[serde(default = "default_measurements")]
    pub measurements: usize,
    /// Prefix lengths at which decoy NLL histograms are written.
    #[serde(default = "default_cross_sections")]
    pub cross_sections: Vec<usize>,
    /// Spacing of rows in the NLL trace.
    #[serde(default = "default_trace_step")]
    pub trace_step: usize,
    #[serde(default = "default_r_over_d")]
    pub r_over_d: f64,
    /// R(z) grid spacing as a fraction of `d`.
    #[serde(default = "default_grid_fraction")]
    pub rz_grid_fraction: f64,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Rows of the statistics table (`mc-table`).
    #[serde(default = "default_table_rows")]
    pub table_rows: Vec<ConstellationConfig>,
    #[serde(default)]
    pub kpa: KpaConfig,
    #[serde(default = "default_tolerance")]
    pub audit_tolerance: f64,
}

fn default_attack() -> AttackKind {
    AttackKind::Both
}
fn default_measurements() -> usize {
    3000
}
fn default_cross_sections() -> Vec<usize> {
    vec![200, 800]
}
fn default_trace_step() -> usize {
    1
}
fn default_r_over_d() -> f64 {
    0.5
}
fn default_grid_fraction() -> f64 {
    0.025
}
fn default_mc_samples() -> usize {
    100_000
}
fn default_seed() -> u64 {
    7
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_tolerance() -> f64 {
    crate::audit::DEFAULT_TOLERANCE
}

/// Default rows of the statistics table: P-type and N-type at `d = 10`.
pub fn default_table_rows() -> Vec<ConstellationConfig> {
    let mut rows: Vec<ConstellationConfig> = [3, 9, 17, 257].into_iter().map(ConstellationConfig::p).collect();
    rows.extend([16, 64, 256, 1024].into_iter().map(ConstellationConfig::n));
    rows
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults parse")
    }
}

impl ScenarioConfig {
    /// Parses JSON; errors carry the line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fills per-kind defaults and checks ranges.
    pub fn resolve(&self) -> Result<Self> {
        let mut c = self.clone();
        c.constellation = c.constellation.resolve()?;
        c.table_rows = c.table_rows.iter().map(|r| r.resolve()).collect::<Result<_>>()?;
        if c.trace_step == 0 {
            return Err(Error::Config("trace_step must be >= 1".into()));
        }
        if !(c.r_over_d > 0.0) {
            return Err(Error::Config("r_over_d must be > 0".into()));
        }
        if !(c.rz_grid_fraction > 0.0) {
            return Err(Error::Config("rz_grid_fraction must be > 0".into()));
        }
        if c.mc_samples < crate::mle::MIN_MC_SAMPLES {
            return Err(Error::Config(format!(
                "mc_samples must be >= {}",
                crate::mle::MIN_MC_SAMPLES
            )));
        }
        if !(c.audit_tolerance > 0.0) {
            return Err(Error::Config("audit_tolerance must be > 0".into()));
        }
        if c.kpa.enumerated_bits == 0 || c.kpa.enumerated_bits > 24 {
            return Err(Error::Config("kpa.enumerated_bits must be in 1..=24".into()));
        }
        if c.kpa.phi_bits > c.kpa.enumerated_bits {
            return Err(Error::Config("kpa.phi_bits must not exceed kpa.enumerated_bits".into()));
        }
        if !(c.kpa.margin > 0.0) {
            return Err(Error::Config("kpa.margin must be > 0".into()));
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
