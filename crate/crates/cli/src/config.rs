//! TOML experiment configuration.
//!
//! One file holds a global `seed`, the `output_dir` and one table per
//! command. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub sample_potential: Option<SamplePotentialConfig>,
    pub smalldiv_scan: Option<ScanConfig>,
    pub normal_form: Option<NormalFormConfig>,
    pub simulate: Option<SimulateConfig>,
    pub verify: Option<VerifySection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePotentialConfig {
    /// Number of blocks minus one; alternatively derived from `d`, `k_max`.
    pub n_max: Option<usize>,
    pub d: Option<usize>,
    pub k_max: Option<i32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub d: usize,
    pub k_max: i32,
    #[serde(default = "two")]
    pub q_max: usize,
    /// Write every scanned pair, not only the summary.
    #[serde(default = "yes")]
    pub write_pairs: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    DoubleDouble,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalFormConfig {
    pub d: usize,
    pub k_max: i32,
    #[serde(default = "one")]
    pub p: usize,
    #[serde(default = "plus_one")]
    pub sigma: f64,
    /// Order `r`; required unless `eps` is given.
    pub r: Option<usize>,
    /// Initial size: derive `(r, N, ν)` from the planner.
    pub eps: Option<f64>,
    #[serde(default = "unit")]
    pub s0: f64,
    /// `log2 N` for fixed-order plans (default: the box's block count).
    pub log2_n: Option<u32>,
    /// Non-resonance constant (default: the empirical value of the potential).
    pub gamma: Option<f64>,
    /// Radius constant `C` (default: calibrated).
    pub c_const: Option<f64>,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "flow_dt")]
    pub dt: f64,
    #[serde(default = "yes")]
    pub audit: bool,
    #[serde(default = "max_orbits")]
    pub max_orbits: usize,
    /// Also measure the remainder on the amplitude ladder `2^-6 .. 2^-10 ρ`.
    #[serde(default)]
    pub residual_ladder: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Sobolev index of the size normalisation.
    #[serde(default = "unit")]
    pub s: f64,
    pub size: f64,
    /// Amplitude decay exponent (default `s + 1`).
    pub decay: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub d: usize,
    pub k_max: i32,
    #[serde(default = "one")]
    pub p: usize,
    #[serde(default = "plus_one")]
    pub sigma: f64,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default = "yes")]
    pub dealias: bool,
    #[serde(default = "default_hs")]
    pub hs: Vec<f64>,
    /// `s` and `N` of the `N_{N,s}` observable.
    pub nns_s: Option<f64>,
    pub nns_n: Option<u64>,
    pub initial: InitialConfig,
    /// Potentials use seeds `seed, seed + 1, …`.
    #[serde(default = "one_u64")]
    pub potential_seeds: u64,
    /// Seed of the initial data (default: the global seed).
    pub data_seed: Option<u64>,
    pub snapshot_every: Option<u64>,
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "ten")]
    pub cases: usize,
}

fn two() -> usize {
    2
}
fn one() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}
fn ten() -> usize {
    10
}
fn yes() -> bool {
    true
}
fn unit() -> f64 {
    1.0
}
fn plus_one() -> f64 {
    1.0
}
fn flow_dt() -> f64 {
    1e-3
}
fn max_orbits() -> usize {
    nls_birkhoff::polyalg::DEFAULT_MAX_ORBITS
}
fn default_hs() -> Vec<f64> {
    vec![1.0]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_vec(&c).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        let hex = self.hash();
        let mut out = [0u8; 32];
        for (i, o) in out.iter_mut().enumerate() {
            *o = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).expect("hex digest");
        }
        out
    }

    /// The output directory, which must already exist.
    pub fn output_dir(&self) -> Result<&Path, CliError> {
        let dir = self
            .output_dir
            .as_deref()
            .ok_or_else(|| CliError::Validation("no output_dir configured".into()))?;
        if !dir.is_dir() {
            return Err(CliError::Validation(format!(
                "output directory {} does not exist",
                dir.display()
            )));
        }
        Ok(dir)
    }
}
