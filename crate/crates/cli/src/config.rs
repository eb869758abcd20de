use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use floodmem::synth::DgpConfig;

use crate::CliError;

/// Input files. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub contracts: Option<PathBuf>,
    pub cadaster: Option<PathBuf>,
    pub municipalities: Option<PathBuf>,
    pub omi_zones: Option<PathBuf>,
    pub census_tracts: Option<PathBuf>,
    pub provinces: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub risk: Option<PathBuf>,
    pub flood_extent: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub delimiter: char,
}

/// The flood studied by `diffindiff` and the balance tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub code: String,
    pub date: NaiveDate,
    /// Regions kept in the event-study sample; empty keeps all.
    #[serde(default)]
    pub regions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Inputs,
    pub event: Option<EventConfig>,
    pub tau: String,
    pub fe: String,
    pub design: String,
    pub sweep: bool,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub permutations: usize,
    pub synth: Option<DgpConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: Inputs {
                delimiter: ',',
                ..Inputs::default()
            },
            event: None,
            tau: "10y".into(),
            fe: "omi".into(),
            design: "baseline".into(),
            sweep: false,
            seed: 1,
            threads: None,
            out: "out".into(),
            permutations: 999,
            synth: None,
        }
    }
}

impl RunConfig {
    /// Load a config and resolve its paths. Every referenced input must exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let i = &mut cfg.inputs;
        for p in [
            &mut i.contracts,
            &mut i.cadaster,
            &mut i.municipalities,
            &mut i.omi_zones,
            &mut i.census_tracts,
            &mut i.provinces,
            &mut i.regions,
            &mut i.risk,
            &mut i.flood_extent,
            &mut i.events,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(CliError::config(format!("input {} does not exist", p.display())));
            }
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        Ok(cfg)
    }

    /// SHA-256 of the serialized configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn delimiter(&self) -> Result<u8, CliError> {
        u8::try_from(self.inputs.delimiter)
            .ok()
            .filter(u8::is_ascii)
            .ok_or_else(|| CliError::config("delimiter must be a single ASCII character"))
    }
}

pub fn require<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::config(format!("inputs.{name} is not set")))
}
