use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use ponzi_core::attacks::{AttackerProfile, Contribution, Deployment};
use ponzi_core::ledger::{Address, Wei};
use ponzi_core::schemes::{wei_serde, SchemeParams, SimEvent};

/// Input of `simulate`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationScenario {
    pub params: SchemeParams,
    #[serde(default)]
    pub deployment: Deployment,
    /// Recipients whose fallback always throws.
    #[serde(default)]
    pub failing: BTreeSet<Address>,
    pub events: Vec<SimEvent>,
}

/// Input of `attack`.
#[derive(Debug, Deserialize)]
#[serde(tag = "attack", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackScenario {
    Dos {
        params: SchemeParams,
        #[serde(default)]
        deployment: Deployment,
        #[serde(default)]
        honest_deposits: Vec<Contribution>,
        attacker: AttackerProfile,
        ticks: u32,
    },
    Shutdown {
        params: SchemeParams,
        #[serde(default)]
        deployment: Deployment,
        #[serde(default)]
        prior_deposits: Vec<Contribution>,
        oscar: Address,
        #[serde(with = "wei_serde")]
        oscar_amount: Wei,
    },
}

/// Parses a JSON file, naming the offending path on schema errors.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        anyhow!("{}: at `{}`: {}", path.display(), at, e.inner())
    })
}
