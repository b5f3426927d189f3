//! The TOML configuration file. Every field has a default; unknown keys are
//! rejected. Command-line flags are applied on top and the result is echoed
//! in the header line of every output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tmedit::alignment::DEFAULT_K;
use tmedit::decode::DecodeConfig;
use tmedit::realign::RealignConfig;
use tmedit::rollin::RollinConfig;
use tmedit::seq::DEFAULT_MAX_LEN;
use tmedit::K_MAX;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Longest accepted sequence, sentinels included.
    pub max_len: usize,
    pub retrieval: Retrieval,
    pub alignment: Alignment,
    pub rollin: Rollin,
    pub synth: Synth,
    pub realign: RealignConfig,
    pub decode: Decode,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            max_len: DEFAULT_MAX_LEN,
            retrieval: Retrieval::default(),
            alignment: Alignment::default(),
            rollin: Rollin::default(),
            synth: Synth::default(),
            realign: RealignConfig::default(),
            decode: Decode::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Retrieval {
    pub tau: f64,
    pub n_max: usize,
    /// Skip TM entries whose id equals the query id.
    pub exclude_self: bool,
}

impl Default for Retrieval {
    fn default() -> Self {
        Retrieval {
            tau: 0.4,
            n_max: 3,
            exclude_self: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Alignment {
    pub k: usize,
    pub k_max: usize,
}

impl Default for Alignment {
    fn default() -> Self {
        Alignment { k: DEFAULT_K, k_max: K_MAX }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rollin {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    /// Substrings per `rnd-del-N` state.
    pub n: usize,
    /// Mean placeholder count per gap for `post-del-extra`.
    pub extra_mean: f64,
}

impl Default for Rollin {
    fn default() -> Self {
        let d = RollinConfig::default();
        Rollin {
            alpha: d.alpha,
            beta: d.beta,
            gamma: d.gamma,
            delta: d.delta,
            epsilon: d.epsilon,
            n: d.n,
            extra_mean: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Synth {
    pub n: usize,
    pub r: f64,
    pub f: f64,
    /// `uniform` or `copy`.
    pub filler: String,
}

impl Default for Synth {
    fn default() -> Self {
        Synth {
            n: 3,
            r: 0.5,
            f: 0.5,
            filler: "uniform".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decode {
    pub max_iters: usize,
    pub zero_plh_penalty: f64,
    pub realign: bool,
}

impl Default for Decode {
    fn default() -> Self {
        let d = DecodeConfig::default();
        Decode {
            max_iters: d.max_iters,
            zero_plh_penalty: d.zero_plh_penalty,
            realign: d.realign,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::usage(format!("invalid config: {m}")));
        if !(0.0..=1.0).contains(&self.retrieval.tau) {
            return bad(format!("retrieval.tau={} outside [0, 1]", self.retrieval.tau));
        }
        if self.alignment.k == 0 {
            return bad("alignment.k must be at least 1".into());
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.synth.r) || !(self.synth.f >= 0.0) {
            return bad("need synth.r in [0, 1] and synth.f >= 0".into());
        }
        if !matches!(self.synth.filler.as_str(), "uniform" | "copy") {
            return bad(format!("synth.filler must be \"uniform\" or \"copy\", got {:?}", self.synth.filler));
        }
        if !(self.decode.zero_plh_penalty >= 0.0) {
            return bad("decode.zero_plh_penalty must be non-negative".into());
        }
        if !(self.rollin.extra_mean >= 0.0) {
            return bad("rollin.extra_mean must be non-negative".into());
        }
        self.rollin_config().validate().or_else(|e| bad(e.to_string()))?;
        self.realign_config().validate().or_else(|e| bad(e.to_string()))?;
        Ok(())
    }

    pub fn rollin_config(&self) -> RollinConfig {
        let r = &self.rollin;
        RollinConfig {
            alpha: r.alpha,
            beta: r.beta,
            gamma: r.gamma,
            delta: r.delta,
            epsilon: r.epsilon,
            n: r.n,
            k: self.alignment.k,
            k_max: self.alignment.k_max,
            seed: self.seed,
        }
    }

    /// The realigner shares the placeholder cap of the alignment section.
    pub fn realign_config(&self) -> RealignConfig {
        RealignConfig {
            k_max: self.alignment.k_max,
            ..self.realign.clone()
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            max_iters: self.decode.max_iters,
            zero_plh_penalty: self.decode.zero_plh_penalty,
            realign: self.decode.realign,
            realign_config: self.realign_config(),
            n_max: self.retrieval.n_max,
            k_max: self.alignment.k_max,
        }
    }
}
