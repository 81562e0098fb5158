//! Run configuration. Precedence is flags > config file > defaults; the
//! resolved value is written next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pinrefine_core::datasmith::{CorruptConfig, CorruptSource, EditMix};
use pinrefine_core::inventory::SyllableInventory;
use pinrefine_core::refine::chat::ChatEndpoint;
use pinrefine_core::refine::dict::HomophoneDictionary;
use pinrefine_core::refine::{LatticeConfig, RefineConfig, RefineWeights};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: Synth,
    pub decode: Decode,
    pub refine: Refine,
    pub lm: Lm,
    pub endpoint: ChatEndpoint,
    pub data: Data,
    pub loss: Loss,
}


/// Unset paths fall back to the shipped resources.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub inventory: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Synth {
    pub frames_per_token: usize,
    pub blank_gap: usize,
    pub noise: f64,
}

impl Default for Synth {
    fn default() -> Self {
        Self {
            frames_per_token: 2,
            blank_gap: 1,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMethod {
    Beam,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decode {
    pub method: DecodeMethod,
    pub beam_width: usize,
    pub k: usize,
    /// Skip token extensions whose frame log-probability is below this.
    pub token_cutoff: Option<f64>,
}

impl Default for Decode {
    fn default() -> Self {
        Self {
            method: DecodeMethod::Beam,
            beam_width: 16,
            k: 5,
            token_cutoff: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Ngram,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Refine {
    pub backend: Backend,
    pub lm: Option<PathBuf>,
    pub beam: usize,
    pub expansion_cap: usize,
    /// Weight given to candidates that come only from homophone expansion.
    pub floor_prob: f64,
    pub w_lm: f64,
    pub w_ac: f64,
    pub w_py: f64,
}

impl Default for Refine {
    fn default() -> Self {
        let core = RefineConfig::default();
        Self {
            backend: Backend::Ngram,
            lm: None,
            beam: core.beam,
            expansion_cap: core.lattice.expansion_cap,
            floor_prob: 0.01,
            w_lm: core.weights.w_lm,
            w_ac: core.weights.w_ac,
            w_py: core.weights.w_py,
        }
    }
}

impl Refine {
    pub fn core(&self) -> Result<RefineConfig> {
        if !(self.floor_prob > 0.0 && self.floor_prob <= 1.0) {
            bail!("refine.floor_prob must lie in (0, 1], got {}", self.floor_prob);
        }
        Ok(RefineConfig {
            lattice: LatticeConfig {
                expansion_cap: self.expansion_cap,
                floor_weight: self.floor_prob.ln(),
            },
            weights: RefineWeights {
                w_lm: self.w_lm,
                w_ac: self.w_ac,
                w_py: self.w_py,
            },
            beam: self.beam,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lm {
    pub order: usize,
    pub k: f64,
}

impl Default for Lm {
    fn default() -> Self {
        Self { order: 3, k: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Data {
    pub include_scores: bool,
    /// Synthetic checkpoints; seeds are offset by the run seed.
    pub sources: Vec<CorruptSource>,
}

fn synthetic(name: &str, cer: f64, pinyin_cer: f64, seed: u64) -> CorruptSource {
    CorruptSource {
        name: name.to_string(),
        corrupt: CorruptConfig {
            cer_target: cer,
            mix: EditMix::default(),
            homophone_bias: 0.7,
        },
        pinyin_cer,
        k: 5,
        seed,
    }
}

impl Default for Data {
    fn default() -> Self {
        Self {
            include_scores: false,
            sources: vec![
                synthetic("early", 0.5, 0.3, 1),
                synthetic("middle", 0.3, 0.15, 2),
                synthetic("late", 0.1, 0.05, 3),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Loss {
    pub lambda_ctc: f64,
    pub alpha: f64,
}

impl Default for Loss {
    fn default() -> Self {
        Self {
            lambda_ctc: pinrefine_core::loss::DEFAULT_LAMBDA_CTC,
            alpha: pinrefine_core::loss::DEFAULT_ALPHA,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.paths.inventory, &self.paths.dictionary, &self.refine.lm]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                bail!("configured path {} does not exist", p.display());
            }
        }
        Ok(())
    }

    /// Writes the resolved config as `<output>.config.toml`.
    pub fn persist_next_to(&self, output: &Path) -> Result<PathBuf> {
        let mut name = output
            .file_name()
            .context("output path has no file name")?
            .to_os_string();
        name.push(".config.toml");
        let path = output.with_file_name(name);
        let text = toml::to_string(self).context("serializing resolved config")?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn inventory(&self) -> Result<SyllableInventory> {
        match &self.paths.inventory {
            None => Ok(SyllableInventory::shipped()),
            Some(p) => {
                let f = fs::File::open(p).with_context(|| format!("opening inventory {}", p.display()))?;
                SyllableInventory::load(std::io::BufReader::new(f))
                    .with_context(|| format!("loading inventory {}", p.display()))
            }
        }
    }

    pub fn dictionary(&self, inv: &SyllableInventory) -> Result<HomophoneDictionary> {
        match &self.paths.dictionary {
            None => Ok(HomophoneDictionary::shipped(inv)?),
            Some(p) => {
                let f = fs::File::open(p).with_context(|| format!("opening dictionary {}", p.display()))?;
                HomophoneDictionary::load(std::io::BufReader::new(f), inv)
                    .with_context(|| format!("loading dictionary {}", p.display()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 7\n[decode]\nk = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.decode.k, 3);
        assert_eq!(cfg.decode.beam_width, 16);
        assert_eq!(cfg.data.sources.len(), 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[decode]\nbeam = 3\n").is_err());
    }
}
