//! Experiment configuration files.
//!
//! The format is TOML restricted to top-level keys, one `[problem]` table
//! (with an optional `[problem.pretrain]` table) and one or more
//! `[[method]]` tables. See `docs/config.md` for the full key list.

use std::path::Path;

use serde::Deserialize;

use crate::compression::Compressor;
use crate::error::{Error, Result};
use crate::problems::{LinRegConfig, ProblemKind};
use crate::sketch::Distribution;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub stop_grad_sq: Option<f64>,
    /// Probe count for the assumption checks written to the summary.
    #[serde(default)]
    pub probes: Option<usize>,
    pub problem: ProblemSection,
    #[serde(rename = "method")]
    pub methods: Vec<MethodSection>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum RegField {
    Value(f64),
    Named(RegName),
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum RegName {
    Spectral,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    #[default]
    Zero,
    /// Gaussian entries with standard deviation `init_scale`.
    Random,
    /// Minimizer of a problem built from `[problem.pretrain]`.
    Pretrain,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    #[serde(default)]
    pub shape: Option<(usize, usize)>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clients: Option<usize>,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default)]
    pub init_scale: Option<f64>,
    #[serde(default)]
    pub init_seed: Option<u64>,

    // regularized-linreg
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub features: Option<usize>,
    #[serde(default)]
    pub noise: Option<f64>,
    #[serde(default)]
    pub effective_rank: Option<usize>,
    #[serde(default)]
    pub tail_strength: Option<f64>,
    #[serde(default)]
    pub bias: Option<f64>,
    #[serde(default)]
    pub scale_mean: Option<f64>,
    #[serde(default)]
    pub scale_std: Option<f64>,
    #[serde(default)]
    pub reg_weight: Option<RegField>,
    #[serde(default)]
    pub pretrain: Option<LinRegConfig>,

    // quadratic-pl and nonsmooth-l1
    #[serde(default)]
    pub rows: Option<usize>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default, rename = "L")]
    pub l: Option<f64>,
}

impl ProblemSection {
    pub fn linreg_config(&self) -> Result<LinRegConfig> {
        let need = |v: Option<usize>, k: &str| v.ok_or_else(|| Error::config(format!("problem.{k}"), "required"));
        Ok(LinRegConfig {
            samples: need(self.samples, "samples")?,
            features: need(self.features, "features")?,
            noise: self.noise.unwrap_or(1.0),
            effective_rank: self.effective_rank,
            tail_strength: self.tail_strength.unwrap_or(0.5),
            bias: self.bias.unwrap_or(0.0),
            scale_mean: self.scale_mean.unwrap_or(0.0),
            scale_std: self.scale_std.unwrap_or(1.0),
            seed: self.seed,
        })
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum StepField {
    Value(f64),
    Named(StepName),
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
pub enum StepName {
    /// Largest step allowed by the matching theorem.
    #[serde(rename = "theorem")]
    Theorem,
    /// `scale / L`.
    #[serde(rename = "1/L")]
    InverseL,
    #[serde(rename = "polyak")]
    Polyak,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum CompressorName {
    Identity,
    RandK,
    TopK,
    Dither,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorName {
    Gd,
    Sgd,
    Mvr,
    Page,
    DistributedGd,
    Qgd,
    Marina,
    Ef21,
    Subgradient,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    #[serde(default)]
    pub name: Option<String>,
    pub estimator: EstimatorName,
    #[serde(default = "half")]
    pub p: f64,
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub left_rank: Option<usize>,
    #[serde(default)]
    pub right_rank: Option<usize>,
    #[serde(default = "gaussian")]
    pub left: Distribution,
    #[serde(default = "gaussian")]
    pub right: Distribution,
    #[serde(default = "theorem")]
    pub stepsize: StepField,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default)]
    pub compressor: Option<CompressorName>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub levels: Option<u32>,
    /// Use the PL variants for the stepsize and the Lyapunov weight.
    #[serde(default)]
    pub pl: bool,
}

fn half() -> f64 {
    0.5
}

fn gaussian() -> Distribution {
    Distribution::Gaussian
}

fn theorem() -> StepField {
    StepField::Named(StepName::Theorem)
}

impl MethodSection {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| serde_name(self.estimator))
    }

    pub fn compressor(&self) -> Result<Compressor> {
        let k = || {
            self.k
                .ok_or_else(|| Error::config("method.k", "required by this compressor"))
        };
        Ok(match self.compressor.unwrap_or(CompressorName::Identity) {
            CompressorName::Identity => Compressor::Identity,
            CompressorName::RandK => Compressor::RandK { k: k()? },
            CompressorName::TopK => Compressor::TopK { k: k()? },
            CompressorName::Dither => Compressor::Dither {
                levels: self
                    .levels
                    .ok_or_else(|| Error::config("method.levels", "required by dither"))?,
            },
        })
    }
}

fn serde_name(e: EstimatorName) -> String {
    match e {
        EstimatorName::Gd => "gd",
        EstimatorName::Sgd => "sgd",
        EstimatorName::Mvr => "mvr",
        EstimatorName::Page => "page",
        EstimatorName::DistributedGd => "distributed-gd",
        EstimatorName::Qgd => "qgd",
        EstimatorName::Marina => "marina",
        EstimatorName::Ef21 => "ef21",
        EstimatorName::Subgradient => "subgradient",
    }
    .to_string()
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
            context: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        ExperimentConfig::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("method", "at least one [[method]] table is required"));
        }
        if let Some(s) = self.stop_grad_sq {
            if s.is_nan() || s < 0.0 {
                return Err(Error::config("stop_grad_sq", "must be nonnegative"));
            }
        }
        let mut names: Vec<String> = Vec::new();
        for m in &self.methods {
            let name = m.display_name();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c)) {
                return Err(Error::config(
                    "method.name",
                    format!("`{name}` must use only [A-Za-z0-9._-]"),
                ));
            }
            if names.contains(&name) {
                return Err(Error::config("method.name", format!("duplicate method name `{name}`")));
            }
            names.push(name);
            if m.horizon == 0 {
                return Err(Error::config("method.T", "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seeds = [1, 2]

[problem]
kind = "quadratic-pl"
shape = [2, 2]
mu = 0.5
L = 2.0
seed = 3

[[method]]
estimator = "page"
q = 0.5
T = 10
stepsize = "theorem"

[[method]]
name = "sgd-small"
estimator = "sgd"
stepsize = 0.01
T = 10
"#;

    #[test]
    fn parses_basic_config() {
        let c = ExperimentConfig::parse(BASIC, "basic").unwrap();
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.methods.len(), 2);
        assert_eq!(c.methods[0].display_name(), "page");
        assert_eq!(c.methods[1].stepsize, StepField::Value(0.01));
        assert_eq!(c.problem.l, Some(2.0));
    }

    #[test]
    fn empty_seed_list_names_the_field() {
        let text = BASIC.replace("seeds = [1, 2]", "seeds = []");
        match ExperimentConfig::parse(&text, "x") {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "seeds"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let text = BASIC.replace("q = 0.5", "q = = 0.5");
        let err = ExperimentConfig::parse(&text, "cfg.toml").unwrap_err().to_string();
        assert!(err.contains("cfg.toml"));
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BASIC.replace("q = 0.5", "qq = 0.5");
        assert!(ExperimentConfig::parse(&text, "x").is_err());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let text = BASIC.replace("name = \"sgd-small\"", "name = \"page\"");
        assert!(ExperimentConfig::parse(&text, "x").is_err());
    }
}
