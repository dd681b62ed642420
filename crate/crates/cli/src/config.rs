use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use timechange_sv::{PriorKind, PriorSpec, SamplerConfig};

use crate::CliError;

/// Options of the `simulate` command.
///
/// The Euler scheme runs with step `delta` and keeps every `thin`-th point,
/// so observations are `delta * thin` apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOptions {
    pub n_obs: usize,
    pub delta: f64,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

/// How the observation file is laid out.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataOptions {
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Spacing for files with a single `value` column; omit for `time,value`.
    #[serde(default)]
    pub spacing: Option<f64>,
}

/// A single JSON document driving every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    /// True parameter values, required by `simulate`.
    #[serde(default)]
    pub truth: BTreeMap<String, f64>,
    /// Per-parameter priors; unlisted parameters get a flat prior.
    #[serde(default)]
    pub priors: BTreeMap<String, PriorKind>,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
    /// Independent chains for `fit`, seeded `seed, seed + 1, …`.
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default)]
    pub data: DataOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimulateOptions>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        timechange_sv::model_by_name(&cfg.model)?;
        if cfg.chains == 0 {
            return Err(CliError::Config("chains must be at least 1".into()));
        }
        if let Some(s) = &cfg.sampler {
            if s.m < 1 {
                return Err(CliError::Config("m must be at least 1".into()));
            }
        }
        Ok(cfg)
    }

    pub fn prior(&self) -> Result<PriorSpec, CliError> {
        let model = timechange_sv::model_by_name(&self.model)?;
        let mut prior = PriorSpec::flat(model.param_specs());
        for (name, kind) in &self.priors {
            prior = prior.with(name, *kind)?;
        }
        Ok(prior)
    }

    pub fn sampler(&self) -> Result<&SamplerConfig, CliError> {
        self.sampler
            .as_ref()
            .ok_or_else(|| CliError::Config("`sampler` section missing".into()))
    }

    /// `explicit` if given, else the configured output directory.
    pub fn out_dir(&self, explicit: Option<&Path>) -> Result<PathBuf, CliError> {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .ok_or_else(|| CliError::Config("no output directory given".into()))
    }
}
