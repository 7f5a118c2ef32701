//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use denseprompt::backbone::{
    Backbones, OracleBackend, OracleConfig, RealAdapter, RealAdapterConfig,
};
use denseprompt::bench::{BenchConfig, SamplerKind};
use denseprompt::eps::EpsConfig;
use denseprompt::pipeline::PipelineConfig;
use denseprompt::scene::{SceneFamily, SceneParams};
use denseprompt::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Oracle,
    RealAdapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Master seed; every module seed is set from it.
    pub seed: u64,
    /// Threads for independent crops. Never changes results.
    pub workers: usize,
    pub backend: BackendKind,
    pub oracle: OracleConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_adapter: Option<RealAdapterConfig>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub annotate: PipelineConfig,
    pub eval: EvalConfig,
    pub bench: BenchSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            workers: 1,
            backend: BackendKind::Oracle,
            oracle: OracleConfig::default(),
            real_adapter: None,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            annotate: PipelineConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: DataSource,
    pub eval: DataSource,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: DataSource::Scenes(SceneSource {
                first_seed: 1000,
                count: 10,
                ..Default::default()
            }),
            eval: DataSource::Scenes(SceneSource {
                first_seed: 5000,
                count: 20,
                ..Default::default()
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Scenes(SceneSource),
    /// COCO ground truth; image files are relative to the JSON file.
    Coco {
        path: PathBuf,
    },
    /// ODGT ground truth; images are `<ID>.jpg` under `image_dir`
    /// (default: the ODGT file's directory).
    Odgt {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSource {
    pub family: SceneFamily,
    /// Replaces the family preset entirely when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<SceneParams>,
    pub first_seed: u64,
    pub count: usize,
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource {
            family: SceneFamily::DeskCrowd,
            params: None,
            first_seed: 0,
            count: 1,
        }
    }
}

impl SceneSource {
    pub fn params(&self) -> SceneParams {
        self.params.clone().unwrap_or_else(|| self.family.params())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.count as u64)
            .map(|i| self.first_seed + i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { iou_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub scenes: SceneSource,
    /// Grids for the full-decode sweep.
    pub sweep_grids: Vec<usize>,
    /// Grids for the budgeted sampler comparison.
    pub sampler_grids: Vec<usize>,
    pub budgets: Vec<usize>,
    pub samplers: Vec<SamplerKind>,
    pub prompt_threshold: f64,
    pub batch_size: usize,
    pub valid_threshold: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        let eps = EpsConfig::default();
        BenchSection {
            scenes: SceneSource {
                family: SceneFamily::BenchCrowd,
                params: None,
                first_seed: 2000,
                count: 20,
            },
            sweep_grids: vec![16, 32, 64, 128],
            sampler_grids: vec![32, 192],
            budgets: vec![500],
            samplers: vec![SamplerKind::Random, SamplerKind::Eps],
            prompt_threshold: 0.5,
            batch_size: eps.batch_size,
            valid_threshold: eps.threshold,
        }
    }
}

impl BenchSection {
    pub fn bench_config(&self, seed: u64) -> BenchConfig {
        BenchConfig {
            prompt_threshold: self.prompt_threshold,
            eps: EpsConfig {
                batch_size: self.batch_size,
                budget: self.batch_size,
                threshold: self.valid_threshold,
                seed,
            },
        }
    }
}

/// Module seeds that must come from the top-level `seed`.
const DERIVED_SEEDS: [&[&str]; 3] = [
    &["train", "seed"],
    &["annotate", "eps", "seed"],
    &["oracle", "seed"],
];

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub backend: Option<BackendKind>,
}

impl Config {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            None => Config::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("config {}", p.display()))?
            }
        };
        if let Some(s) = ov.seed {
            cfg.seed = s;
        }
        if let Some(w) = ov.workers {
            cfg.workers = w;
        }
        if let Some(b) = ov.backend {
            cfg.backend = b;
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: toml::Table =
            toml::from_str(text).map_err(|e| anyhow::anyhow!(one_line(&e.to_string())))?;
        // a resolved config echoes the master seed everywhere; anything
        // else would be silently overwritten
        let top = value
            .get("seed")
            .cloned()
            .unwrap_or(toml::Value::Integer(0));
        for path in DERIVED_SEEDS {
            let mut cur = Some(&value);
            for (i, key) in path.iter().enumerate() {
                let Some(v) = cur.and_then(|t| t.get(*key)) else {
                    break;
                };
                if i + 1 == path.len() && *v != top {
                    bail!(
                        "{} is set from the top-level seed; remove it",
                        path.join(".")
                    );
                }
                cur = v.as_table();
            }
        }
        toml::from_str(text).map_err(|e| anyhow::anyhow!(one_line(&e.to_string())))
    }

    /// Propagates the master seed and worker count, then validates.
    fn resolve(&mut self) -> Result<()> {
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        self.train.seed = self.seed;
        self.annotate.eps.seed = self.seed;
        self.oracle.seed = self.seed;
        self.annotate.workers = self.workers;
        self.train.validate()?;
        self.annotate.validate()?;
        self.bench.bench_config(self.seed).eps.validate()?;
        if !(0.0..=1.0).contains(&self.eval.iou_threshold) {
            bail!("eval.iou_threshold must lie in [0, 1]");
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration with the worker count
    /// normalised, since it never affects outputs.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.workers = 1;
        c.annotate.workers = 1;
        let text = toml::to_string(&c).expect("configuration serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn backend(&self) -> Result<Box<dyn Backbones>> {
        Ok(match self.backend {
            BackendKind::Oracle => Box::new(OracleBackend::new(self.oracle.clone())?),
            BackendKind::RealAdapter => {
                let Some(rc) = &self.real_adapter else {
                    bail!("backend real-adapter needs a [real_adapter] section with weight paths");
                };
                Box::new(RealAdapter::load(rc.clone())?)
            }
        })
    }
}

pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
