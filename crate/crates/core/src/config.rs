//! Pipeline configuration file.
//!
//! A flat TOML document. Input paths are resolved against the directory of
//! the configuration file.
//!
//! ```toml
//! prices = "prices.csv"
//! categories = "categories.csv"
//! external = "external.csv"
//! # or: synth = "synth.toml", or an inline [synth] table
//! window = 750
//! step = 20
//! alpha_mode = "calibrate"   # or "fixed" together with alpha = 2.25
//! tolerance = 1e-6
//! output = "out"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corrnet::{TreeWeighting, DEFAULT_STEP, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::ingest::{CsvSchema, GapPolicy, IndexBase};
use crate::synth::SynthConfig;

/// Fixed rescaling coefficient used when none is given.
pub const DEFAULT_ALPHA: f64 = 2.25;

/// Environment variable holding the default number of worker threads.
pub const THREADS_ENV: &str = "ASSETGRAPH_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputSource {
    Files {
        prices: PathBuf,
        categories: PathBuf,
        external: PathBuf,
    },
    Synth {
        /// File the generator settings came from, if any.
        path: Option<PathBuf>,
        config: SynthConfig,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum AlphaMode {
    Fixed { alpha: f64 },
    Calibrate { tolerance: f64, alpha_max: f64 },
}

/// How the exposure to the external index is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// Each analysis window's own exposure, applied from its start.
    #[default]
    Forward,
    /// The most recent completed window's exposure.
    Trailing,
    /// One exposure per stock over the whole aligned span.
    FullSample,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub input: InputSource,
    pub window: usize,
    pub step: usize,
    pub alpha_mode: AlphaMode,
    pub output: PathBuf,
    /// Left out of the manifest: outputs do not depend on it.
    #[serde(skip)]
    pub parallelism: Option<usize>,
    pub index_base: IndexBase,
    pub gap_policy: GapPolicy,
    pub schema: CsvSchema,
    pub beta_mode: BetaMode,
    pub baseline_window: usize,
    pub breakdowns: bool,
    pub tree_weighting: TreeWeighting,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    prices: Option<PathBuf>,
    categories: Option<PathBuf>,
    external: Option<PathBuf>,
    synth: Option<RawSynth>,
    window: Option<usize>,
    step: Option<usize>,
    alpha_mode: Option<String>,
    alpha: Option<f64>,
    tolerance: Option<f64>,
    alpha_max: Option<f64>,
    output: Option<PathBuf>,
    parallelism: Option<usize>,
    #[serde(default)]
    index_base: IndexBase,
    /// Longest gap bridged by carrying the last close forward; 0 drops incomplete tickers.
    #[serde(default)]
    forward_fill_days: usize,
    #[serde(default)]
    schema: Option<CsvSchema>,
    #[serde(default)]
    beta_mode: BetaMode,
    #[serde(default)]
    baseline_window: usize,
    #[serde(default)]
    breakdowns: bool,
    #[serde(default)]
    tree_weighting: TreeWeighting,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawSynth {
    Path(PathBuf),
    Inline(SynthConfig),
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    /// Parse configuration text, resolving relative paths against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let input = match (raw.synth, raw.prices, raw.categories, raw.external) {
            (Some(s), None, None, None) => match s {
                RawSynth::Path(p) => {
                    let p = resolve(p);
                    if !p.exists() {
                        return Err(Error::Config(format!("synth config {} not found", p.display())));
                    }
                    InputSource::Synth {
                        config: SynthConfig::load(&p)?,
                        path: Some(p),
                    }
                }
                RawSynth::Inline(config) => {
                    config.validate()?;
                    InputSource::Synth { path: None, config }
                }
            },
            (None, Some(prices), Some(categories), Some(external)) => InputSource::Files {
                prices: resolve(prices),
                categories: resolve(categories),
                external: resolve(external),
            },
            (Some(_), ..) => return Err(Error::Config("give either synth or input files, not both".into())),
            _ => {
                return Err(Error::Config(
                    "inputs need prices, categories and external, or a synth section".into(),
                ))
            }
        };

        let tolerance = raw.tolerance.unwrap_or(1e-6);
        let alpha_max = raw.alpha_max.unwrap_or(10.0);
        let alpha_mode = match raw.alpha_mode.as_deref() {
            None | Some("fixed") => AlphaMode::Fixed {
                alpha: raw.alpha.unwrap_or(DEFAULT_ALPHA),
            },
            Some("calibrate") => {
                if raw.alpha.is_some() {
                    return Err(Error::Config("alpha is only used with alpha_mode = \"fixed\"".into()));
                }
                AlphaMode::Calibrate { tolerance, alpha_max }
            }
            Some(other) => return Err(Error::Config(format!("unknown alpha_mode {other:?}"))),
        };

        let cfg = Self {
            input,
            window: raw.window.unwrap_or(DEFAULT_WINDOW),
            step: raw.step.unwrap_or(DEFAULT_STEP),
            alpha_mode,
            output: resolve(raw.output.unwrap_or_else(|| PathBuf::from("out"))),
            parallelism: raw.parallelism,
            index_base: raw.index_base,
            gap_policy: match raw.forward_fill_days {
                0 => GapPolicy::DropIncomplete,
                max_days => GapPolicy::ForwardFill { max_days },
            },
            schema: raw.schema.unwrap_or_default(),
            beta_mode: raw.beta_mode,
            baseline_window: raw.baseline_window,
            breakdowns: raw.breakdowns,
            tree_weighting: raw.tree_weighting,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config("window must be at least 2".into()));
        }
        if self.step < 1 {
            return Err(Error::Config("step must be at least 1".into()));
        }
        match self.alpha_mode {
            AlphaMode::Fixed { alpha } if !(alpha >= 0.0 && alpha.is_finite()) => {
                Err(Error::Config(format!("alpha must be finite and non-negative, got {alpha}")))
            }
            AlphaMode::Calibrate { tolerance, alpha_max } if !(tolerance > 0.0 && alpha_max > 0.0) => {
                Err(Error::Config("tolerance and alpha_max must be positive".into()))
            }
            _ if self.parallelism == Some(0) => Err(Error::Config("parallelism must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Worker threads: the config value, else the environment default, else all cores.
    pub fn threads(&self) -> usize {
        self.parallelism
            .or_else(|| std::env::var(THREADS_ENV).ok()?.parse().ok().filter(|&n| n > 0))
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}
