//! End-to-end runs: ingest, alignment, exposure removal, per-window trees
//! for raw and modified returns, grouping series, and deterministic output.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{AlphaMode, BetaMode, InputSource, PipelineConfig};
use crate::corrnet::{asset_tree_with, correlation_matrix, rolling_windows, sorted_edges, SpanningTree, WindowSpec};
use crate::error::{Error, Result};
use crate::grouping::{grouping_coefficient, per_category_breakdown, relative_to};
use crate::ingest::{
    align_lagged, build_custom_index, read_categories, read_index, read_panel, CategoryMap, ExcludedTicker,
    IndexSeries, PricePanel,
};
use crate::returns::{
    beta_series, calibrate_alpha, log_returns, mean_cross_correlation, modified_returns, AlignedSpan,
    AlphaCalibration, BetaAnchor, BetaSeries, CalibrationOptions, ExternalReturnSeries,
};
use crate::synth::generate_market;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Align,
    Calibrate,
    Windows,
    Grouping,
    Emit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit enum serializes");
        f.write_str(s.as_str().unwrap_or("unknown"))
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub error: Error,
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        self.stage == Stage::Config || self.error.is_config()
    }

    /// Process exit status: 2 for configuration problems, 3 for data problems.
    pub fn exit_code(&self) -> i32 {
        if self.is_config() {
            2
        } else {
            3
        }
    }

    /// Single-line JSON report for stderr.
    pub fn report(&self) -> String {
        serde_json::json!({
            "stage": self.stage,
            "kind": if self.is_config() { "config error" } else { "data error" },
            "message": self.error.to_string(),
        })
        .to_string()
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage: {}", self.stage, self.error)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|error| PipelineError { stage, error })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: Option<PathBuf>,
    pub sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything the analysis needs, read and validated.
#[derive(Debug, Clone)]
pub struct LoadedInputs {
    pub panel: PricePanel,
    pub categories: CategoryMap,
    pub external: IndexSeries,
    pub digests: Vec<InputDigest>,
    pub excluded: Vec<ExcludedTicker>,
}

fn read_input(role: &str, path: &Path) -> Result<(Vec<u8>, InputDigest)> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("{role} file {} not found", path.display())),
        _ => Error::io(path, e),
    })?;
    let digest = InputDigest {
        role: role.to_string(),
        path: Some(path.to_path_buf()),
        sha256: sha256_hex(&bytes),
    };
    Ok((bytes, digest))
}

pub fn load_inputs(config: &PipelineConfig) -> std::result::Result<LoadedInputs, PipelineError> {
    match &config.input {
        InputSource::Files {
            prices,
            categories,
            external,
        } => {
            // Resolve every file before parsing any of them.
            let (p_bytes, p_digest) = read_input("prices", prices).at(Stage::Config)?;
            let (c_bytes, c_digest) = read_input("categories", categories).at(Stage::Config)?;
            let (e_bytes, e_digest) = read_input("external", external).at(Stage::Config)?;
            let name = |p: &Path| p.display().to_string();
            let load = read_panel(&p_bytes[..], &name(prices), &config.schema, config.gap_policy).at(Stage::Ingest)?;
            let cats = read_categories(&c_bytes[..], &name(categories)).at(Stage::Ingest)?;
            let ext = read_index(&e_bytes[..], &name(external)).at(Stage::Ingest)?;
            Ok(LoadedInputs {
                panel: load.panel,
                categories: cats,
                external: ext,
                digests: vec![p_digest, c_digest, e_digest],
                excluded: load.excluded,
            })
        }
        InputSource::Synth { path, config: synth } => {
            let digest = match path {
                Some(p) => read_input("synth", p).at(Stage::Config)?.1,
                None => InputDigest {
                    role: "synth".into(),
                    path: None,
                    sha256: sha256_hex(
                        toml::to_string(synth)
                            .map_err(|e| Error::Config(e.to_string()))
                            .at(Stage::Config)?
                            .as_bytes(),
                    ),
                },
            };
            let market = generate_market(synth).at(Stage::Ingest)?;
            let external = market.external_levels();
            Ok(LoadedInputs {
                panel: market.panel,
                categories: market.categories,
                external,
                digests: vec![digest],
                excluded: Vec::new(),
            })
        }
    }
}

/// Aligned domestic and lagged external returns on the paired trading days.
///
/// Both markets are restricted to the paired days before returns are taken,
/// so position `k` holds the domestic move between paired days `k` and `k+1`
/// and the external move between their external partners.
pub fn aligned_span(panel: &PricePanel, external: &IndexSeries) -> Result<AlignedSpan> {
    let pairs = align_lagged(panel.calendar(), external.calendar())?;
    if pairs.len() < 2 {
        return Err(Error::Data(format!("only {} lagged day pairs; returns need 2", pairs.len())));
    }
    let domestic = panel.select_dates(pairs.domestic_indices())?;
    let external = external.select_dates(pairs.external_indices())?;
    let returns = log_returns(&domestic);
    let ext_returns = ExternalReturnSeries::from_levels(&external)?;
    let return_pairs = align_lagged(returns.calendar(), ext_returns.calendar())?;
    if return_pairs.len() != returns.n_dates() {
        return Err(Error::Data("paired return calendars do not line up".into()));
    }
    AlignedSpan::new(&returns, &ext_returns, &return_pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaReport {
    pub mode: &'static str,
    pub alpha: f64,
    pub objective: Option<f64>,
    pub iterations: usize,
    pub flag: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<AlphaCalibration>,
}

impl AlphaReport {
    pub fn tolerance_unmet(&self) -> bool {
        self.flag == "tolerance_unmet"
    }
}

/// Prepared span, beta estimates and alpha for one configuration.
pub struct Prepared {
    pub inputs: LoadedInputs,
    pub span: AlignedSpan,
    pub windows: Vec<WindowSpec>,
    pub betas: BetaSeries,
    pub anchor: BetaAnchor,
    pub alpha: AlphaReport,
}

pub fn prepare(config: &PipelineConfig) -> std::result::Result<Prepared, PipelineError> {
    config.validate().at(Stage::Config)?;
    let inputs = load_inputs(config)?;
    inputs.categories.check_covers(inputs.panel.tickers()).at(Stage::Ingest)?;
    let span = aligned_span(&inputs.panel, &inputs.external).at(Stage::Align)?;
    let windows = rolling_windows(span.len(), config.window, config.step).at(Stage::Windows)?;
    let (beta_windows, anchor) = match config.beta_mode {
        BetaMode::Forward => (windows.clone(), BetaAnchor::Forward),
        BetaMode::Trailing => (windows.clone(), BetaAnchor::Trailing),
        BetaMode::FullSample => (
            vec![WindowSpec {
                start: 0,
                length: span.len(),
                step: span.len(),
            }],
            BetaAnchor::Forward,
        ),
    };
    let betas = beta_series(&span, &beta_windows).at(Stage::Calibrate)?;
    let alpha = match config.alpha_mode {
        AlphaMode::Fixed { alpha } => AlphaReport {
            mode: "fixed",
            alpha,
            objective: None,
            iterations: 0,
            flag: "fixed",
            calibration: None,
        },
        AlphaMode::Calibrate { tolerance, alpha_max } => {
            let options = CalibrationOptions {
                tolerance,
                alpha_max,
                anchor,
            };
            let c = calibrate_alpha(&span, &betas, &windows, &options).at(Stage::Calibrate)?;
            if !c.tolerance_met {
                log::warn!("alpha calibration did not reach tolerance {tolerance}: objective {:?}", c.objective);
            }
            AlphaReport {
                mode: "calibrate",
                alpha: c.alpha,
                objective: c.objective,
                iterations: c.iterations,
                flag: if c.tolerance_met { "ok" } else { "tolerance_unmet" },
                calibration: Some(c),
            }
        }
    };
    Ok(Prepared {
        inputs,
        span,
        windows,
        betas,
        anchor,
        alpha,
    })
}

/// Results for one analysis window.
#[derive(Debug, Clone)]
pub struct WindowResult {
    pub window: WindowSpec,
    pub start_date: NaiveDate,
    pub raw_tree: SpanningTree,
    pub modified_tree: Option<SpanningTree>,
    pub raw_mean_xcorr: Option<f64>,
    pub modified_mean_xcorr: Option<f64>,
    pub raw_g: f64,
    pub modified_g: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub windows: Vec<WindowResult>,
    pub raw_relative: Option<Vec<f64>>,
    pub modified_relative: Option<Vec<f64>>,
}

pub fn analyze(config: &PipelineConfig, prep: &Prepared) -> std::result::Result<Analysis, PipelineError> {
    let modified = modified_returns(&prep.span, &prep.betas, prep.alpha.alpha, prep.anchor).at(Stage::Windows)?;
    let raw_xcorr = mean_cross_correlation(&prep.span, &prep.windows).at(Stage::Windows)?;
    let cats = &prep.inputs.categories;

    let results = prep
        .windows
        .par_iter()
        .zip(raw_xcorr)
        .map(|(w, raw_mean)| -> Result<WindowResult> {
            let raw_tree = asset_tree_with(&correlation_matrix(prep.span.panel(), w)?, config.tree_weighting)?;
            let raw_g = grouping_coefficient(&raw_tree, cats)?;
            let (modified_tree, modified_mean, modified_g) = match modified.local_window(w) {
                Some(local) => {
                    let tree = asset_tree_with(&correlation_matrix(modified.panel(), &local)?, config.tree_weighting)?;
                    let mean = mean_cross_correlation(modified.span(), &[local])?[0];
                    let g = grouping_coefficient(&tree, cats)?;
                    (Some(tree), mean, Some(g))
                }
                None => (None, None, None),
            };
            Ok(WindowResult {
                window: *w,
                start_date: prep.span.dates()[w.start],
                raw_tree,
                modified_tree,
                raw_mean_xcorr: raw_mean,
                modified_mean_xcorr: modified_mean,
                raw_g,
                modified_g,
            })
        })
        .collect::<Result<Vec<_>>>()
        .at(Stage::Windows)?;

    let baseline = config.baseline_window;
    if baseline >= results.len() {
        return Err(Error::Config(format!(
            "baseline_window {baseline} out of range for {} windows",
            results.len()
        )))
        .at(Stage::Grouping);
    }
    let raw_g: Vec<f64> = results.iter().map(|r| r.raw_g).collect();
    let raw_relative = relative_to(&raw_g, baseline);
    // The modified baseline is the first covered window at or after the raw one.
    let modified_relative = results[baseline..]
        .iter()
        .position(|r| r.modified_g.is_some())
        .and_then(|off| {
            let g: Vec<f64> = results.iter().map(|r| r.modified_g.unwrap_or(f64::NAN)).collect();
            relative_to(&g, baseline + off)
        });
    Ok(Analysis {
        windows: results,
        raw_relative,
        modified_relative,
    })
}

/// Output files in emission order, as paths relative to the output directory.
pub struct Artifacts {
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(|x| x.to_string()).unwrap_or_default()
}

fn tree_csv(tree: &SpanningTree) -> Vec<u8> {
    let mut buf = b"ticker_a,ticker_b,rho\n".to_vec();
    for (a, b, rho) in sorted_edges(tree) {
        writeln!(buf, "{a},{b},{rho}").expect("writing to memory");
    }
    buf
}

fn breakdown_csv(tree: &SpanningTree, cats: &CategoryMap) -> Result<Vec<u8>> {
    let mut buf = b"category,internal_edges,nodes\n".to_vec();
    for (c, n) in per_category_breakdown(tree, cats)? {
        writeln!(buf, "{c},{},{}", n.internal_edges, n.nodes).expect("writing to memory");
    }
    Ok(buf)
}

pub fn alpha_json(alpha: &AlphaReport) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(alpha).expect("alpha report serializes");
    v.push(b'\n');
    v
}

#[derive(Debug, Serialize)]
struct ManifestWindow {
    index: usize,
    start: usize,
    length: usize,
    start_date: NaiveDate,
}

#[derive(Debug, Serialize)]
struct ManifestOutput {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a PipelineConfig,
    inputs: &'a [InputDigest],
    excluded_tickers: Vec<&'a str>,
    n_tickers: usize,
    n_price_dates: usize,
    aligned_returns: usize,
    alpha: &'a AlphaReport,
    windows: Vec<ManifestWindow>,
    outputs: Vec<ManifestOutput>,
}

fn rel(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

pub fn render(config: &PipelineConfig, prep: &Prepared, analysis: &Analysis) -> Result<Artifacts> {
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();

    let index = build_custom_index(&prep.inputs.panel, config.index_base);
    let mut buf = b"date,index\n".to_vec();
    for (d, v) in index.calendar().dates().iter().zip(index.values()) {
        writeln!(buf, "{d},{v}").expect("writing to memory");
    }
    files.push(("index.csv".into(), buf));

    let mut buf = b"window_start_date,raw_mean,modified_mean\n".to_vec();
    for r in &analysis.windows {
        writeln!(
            buf,
            "{},{},{}",
            r.start_date,
            fmt_opt(r.raw_mean_xcorr),
            fmt_opt(r.modified_mean_xcorr)
        )
        .expect("writing to memory");
    }
    files.push(("mean_xcorr.csv".into(), buf));

    let mut buf = b"window_start_date,G_raw,G_modified,G_raw_relative,G_modified_relative\n".to_vec();
    for (k, r) in analysis.windows.iter().enumerate() {
        let rel_raw = analysis.raw_relative.as_ref().map(|v| v[k]);
        let rel_mod = analysis.modified_relative.as_ref().map(|v| v[k]);
        writeln!(
            buf,
            "{},{},{},{},{}",
            r.start_date,
            r.raw_g,
            fmt_opt(r.modified_g),
            fmt_opt(rel_raw),
            fmt_opt(rel_mod)
        )
        .expect("writing to memory");
    }
    files.push(("grouping.csv".into(), buf));

    for r in &analysis.windows {
        files.push((
            PathBuf::from("trees_raw").join(format!("tree_{}.csv", r.start_date)),
            tree_csv(&r.raw_tree),
        ));
    }
    for r in &analysis.windows {
        if let Some(t) = &r.modified_tree {
            files.push((
                PathBuf::from("trees_modified").join(format!("tree_{}.csv", r.start_date)),
                tree_csv(t),
            ));
        }
    }
    if config.breakdowns {
        for r in &analysis.windows {
            files.push((
                PathBuf::from("breakdown_raw").join(format!("breakdown_{}.csv", r.start_date)),
                breakdown_csv(&r.raw_tree, &prep.inputs.categories)?,
            ));
            if let Some(t) = &r.modified_tree {
                files.push((
                    PathBuf::from("breakdown_modified").join(format!("breakdown_{}.csv", r.start_date)),
                    breakdown_csv(t, &prep.inputs.categories)?,
                ));
            }
        }
    }
    files.push(("alpha_calibration.json".into(), alpha_json(&prep.alpha)));

    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config,
        inputs: &prep.inputs.digests,
        excluded_tickers: prep.inputs.excluded.iter().map(|e| e.ticker.as_str()).collect(),
        n_tickers: prep.inputs.panel.n_tickers(),
        n_price_dates: prep.inputs.panel.n_dates(),
        aligned_returns: prep.span.len(),
        alpha: &prep.alpha,
        windows: analysis
            .windows
            .iter()
            .enumerate()
            .map(|(index, r)| ManifestWindow {
                index,
                start: r.window.start,
                length: r.window.length,
                start_date: r.start_date,
            })
            .collect(),
        outputs: files
            .iter()
            .map(|(p, b)| ManifestOutput {
                path: rel(p),
                sha256: sha256_hex(b),
            })
            .collect(),
    };
    let mut buf = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    buf.push(b'\n');
    files.push(("manifest.json".into(), buf));
    Ok(Artifacts { files })
}

/// Write artifacts one after another under `dir`.
pub fn emit(artifacts: &Artifacts, dir: &Path) -> Result<()> {
    for (rel, bytes) in &artifacts.files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output: PathBuf,
    pub files: Vec<PathBuf>,
    pub n_windows: usize,
    pub alpha: AlphaReport,
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> std::result::Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
        .at(Stage::Config)?;
    Ok(pool.install(f))
}

/// Run the full pipeline and write every artifact. Nothing is written if
/// any stage before emission fails.
pub fn run_pipeline(config: &PipelineConfig) -> std::result::Result<RunSummary, PipelineError> {
    let (prep, analysis) = with_pool(config.threads(), || -> std::result::Result<_, PipelineError> {
        let prep = prepare(config)?;
        let analysis = analyze(config, &prep)?;
        Ok((prep, analysis))
    })??;
    let artifacts = render(config, &prep, &analysis).at(Stage::Emit)?;
    emit(&artifacts, &config.output).at(Stage::Emit)?;
    Ok(RunSummary {
        output: config.output.clone(),
        files: artifacts.files.iter().map(|(p, _)| p.clone()).collect(),
        n_windows: analysis.windows.len(),
        alpha: prep.alpha,
    })
}

/// Calibrate (or echo the fixed) alpha and write `alpha_calibration.json`.
pub fn run_calibration(config: &PipelineConfig) -> std::result::Result<AlphaReport, PipelineError> {
    let prep = with_pool(config.threads(), || prepare(config))??;
    let artifacts = Artifacts {
        files: vec![("alpha_calibration.json".into(), alpha_json(&prep.alpha))],
    };
    emit(&artifacts, &config.output).at(Stage::Emit)?;
    Ok(prep.alpha)
}
