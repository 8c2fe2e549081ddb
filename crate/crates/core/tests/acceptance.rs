//! Acceptance suite. Each test prints one PASS/FAIL line; run with
//! `cargo test --test acceptance -- --nocapture` to see them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use assetgraph::config::{AlphaMode, BetaMode, InputSource, PipelineConfig};
use assetgraph::corrnet::{
    asset_tree, asset_tree_with, correlation_distance, correlation_matrix, pearson, rolling_windows,
    CorrelationMatrix, TreeWeighting, WindowSpec,
};
use assetgraph::grouping::{grouping_coefficient, shuffled_label_expectation};
use assetgraph::ingest::{align_lagged, CategoryMap, TradingCalendar};
use assetgraph::pipeline::{analyze, prepare, run_pipeline};
use assetgraph::returns::{
    beta_series, calibrate_alpha, mean_cross_correlation, modified_returns, AlignedSpan, BetaAnchor,
    CalibrationOptions, ExternalReturnSeries, ReturnPanel,
};
use assetgraph::synth::{generate_market, SynthConfig};

// Timed criteria run one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, name: &str, ok: bool, detail: String) {
    println!("[{}] criterion {id}: {name} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} failed: {detail}");
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn dates(n: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
    (0..n).map(|k| start + Days::new(k as u64)).collect()
}

fn random_panel(rng: &mut ChaCha8Rng, n: usize, len: usize) -> ReturnPanel {
    let common: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let rows = (0..n)
        .map(|_| {
            let load: f64 = rng.random_range(-1.0..1.0);
            common
                .iter()
                .map(|c| load * c + rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let tickers = (0..n).map(|i| format!("N{i}")).collect();
    ReturnPanel::new(tickers, TradingCalendar::new(dates(len)).unwrap(), rows).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> CorrelationMatrix {
    let len = rng.random_range(8..40);
    let panel = random_panel(rng, n, len);
    correlation_matrix(&panel, &WindowSpec { start: 0, length: len, step: 1 }).unwrap()
}

/// Sum of weights in descending order, so equal edge multisets sum identically.
fn canonical_sum(mut w: Vec<f64>) -> f64 {
    w.sort_by(|a, b| b.total_cmp(a));
    w.iter().sum()
}

/// Maximum total correlation over all labeled spanning trees, via Prüfer codes.
fn exhaustive_max(c: &CorrelationMatrix) -> f64 {
    let n = c.len();
    let total = n.pow(n as u32 - 2);
    let mut best = f64::NEG_INFINITY;
    for code in 0..total {
        let mut seq = Vec::with_capacity(n - 2);
        let mut x = code;
        for _ in 0..n - 2 {
            seq.push(x % n);
            x /= n;
        }
        let mut degree = vec![1usize; n];
        for &s in &seq {
            degree[s] += 1;
        }
        let mut weights = Vec::with_capacity(n - 1);
        for &s in &seq {
            let leaf = (0..n).find(|&v| degree[v] == 1).unwrap();
            weights.push(c.get(leaf, s));
            degree[leaf] -= 1;
            degree[s] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
        weights.push(c.get(rest[0], rest[1]));
        best = best.max(canonical_sum(weights));
    }
    best
}

#[test]
fn criterion_1_tree_matches_exhaustive_maximum() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let t0 = Instant::now();
    let mut mismatches = 0;
    for k in 0..200 {
        let n = 3 + k % 4;
        let c = random_matrix(&mut rng, n);
        let tree = asset_tree(&c).unwrap();
        let got = canonical_sum(tree.edges().iter().map(|e| e.rho).collect());
        if got != exhaustive_max(&c) {
            mismatches += 1;
        }
    }
    let elapsed = t0.elapsed();
    report(
        1,
        "spanning tree equals exhaustive maximum",
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!("200 matrices, {mismatches} mismatches, {elapsed:?}"),
    );
}

fn has_ties(c: &CorrelationMatrix) -> bool {
    let n = c.len();
    let mut rho = BTreeSet::new();
    let mut dist = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            let v = c.get(i, j);
            if !rho.insert(v.to_bits()) || !dist.insert(correlation_distance(v).to_bits()) {
                return true;
            }
        }
    }
    false
}

#[test]
fn criterion_2_weight_transform_invariance() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut checked = 0;
    let mut differing = 0;
    while checked < 200 {
        let n = rng.random_range(3..=12);
        let c = random_matrix(&mut rng, n);
        if has_ties(&c) {
            continue;
        }
        checked += 1;
        let by_rho = asset_tree_with(&c, TreeWeighting::Correlation).unwrap().edge_set();
        let by_dist = asset_tree_with(&c, TreeWeighting::Distance).unwrap().edge_set();
        if by_rho != by_dist {
            differing += 1;
        }
    }
    report(
        2,
        "max tree on rho equals min tree on sqrt(2(1-rho))",
        differing == 0,
        format!("{checked} tie-free matrices, {differing} differing edge sets"),
    );
}

#[test]
fn criterion_3_correlation_contract() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut violations = Vec::new();
    let mut worst_affine = 0.0f64;
    for k in 0..100 {
        let n = rng.random_range(2..20);
        let len = rng.random_range(3..200);
        let panel = random_panel(&mut rng, n, len);
        let c = correlation_matrix(&panel, &WindowSpec { start: 0, length: len, step: 1 }).unwrap();
        for i in 0..n {
            if c.get(i, i) != 1.0 {
                violations.push(format!("panel {k}: diagonal {i}"));
            }
            for j in 0..n {
                let v = c.get(i, j);
                if v != c.get(j, i) {
                    violations.push(format!("panel {k}: asymmetric ({i},{j})"));
                }
                if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&v) {
                    violations.push(format!("panel {k}: out of range ({i},{j}) = {v}"));
                }
            }
        }
        // corr(x, a x + b) with a > 0, through both the scalar and the matrix route.
        let x = panel.returns()[0].clone();
        let a: f64 = rng.random_range(0.01..100.0);
        let b: f64 = rng.random_range(-10.0..10.0);
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let pair = ReturnPanel::new(
            vec!["x".into(), "y".into()],
            TradingCalendar::new(dates(len)).unwrap(),
            vec![x.clone(), y.clone()],
        )
        .unwrap();
        let m = correlation_matrix(&pair, &WindowSpec { start: 0, length: len, step: 1 }).unwrap();
        worst_affine = worst_affine
            .max((m.get(0, 1) - 1.0).abs())
            .max((pearson(&x, &y).unwrap() - 1.0).abs());
    }
    let ok = violations.is_empty() && worst_affine <= 1e-12;
    report(
        3,
        "correlation matrices symmetric, unit-diagonal, bounded; affine self-correlation 1",
        ok,
        format!(
            "100 panels, {} violations, worst |corr(x, ax+b) - 1| = {worst_affine:e}",
            violations.len()
        ),
    );
}

/// Span whose position k pairs `rows[i][k]` with external return `u[k]`.
fn span_from(rows: Vec<Vec<f64>>, u: Vec<f64>) -> AlignedSpan {
    let n = u.len();
    let ds = dates(n + 1);
    let tickers = (0..rows.len()).map(|i| format!("J{i:02}")).collect();
    let panel = ReturnPanel::new(tickers, TradingCalendar::new(ds[1..].to_vec()).unwrap(), rows).unwrap();
    let mut ext = u;
    ext.push(0.0);
    let ext = ExternalReturnSeries::new(TradingCalendar::new(ds).unwrap(), ext).unwrap();
    let alignment = align_lagged(panel.calendar(), ext.calendar()).unwrap();
    AlignedSpan::new(&panel, &ext, &alignment).unwrap()
}

#[test]
fn criterion_4_alpha_calibration_exactness() {
    let _g = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let len = 1000;
    let u: Vec<f64> = (0..len).map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
    let rows = (0..8).map(|_| u.iter().map(|x| 2.0 * x).collect()).collect();
    let span = span_from(rows, u);
    let windows = rolling_windows(span.len(), 750, 20).unwrap();
    let betas = beta_series(&span, &windows).unwrap();
    let cal = calibrate_alpha(&span, &betas, &windows, &CalibrationOptions::default()).unwrap();

    // Post-calibration check through the direct route: build M and correlate it.
    let m = modified_returns(&span, &betas, cal.alpha, BetaAnchor::Forward).unwrap();
    let local: Vec<WindowSpec> = windows.iter().filter_map(|w| m.local_window(w)).collect();
    let per_window = mean_cross_correlation(m.span(), &local).unwrap();
    let defined: Vec<f64> = per_window.iter().flatten().copied().collect();
    let post = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let elapsed = t0.elapsed();

    let alpha_ok = (cal.alpha - 2.0).abs() <= 1e-3;
    let post_ok = post.is_some_and(|v| v.abs() <= 1e-6);
    report(
        4,
        "noise-free c = 2 panel calibrates to alpha 2 and zero mean cross-correlation",
        alpha_ok && post_ok && elapsed < Duration::from_secs(10),
        format!(
            "alpha = {:.9} (|err| <= 1e-3: {alpha_ok}), post-calibration mean xcorr = {post:?} (<= 1e-6: {post_ok}), {elapsed:?}",
            cal.alpha
        ),
    );
}

fn synth_pipeline_config(synth: SynthConfig, threads: usize, output: &Path) -> PipelineConfig {
    PipelineConfig {
        input: InputSource::Synth {
            path: None,
            config: synth,
        },
        window: 750,
        step: 20,
        alpha_mode: AlphaMode::Calibrate {
            tolerance: 1e-6,
            alpha_max: 10.0,
        },
        output: output.to_path_buf(),
        parallelism: Some(threads),
        index_base: Default::default(),
        gap_policy: Default::default(),
        schema: Default::default(),
        beta_mode: BetaMode::Forward,
        baseline_window: 0,
        breakdowns: false,
        tree_weighting: TreeWeighting::Correlation,
    }
}

#[test]
fn criterion_5_grouping_signal_detection() {
    const MIN_GAP: f64 = 0.3;
    const PERMUTATIONS: usize = 50;
    let _g = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut true_g, mut perm_g) = (Vec::new(), Vec::new());
    let mut expectation = f64::NAN;
    for seed in 0..20 {
        let cfg = SynthConfig {
            n_sectors: 5,
            stocks_per_sector: 10,
            days: 800,
            sector_loading: 0.8,
            global_loading: 0.0,
            external_loading: 0.0,
            noise_sigma: 1.0,
            seed,
            ..Default::default()
        };
        let market = generate_market(&cfg).unwrap();
        let span = assetgraph::pipeline::aligned_span(&market.panel, &market.external_levels()).unwrap();
        let tickers = market.panel.tickers();
        let labels: Vec<String> = tickers
            .iter()
            .map(|t| market.categories.get(t).unwrap().to_string())
            .collect();
        expectation = shuffled_label_expectation(labels.iter().map(String::as_str));
        for w in rolling_windows(span.len(), 750, 20).unwrap() {
            let tree = asset_tree(&correlation_matrix(span.panel(), &w).unwrap()).unwrap();
            true_g.push(grouping_coefficient(&tree, &market.categories).unwrap());
            for _ in 0..PERMUTATIONS {
                let mut shuffled = labels.clone();
                shuffled.shuffle(&mut rng);
                let cats: CategoryMap = tickers.iter().cloned().zip(shuffled).collect();
                perm_g.push(grouping_coefficient(&tree, &cats).unwrap());
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mt, mp) = (mean(&true_g), mean(&perm_g));
    let sd = (perm_g.iter().map(|g| (g - mp).powi(2)).sum::<f64>() / (perm_g.len() - 1) as f64).sqrt();
    let se = sd / (perm_g.len() as f64).sqrt();
    let elapsed = t0.elapsed();
    let ok = mt - mp >= MIN_GAP && (mp - expectation).abs() <= 3.0 * se && elapsed < Duration::from_secs(60);
    report(
        5,
        "true-label grouping exceeds shuffled-label grouping",
        ok,
        format!(
            "mean G true {mt:.4}, shuffled {mp:.4} (gap >= {MIN_GAP}), analytic {expectation:.4}, \
             |shuffled - analytic| = {:.4} vs 3 SE = {:.4}, {elapsed:?}",
            (mp - expectation).abs(),
            3.0 * se
        ),
    );
}

/// Market for the external-ramp scenario: the lagged external loading steps
/// from 0 to 0.8 at mid-sample.
fn ramp_market(seed: u64) -> SynthConfig {
    SynthConfig {
        n_sectors: 5,
        stocks_per_sector: 10,
        days: 1600,
        sector_loading: 0.2,
        global_loading: 0.0,
        external_loading: 0.0,
        external_loading_end: Some(0.8),
        ramp_start_day: Some(800),
        ramp_end_day: None,
        noise_sigma: 1.0,
        external_sigma: 1.0,
        seed,
        ..Default::default()
    }
}

const RAMP_SEEDS: u64 = 10;

#[test]
fn criterion_6_modified_returns_soften_grouping_decline() {
    let _g = serial();
    let t0 = Instant::now();
    let (mut d_raw, mut d_mod) = (Vec::new(), Vec::new());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for seed in 0..RAMP_SEEDS {
        let cfg = synth_pipeline_config(ramp_market(seed), 1, Path::new("unused"));
        let prep = prepare(&cfg).unwrap();
        let a = analyze(&cfg, &prep).unwrap();
        let n = a.windows.len();
        let half = n / 2;
        let raw: Vec<f64> = a.windows.iter().map(|w| w.raw_g).collect();
        let modified: Vec<f64> = a.windows.iter().map(|w| w.modified_g.unwrap()).collect();
        d_raw.push(mean(&raw[n - half..]) - mean(&raw[..half]));
        d_mod.push(mean(&modified[n - half..]) - mean(&modified[..half]));
    }
    let (mr, mm) = (mean(&d_raw), mean(&d_mod));
    let elapsed = t0.elapsed();
    report(
        6,
        "grouping decline is smaller with modified returns",
        mr < 0.0 && mm > mr && elapsed < Duration::from_secs(120),
        format!("{RAMP_SEEDS} seeds: mean dG raw {mr:.4}, mean dG modified {mm:.4}, {elapsed:?}"),
    );
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        out.insert(rel, std::fs::read(&entry).unwrap());
    }
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn criterion_7_full_scale_performance() {
    let _g = serial();
    let synth = SynthConfig {
        n_sectors: 24,
        stocks_per_sector: 26,
        days: 6200,
        sector_loading: 0.01,
        global_loading: 0.01,
        external_loading: 0.005,
        noise_sigma: 0.015,
        external_sigma: 0.01,
        seed: 624,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_pipeline_config(synth, 4, dir.path());
    let mut times = Vec::new();
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let t0 = Instant::now();
        let summary = run_pipeline(&cfg).unwrap();
        times.push(t0.elapsed());
        assert_eq!(summary.n_windows, 273);
        snapshots.push(read_tree(dir.path()));
    }
    let identical = snapshots[0] == snapshots[1];
    let slowest = *times.iter().max().unwrap();
    report(
        7,
        "624 stocks x 6200 days, full dual pipeline",
        slowest <= Duration::from_secs(120) && identical,
        format!(
            "run times {:?}, {} files byte-identical across reruns: {identical}",
            times,
            snapshots[0].len()
        ),
    );
}

#[test]
fn criterion_8_determinism_across_parallelism() {
    let _g = serial();
    let (one, eight) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut differing = Vec::new();
    let mut compared = 0;
    for seed in 0..RAMP_SEEDS {
        let runs: Vec<BTreeMap<String, Vec<u8>>> = [(1, one.path()), (8, eight.path())]
            .into_iter()
            .map(|(threads, dir)| {
                let out = dir.join(format!("seed{seed}"));
                run_pipeline(&synth_pipeline_config(ramp_market(seed), threads, &out)).unwrap();
                read_tree(&out)
                    .into_iter()
                    .filter(|(k, _)| k.ends_with(".csv"))
                    .collect()
            })
            .collect();
        assert_eq!(
            runs[0].keys().collect::<Vec<_>>(),
            runs[1].keys().collect::<Vec<_>>()
        );
        for (name, bytes) in &runs[0] {
            compared += 1;
            if runs[1][name] != *bytes {
                differing.push(format!("seed {seed}: {name}"));
            }
        }
    }
    report(
        8,
        "CSV outputs identical at parallelism 1 and 8",
        differing.is_empty(),
        format!("{compared} CSV files compared, {} differ {:?}", differing.len(), differing),
    );
}
