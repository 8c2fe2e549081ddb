//! Log returns, exposure to a lagged external index, modified returns with
//! that exposure removed, and calibration of the removal scale.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use chrono::NaiveDate;

use crate::corrnet::{pearson, WindowSpec};
use crate::error::{Error, Result};
use crate::ingest::{IndexSeries, LaggedAlignment, PricePanel, TradingCalendar};

/// Log returns, one row per ticker. Column `t` is the move from price date
/// `t` to `t + 1` and is dated at `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    tickers: Vec<String>,
    calendar: TradingCalendar,
    returns: Vec<Vec<f64>>,
}

impl ReturnPanel {
    pub fn new(tickers: Vec<String>, calendar: TradingCalendar, returns: Vec<Vec<f64>>) -> Result<Self> {
        if returns.len() != tickers.len() {
            return Err(Error::Data("return rows do not match ticker count".into()));
        }
        for (t, row) in tickers.iter().zip(&returns) {
            if row.len() != calendar.len() {
                return Err(Error::Data(format!("return row for {t:?} has wrong length")));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite return for {t:?}")));
            }
        }
        Ok(Self {
            tickers,
            calendar,
            returns,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn calendar(&self) -> &TradingCalendar {
        &self.calendar
    }

    pub fn returns(&self) -> &[Vec<f64>] {
        &self.returns
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_dates(&self) -> usize {
        self.calendar.len()
    }
}

pub fn log_returns(panel: &PricePanel) -> ReturnPanel {
    let calendar = TradingCalendar::new(panel.calendar().dates()[1..].to_vec()).expect("panel has at least 2 dates");
    let returns = panel
        .prices()
        .iter()
        .map(|row| row.windows(2).map(|w| w[1].ln() - w[0].ln()).collect())
        .collect();
    ReturnPanel::new(panel.tickers().to_vec(), calendar, returns).expect("positive prices give finite returns")
}

/// Log returns of the external index.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalReturnSeries {
    calendar: TradingCalendar,
    returns: Vec<f64>,
}

impl ExternalReturnSeries {
    pub fn new(calendar: TradingCalendar, returns: Vec<f64>) -> Result<Self> {
        if returns.len() != calendar.len() {
            return Err(Error::Data("external returns do not match their calendar".into()));
        }
        if returns.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("external returns contain non-finite values".into()));
        }
        Ok(Self { calendar, returns })
    }

    pub fn from_levels(index: &IndexSeries) -> Result<Self> {
        let v = index.values();
        if v.len() < 2 {
            return Err(Error::Data("external index needs at least 2 dates".into()));
        }
        if v.iter().any(|x| *x <= 0.0) {
            return Err(Error::Data("external index levels must be positive".into()));
        }
        Self::new(
            TradingCalendar::new(index.calendar().dates()[1..].to_vec())?,
            v.windows(2).map(|w| w[1].ln() - w[0].ln()).collect(),
        )
    }

    /// Levels from `base` on `base_date`, compounding each return after it.
    pub fn to_levels(&self, base_date: NaiveDate, base: f64) -> Result<IndexSeries> {
        let mut dates = Vec::with_capacity(self.returns.len() + 1);
        dates.push(base_date);
        dates.extend_from_slice(self.calendar.dates());
        let mut level = base.ln();
        let mut values = vec![base];
        for r in &self.returns {
            level += r;
            values.push(level.exp());
        }
        IndexSeries::new(TradingCalendar::new(dates)?, values)
    }

    pub fn calendar(&self) -> &TradingCalendar {
        &self.calendar
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }
}

/// Domestic returns paired position by position with the lagged external return.
///
/// Position `k` holds the domestic return on the `k`-th aligned domestic date
/// and the external return of the paired, earlier, external date.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSpan {
    panel: ReturnPanel,
    external: Vec<f64>,
    external_dates: Vec<NaiveDate>,
}

impl AlignedSpan {
    /// `alignment` must pair the return calendars of `panel` and `external`.
    pub fn new(panel: &ReturnPanel, external: &ExternalReturnSeries, alignment: &LaggedAlignment) -> Result<Self> {
        let (di, ei) = (alignment.domestic_indices(), alignment.external_indices());
        for (k, (&(e, d), (&a, &b))) in alignment.pairs().iter().zip(di.iter().zip(ei)).enumerate() {
            if panel.calendar().dates().get(a) != Some(&d) || external.calendar().dates().get(b) != Some(&e) {
                return Err(Error::Data(format!("alignment pair {k} does not index these return calendars")));
            }
        }
        let calendar = panel.calendar().select(di)?;
        let rows = panel
            .returns()
            .iter()
            .map(|row| di.iter().map(|&p| row[p]).collect())
            .collect();
        Ok(Self {
            panel: ReturnPanel::new(panel.tickers().to_vec(), calendar, rows)?,
            external: ei.iter().map(|&p| external.returns()[p]).collect(),
            external_dates: ei.iter().map(|&p| external.calendar().dates()[p]).collect(),
        })
    }

    pub fn panel(&self) -> &ReturnPanel {
        &self.panel
    }

    pub fn external(&self) -> &[f64] {
        &self.external
    }

    pub fn external_dates(&self) -> &[NaiveDate] {
        &self.external_dates
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        self.panel.calendar().dates()
    }

    fn check_window(&self, w: &WindowSpec) -> Result<()> {
        if w.end() > self.len() {
            return Err(Error::Data(format!(
                "window [{}, {}) exceeds the aligned span of {}",
                w.start,
                w.end(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// Per-window correlation of each stock with the lagged external return.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSeries {
    tickers: Vec<String>,
    windows: Vec<WindowSpec>,
    /// `betas[i][w]`; `None` where the correlation is undefined.
    betas: Vec<Vec<Option<f64>>>,
}

impl BetaSeries {
    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn windows(&self) -> &[WindowSpec] {
        &self.windows
    }

    pub fn window_starts(&self) -> impl Iterator<Item = usize> + '_ {
        self.windows.iter().map(|w| w.start)
    }

    pub fn get(&self, ticker: usize, window: usize) -> Option<f64> {
        self.betas[ticker][window]
    }

    pub fn row(&self, ticker: usize) -> &[Option<f64>] {
        &self.betas[ticker]
    }
}

pub fn beta_series(span: &AlignedSpan, windows: &[WindowSpec]) -> Result<BetaSeries> {
    for w in windows {
        span.check_window(w)?;
    }
    let betas = span
        .panel
        .returns()
        .par_iter()
        .zip(span.panel.tickers())
        .map(|(row, ticker)| {
            windows
                .iter()
                .map(|w| {
                    let b = pearson(&row[w.range()], &span.external[w.range()]);
                    if b.is_none() {
                        log::warn!("beta of {ticker} undefined in window at {}", w.start);
                    }
                    b
                })
                .collect()
        })
        .collect();
    Ok(BetaSeries {
        tickers: span.panel.tickers().to_vec(),
        windows: windows.to_vec(),
        betas,
    })
}

/// Which exposure window applies to a given day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaAnchor {
    /// The latest window starting at or before the day and still containing it.
    #[default]
    Forward,
    /// The latest window ending at or before the day, held for one step.
    Trailing,
}

/// Governing window index for each position of a span of `len` days.
pub fn governing_windows(windows: &[WindowSpec], len: usize, anchor: BetaAnchor) -> Vec<Option<usize>> {
    let mut out = vec![None; len];
    for (t, slot) in out.iter_mut().enumerate() {
        *slot = match anchor {
            BetaAnchor::Forward => {
                let k = windows.partition_point(|w| w.start <= t);
                k.checked_sub(1).filter(|&k| windows[k].contains(t))
            }
            BetaAnchor::Trailing => {
                let k = windows.partition_point(|w| w.last() <= t);
                k.checked_sub(1).filter(|&k| {
                    let next = windows.get(k + 1).map_or(windows[k].last() + windows[k].step, |w| w.last());
                    t < next
                })
            }
        };
    }
    out
}

/// Domestic returns with `alpha · beta · U` removed, over the covered days.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedReturnPanel {
    span: AlignedSpan,
    alpha: f64,
    positions: Vec<usize>,
}

impl ModifiedReturnPanel {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn panel(&self) -> &ReturnPanel {
        &self.span.panel
    }

    /// The modified returns paired with the same lagged external returns.
    pub fn span(&self) -> &AlignedSpan {
        &self.span
    }

    /// Positions in the source span that each modified column came from.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// A source-span window re-indexed into this panel, if every day is covered.
    pub fn local_window(&self, w: &WindowSpec) -> Option<WindowSpec> {
        let p = self.positions.binary_search(&w.start).ok()?;
        (self.positions.get(p + w.length - 1) == Some(&w.last())).then_some(WindowSpec {
            start: p,
            length: w.length,
            step: w.step,
        })
    }
}

pub fn modified_returns(
    span: &AlignedSpan,
    betas: &BetaSeries,
    alpha: f64,
    anchor: BetaAnchor,
) -> Result<ModifiedReturnPanel> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be finite and non-negative, got {alpha}")));
    }
    if betas.tickers() != span.panel.tickers() {
        return Err(Error::Data("beta series tickers do not match the panel".into()));
    }
    for w in betas.windows() {
        span.check_window(w)?;
    }
    let gov = governing_windows(betas.windows(), span.len(), anchor);
    let positions: Vec<usize> = (0..span.len()).filter(|&t| gov[t].is_some()).collect();
    let excluded = span.len() - positions.len();
    if excluded > 0 {
        log::warn!("{excluded} days fall outside every beta window and are excluded from modified returns");
    }
    if positions.is_empty() {
        return Err(Error::Data("no day is covered by a beta window".into()));
    }
    let u = &span.external;
    let rows = span
        .panel
        .returns()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            positions
                .iter()
                .map(|&t| match (alpha == 0.0, gov[t].and_then(|w| betas.get(i, w))) {
                    (false, Some(beta)) => row[t] - alpha * beta * u[t],
                    _ => row[t],
                })
                .collect()
        })
        .collect();
    let dates: Vec<NaiveDate> = positions.iter().map(|&t| span.dates()[t]).collect();
    let modified = AlignedSpan {
        panel: ReturnPanel::new(span.panel.tickers().to_vec(), TradingCalendar::new(dates)?, rows)?,
        external: positions.iter().map(|&t| u[t]).collect(),
        external_dates: positions.iter().map(|&t| span.external_dates[t]).collect(),
    };
    Ok(ModifiedReturnPanel {
        span: modified,
        alpha,
        positions,
    })
}

/// Mean over stocks of the correlation with the lagged external return, per window.
///
/// Undefined correlations are left out of the mean; a window where all are
/// undefined yields `None`.
pub fn mean_cross_correlation(span: &AlignedSpan, windows: &[WindowSpec]) -> Result<Vec<Option<f64>>> {
    for w in windows {
        span.check_window(w)?;
    }
    Ok(windows
        .par_iter()
        .map(|w| {
            let u = &span.external[w.range()];
            mean_defined(span.panel.returns().iter().map(|row| pearson(&row[w.range()], u)))
        })
        .collect())
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, count) = values.flatten().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Target bound on the absolute objective.
    pub tolerance: f64,
    /// Upper end of the search interval.
    pub alpha_max: f64,
    pub anchor: BetaAnchor,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            alpha_max: 10.0,
            anchor: BetaAnchor::Forward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    /// The objective at zero was already within tolerance.
    Zero,
    Bisection,
    /// No sign change on the search interval.
    GoldenSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaCalibration {
    pub alpha: f64,
    /// Signed time-averaged mean cross-correlation at `alpha`; `None` if undefined.
    pub objective: Option<f64>,
    pub iterations: usize,
    pub method: SearchMethod,
    pub tolerance: f64,
    pub tolerance_met: bool,
}

/// Centered window sums for one stock, enough to evaluate its correlation
/// with the external return for any alpha.
#[derive(Debug, Clone, Copy)]
struct WindowMoments {
    ss: f64,
    sz: f64,
    zz: f64,
    su: f64,
    zu: f64,
}

/// Objective of the alpha search evaluated in closed form.
///
/// Inside a window `M = S - alpha Z` with `Z(t) = beta(t) U(t)`, so every
/// centered second moment of `M` is a quadratic in alpha.
pub struct AlphaObjective {
    /// Per window: external sum of squares and per-stock moments.
    windows: Vec<(f64, Vec<WindowMoments>)>,
}

impl AlphaObjective {
    pub fn new(span: &AlignedSpan, betas: &BetaSeries, windows: &[WindowSpec], anchor: BetaAnchor) -> Result<Self> {
        for w in windows.iter().chain(betas.windows()) {
            span.check_window(w)?;
        }
        let gov = governing_windows(betas.windows(), span.len(), anchor);
        let usable: Vec<&WindowSpec> = windows
            .iter()
            .filter(|w| w.range().all(|t| gov[t].is_some()))
            .collect();
        if usable.is_empty() {
            return Err(Error::Data("no analysis window is covered by beta windows".into()));
        }
        let rows = span.panel.returns();
        let windows = usable
            .par_iter()
            .map(|w| {
                let n = w.length as f64;
                let u = &span.external[w.range()];
                let mu = u.iter().sum::<f64>() / n;
                let uc: Vec<f64> = u.iter().map(|x| x - mu).collect();
                let uu = uc.iter().map(|x| x * x).sum::<f64>();
                let mut z = vec![0.0; w.length];
                let moments = rows
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        let s = &row[w.range()];
                        for (k, t) in w.range().enumerate() {
                            z[k] = gov[t].and_then(|g| betas.get(i, g)).unwrap_or(0.0) * span.external[t];
                        }
                        let ms = s.iter().sum::<f64>() / n;
                        let mz = z.iter().sum::<f64>() / n;
                        let mut m = WindowMoments {
                            ss: 0.0,
                            sz: 0.0,
                            zz: 0.0,
                            su: 0.0,
                            zu: 0.0,
                        };
                        for k in 0..w.length {
                            let (sc, zc) = (s[k] - ms, z[k] - mz);
                            m.ss += sc * sc;
                            m.sz += sc * zc;
                            m.zz += zc * zc;
                            m.su += sc * uc[k];
                            m.zu += zc * uc[k];
                        }
                        m
                    })
                    .collect();
                (uu, moments)
            })
            .collect();
        Ok(Self { windows })
    }

    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    /// Mean cross-correlation per covered window at `alpha`.
    pub fn per_window(&self, alpha: f64) -> Vec<Option<f64>> {
        self.windows
            .iter()
            .map(|(uu, moments)| {
                if !(*uu > 0.0) {
                    return None;
                }
                mean_defined(moments.iter().map(|m| {
                    let var = m.ss - 2.0 * alpha * m.sz + alpha * alpha * m.zz;
                    // Below this the quadratic is dominated by cancellation error.
                    let floor = 1e-13 * (m.ss + alpha * alpha * m.zz);
                    (var > floor).then(|| ((m.su - alpha * m.zu) / (var * uu).sqrt()).clamp(-1.0, 1.0))
                }))
            })
            .collect()
    }

    /// Time average of the defined per-window means.
    pub fn value(&self, alpha: f64) -> Option<f64> {
        mean_defined(self.per_window(alpha).into_iter())
    }
}

const BRACKET_GRID: usize = 64;
const MAX_ITERATIONS: usize = 200;
const ALPHA_XTOL: f64 = 1e-10;

/// Search for the alpha that drives the time-averaged mean cross-correlation
/// of the modified returns to zero.
///
/// A sign change located on a uniform grid is refined by bisection. Without
/// one, golden-section search minimizes the absolute objective around the
/// best grid point. Ties go to the smaller alpha.
pub fn calibrate_alpha(
    span: &AlignedSpan,
    betas: &BetaSeries,
    windows: &[WindowSpec],
    options: &CalibrationOptions,
) -> Result<AlphaCalibration> {
    if !(options.tolerance > 0.0) {
        return Err(Error::Config("calibration tolerance must be positive".into()));
    }
    if !(options.alpha_max > 0.0 && options.alpha_max.is_finite()) {
        return Err(Error::Config("alpha_max must be positive and finite".into()));
    }
    let objective = AlphaObjective::new(span, betas, windows, options.anchor)?;
    Ok(search_alpha(|a| objective.value(a), options))
}

pub(crate) fn search_alpha(f: impl Fn(f64) -> Option<f64>, options: &CalibrationOptions) -> AlphaCalibration {
    let tol = options.tolerance;
    let done = |alpha: f64, objective: Option<f64>, iterations: usize, method: SearchMethod| AlphaCalibration {
        alpha,
        objective,
        iterations,
        method,
        tolerance: tol,
        tolerance_met: objective.is_some_and(|v| v.abs() <= tol),
    };

    let f0 = f(0.0);
    if f0.is_some_and(|v| v.abs() <= tol) {
        return done(0.0, f0, 0, SearchMethod::Zero);
    }
    let grid: Vec<(f64, Option<f64>)> = (0..=BRACKET_GRID)
        .map(|j| {
            let a = options.alpha_max * j as f64 / BRACKET_GRID as f64;
            (a, if j == 0 { f0 } else { f(a) })
        })
        .collect();

    let first_defined = grid.iter().position(|(_, v)| v.is_some());
    let bracket = first_defined.and_then(|start| {
        let sign = grid[start].1.unwrap().signum();
        let mut prev = start;
        for (j, &(_, value)) in grid.iter().enumerate().skip(start + 1) {
            if let Some(v) = value {
                if v == 0.0 || v.signum() != sign {
                    return Some((prev, j));
                }
                prev = j;
            }
        }
        None
    });

    if let Some((lo_j, hi_j)) = bracket {
        let (mut lo, mut hi) = (grid[lo_j].0, grid[hi_j].0);
        if grid[hi_j].1 == Some(0.0) {
            return done(hi, Some(0.0), 0, SearchMethod::Bisection);
        }
        let lo_sign = grid[lo_j].1.unwrap().signum();
        let mut iterations = 0;
        while iterations < MAX_ITERATIONS && hi - lo > ALPHA_XTOL {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            match f(mid) {
                Some(v) if v.abs() <= tol => return done(mid, Some(v), iterations, SearchMethod::Bisection),
                Some(v) if v.signum() == lo_sign => lo = mid,
                Some(_) => hi = mid,
                // Undefined at the midpoint: every modified series vanished there.
                None => hi = mid,
            }
        }
        let alpha = 0.5 * (lo + hi);
        return done(alpha, f(alpha), iterations, SearchMethod::Bisection);
    }

    // No sign change: minimize |f| around the best grid point.
    let score = |v: Option<f64>| v.map_or(f64::INFINITY, f64::abs);
    let best_j = (0..grid.len()).fold(0, |b, j| if score(grid[j].1) < score(grid[b].1) { j } else { b });
    let mut lo = grid[best_j.saturating_sub(1)].0;
    let mut hi = grid[(best_j + 1).min(BRACKET_GRID)].0;
    let (mut best_a, mut best_v) = grid[best_j];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS && hi - lo > ALPHA_XTOL {
        iterations += 1;
        for (x, v) in [(x1, f1), (x2, f2)] {
            let s = score(v);
            if s < score(best_v) || (s == score(best_v) && x < best_a) {
                best_a = x;
                best_v = v;
            }
        }
        if score(f1) <= score(f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    done(best_a, best_v, iterations, SearchMethod::GoldenSection)
}
