//! Synthetic markets with sector structure, a global factor and a one-day
//! lagged external index.
//!
//! Each stock's daily log return is
//!
//! ```text
//! r_i(t) = global_loading * g(t) + sector_loading * f_c(t)
//!        + external_loading(t) * u(t - 1) + noise_sigma * e_i(t)
//! ```
//!
//! with `g`, `f_c`, `e_i` independent standard normals and `u` normal with
//! standard deviation `external_sigma`.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CategoryMap, IndexSeries, PricePanel, TradingCalendar};
use crate::returns::ExternalReturnSeries;

const BASE_PRICE: f64 = 100.0;

fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).unwrap()
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_sectors: usize,
    pub stocks_per_sector: usize,
    /// Number of price observations per stock.
    pub days: usize,
    #[serde(default)]
    pub sector_loading: f64,
    #[serde(default)]
    pub global_loading: f64,
    /// External loading before the ramp.
    #[serde(default)]
    pub external_loading: f64,
    /// External loading after the ramp; defaults to `external_loading`.
    #[serde(default)]
    pub external_loading_end: Option<f64>,
    /// First day index of the ramp; days before it use `external_loading`.
    #[serde(default)]
    pub ramp_start_day: Option<usize>,
    /// Day index from which `external_loading_end` applies; defaults to `ramp_start_day`.
    #[serde(default)]
    pub ramp_end_day: Option<usize>,
    #[serde(default = "one")]
    pub noise_sigma: f64,
    #[serde(default = "one")]
    pub external_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start_date")]
    pub start_date: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sectors: 2,
            stocks_per_sector: 5,
            days: 800,
            sector_loading: 0.8,
            global_loading: 0.0,
            external_loading: 0.0,
            external_loading_end: None,
            ramp_start_day: None,
            ramp_end_day: None,
            noise_sigma: 1.0,
            external_sigma: 1.0,
            seed: 0,
            start_date: default_start_date(),
        }
    }
}

impl SynthConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("synth config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth config: {m}")));
        if self.n_sectors == 0 || self.stocks_per_sector == 0 {
            return bad("sector and stock counts must be at least 1");
        }
        if self.days < 2 {
            return bad("days must be at least 2");
        }
        let loadings = [
            self.sector_loading,
            self.global_loading,
            self.external_loading,
            self.external_loading_end.unwrap_or(0.0),
        ];
        if loadings.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("loadings must be finite and non-negative");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be positive");
        }
        if !(self.external_sigma > 0.0 && self.external_sigma.is_finite()) {
            return bad("external_sigma must be positive");
        }
        if let (Some(a), Some(b)) = (self.ramp_start_day, self.ramp_end_day) {
            if b < a {
                return bad("ramp_end_day precedes ramp_start_day");
            }
        }
        Ok(())
    }

    /// External loading on day `t`.
    pub fn external_loading_at(&self, t: usize) -> f64 {
        let from = self.external_loading;
        let to = self.external_loading_end.unwrap_or(from);
        let Some(start) = self.ramp_start_day else {
            return from;
        };
        let end = self.ramp_end_day.unwrap_or(start);
        if t < start {
            from
        } else if t >= end {
            to
        } else {
            from + (to - from) * (t - start) as f64 / (end - start) as f64
        }
    }

    pub fn n_stocks(&self) -> usize {
        self.n_sectors * self.stocks_per_sector
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub panel: PricePanel,
    pub categories: CategoryMap,
    pub external: ExternalReturnSeries,
}

impl SyntheticMarket {
    /// External index levels from 100 on the first calendar day.
    pub fn external_levels(&self) -> IndexSeries {
        self.external
            .to_levels(self.panel.calendar().dates()[0], BASE_PRICE)
            .expect("external calendar follows the first panel date")
    }
}

/// Weekdays starting at `start` (moved forward to a weekday).
pub fn weekday_calendar(start: NaiveDate, days: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(days);
    let mut d = start;
    while out.len() < days {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

pub fn generate_market(config: &SynthConfig) -> Result<SyntheticMarket> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_stocks();
    let (ws, wk) = (width(config.n_sectors), width(config.stocks_per_sector));
    let mut tickers = Vec::with_capacity(n);
    let mut sector_of = Vec::with_capacity(n);
    let mut categories = CategoryMap::new();
    for c in 0..config.n_sectors {
        for k in 0..config.stocks_per_sector {
            let t = format!("S{c:0ws$}-{k:0wk$}");
            categories.insert(t.clone(), format!("sector{c:0ws$}"));
            tickers.push(t);
            sector_of.push(c);
        }
    }

    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let mut u = Vec::with_capacity(config.days);
    let mut log_price = vec![BASE_PRICE.ln(); n];
    let mut prices: Vec<Vec<f64>> = (0..n).map(|_| Vec::with_capacity(config.days)).collect();
    for row in &mut prices {
        row.push(BASE_PRICE);
    }
    let mut sector = vec![0.0; config.n_sectors];
    u.push(config.external_sigma * normal());
    for t in 1..config.days {
        u.push(config.external_sigma * normal());
        let g = normal();
        sector.iter_mut().for_each(|f| *f = normal());
        let ext = config.external_loading_at(t) * u[t - 1];
        for i in 0..n {
            let r = config.global_loading * g
                + config.sector_loading * sector[sector_of[i]]
                + ext
                + config.noise_sigma * normal();
            log_price[i] += r;
            let p = log_price[i].exp();
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Data(format!(
                    "synthetic price of {} left the floating range on day {t}; lower the loadings",
                    tickers[i]
                )));
            }
            prices[i].push(p);
        }
    }

    let dates = weekday_calendar(config.start_date, config.days);
    let external = ExternalReturnSeries::new(TradingCalendar::new(dates[1..].to_vec())?, u[1..].to_vec())?;
    let panel = PricePanel::new(tickers, TradingCalendar::new(dates)?, prices)?;
    Ok(SyntheticMarket {
        panel,
        categories,
        external,
    })
}

/// Write `prices.csv`, `categories.csv` and `external.csv` into `dir`.
pub fn write_market(market: &SyntheticMarket, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    };

    let p = &market.panel;
    let mut buf = Vec::with_capacity(p.n_tickers() * p.n_dates() * 32);
    buf.extend_from_slice(b"date,ticker,close\n");
    for (t, d) in p.calendar().dates().iter().enumerate() {
        for (ticker, row) in p.tickers().iter().zip(p.prices()) {
            writeln!(buf, "{d},{ticker},{}", row[t]).expect("writing to memory");
        }
    }
    write("prices.csv", &buf)?;

    let mut buf = b"ticker,category\n".to_vec();
    for (t, c) in market.categories.iter() {
        writeln!(buf, "{t},{c}").expect("writing to memory");
    }
    write("categories.csv", &buf)?;

    let levels = market.external_levels();
    let mut buf = b"date,close\n".to_vec();
    for (d, v) in levels.calendar().dates().iter().zip(levels.values()) {
        writeln!(buf, "{d},{v}").expect("writing to memory");
    }
    write("external.csv", &buf)
}
