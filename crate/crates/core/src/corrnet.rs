//! Rolling windows, cross-correlation matrices and maximum-correlation
//! spanning trees.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::returns::ReturnPanel;

/// Default window length: three years of ~250 trading days.
pub const DEFAULT_WINDOW: usize = 750;
/// Default step between window starts, roughly one month.
pub const DEFAULT_STEP: usize = 20;

/// Centered sums of squares at or below this fraction of the raw sum of
/// squares are treated as zero variance.
const ZERO_VARIANCE_RATIO: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start: usize,
    pub length: usize,
    pub step: usize,
}

impl WindowSpec {
    pub fn end(&self) -> usize {
        self.start + self.length
    }

    /// Index of the last observation in the window.
    pub fn last(&self) -> usize {
        self.end() - 1
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.range().contains(&t)
    }
}

/// Windows of `length` starting at 0, `step`, `2·step`, ... that fit in `total`.
pub fn rolling_windows(total: usize, length: usize, step: usize) -> Result<Vec<WindowSpec>> {
    if length < 2 {
        return Err(Error::Config(format!("window length must be at least 2, got {length}")));
    }
    if step == 0 {
        return Err(Error::Config("window step must be at least 1".into()));
    }
    if total < length {
        return Err(Error::EmptySchedule { total, length });
    }
    Ok((0..=total - length)
        .step_by(step)
        .map(|start| WindowSpec { start, length, step })
        .collect())
}

/// Pearson correlation of two equal-length series; `None` when either has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy, mut rxx, mut ryy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
        rxx += a * a;
        ryy += b * b;
    }
    if is_zero_variance(sxx, rxx) || is_zero_variance(syy, ryy) {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn is_zero_variance(centered: f64, raw: f64) -> bool {
    !(centered > ZERO_VARIANCE_RATIO * raw) || !centered.is_finite()
}

/// Centered series scaled to unit Euclidean norm, or `None` at zero variance.
fn standardize(x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mut centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ss: f64 = centered.iter().map(|v| v * v).sum();
    let raw: f64 = x.iter().map(|v| v * v).sum();
    if is_zero_variance(ss, raw) {
        return None;
    }
    let scale = ss.sqrt().recip();
    centered.iter_mut().for_each(|v| *v *= scale);
    Some(centered)
}

// Every pair goes through the same accumulation order, so (i, j) and (j, i)
// agree bit for bit whichever routine computed them.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn dot4(rows: [&[f64]; 4], b: &[f64]) -> [f64; 4] {
    let mut acc = [[0.0f64; 4]; 4];
    let len = b.len() / 4 * 4;
    let mut k = 0;
    while k < len {
        let y = &b[k..k + 4];
        for (r, row) in rows.iter().enumerate() {
            let x = &row[k..k + 4];
            for l in 0..4 {
                acc[r][l] += x[l] * y[l];
            }
        }
        k += 4;
    }
    let mut out = [0.0; 4];
    for r in 0..4 {
        let a = &acc[r];
        let mut s = (a[0] + a[1]) + (a[2] + a[3]);
        for (x, y) in rows[r][len..].iter().zip(&b[len..]) {
            s += x * y;
        }
        out[r] = s;
    }
    out
}

/// Symmetric matrix of pairwise correlations for one window.
///
/// Rows of zero-variance tickers are undefined: their off-diagonal entries
/// are NaN and they take no part in tree construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    tickers: Vec<String>,
    rho: Vec<f64>,
    defined: Vec<bool>,
}

impl CorrelationMatrix {
    /// Build from a dense row-major matrix, checking symmetry, unit diagonal and bounds.
    pub fn from_dense(tickers: Vec<String>, rho: Vec<f64>) -> Result<Self> {
        let n = tickers.len();
        if rho.len() != n * n {
            return Err(Error::Data("correlation matrix has wrong size".into()));
        }
        for i in 0..n {
            if rho[i * n + i] != 1.0 {
                return Err(Error::Data(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..i {
                let v = rho[i * n + j];
                if v != rho[j * n + i] {
                    return Err(Error::Data(format!("entries ({i},{j}) are not symmetric")));
                }
                if !(v.abs() <= 1.0 + 1e-12) {
                    return Err(Error::Data(format!("entry ({i},{j}) = {v} out of range")));
                }
            }
        }
        Ok(Self {
            defined: vec![true; n],
            tickers,
            rho,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn len(&self) -> usize {
        self.tickers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tickers.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rho[i * self.len() + j]
    }

    pub fn is_defined(&self, i: usize) -> bool {
        self.defined[i]
    }

    pub fn undefined_tickers(&self) -> impl Iterator<Item = &str> {
        self.tickers
            .iter()
            .zip(&self.defined)
            .filter(|(_, d)| !**d)
            .map(|(t, _)| t.as_str())
    }
}

/// Correlation matrix of the panel's returns over `window`.
pub fn correlation_matrix(panel: &ReturnPanel, window: &WindowSpec) -> Result<CorrelationMatrix> {
    if window.end() > panel.n_dates() {
        return Err(Error::Data(format!(
            "window [{}, {}) exceeds the {} available returns",
            window.start,
            window.end(),
            panel.n_dates()
        )));
    }
    let n = panel.n_tickers();
    let z: Vec<Option<Vec<f64>>> = panel
        .returns()
        .iter()
        .map(|row| standardize(&row[window.range()]))
        .collect();
    let defined: Vec<bool> = z.iter().map(Option::is_some).collect();
    let mut rho = vec![f64::NAN; n * n];
    let mut set = |i: usize, j: usize, v: f64| {
        let v = v.clamp(-1.0, 1.0);
        rho[i * n + j] = v;
        rho[j * n + i] = v;
    };

    let live: Vec<usize> = (0..n).filter(|&i| defined[i]).collect();
    let row = |i: usize| z[i].as_deref().unwrap();
    let mut b = 0;
    while b + 4 <= live.len() {
        let block = [live[b], live[b + 1], live[b + 2], live[b + 3]];
        let rows = block.map(row);
        for (p, &i) in block.iter().enumerate() {
            for &j in &block[p + 1..] {
                set(i, j, dot(row(i), row(j)));
            }
        }
        for &j in &live[b + 4..] {
            let d = dot4(rows, row(j));
            for (p, &i) in block.iter().enumerate() {
                set(i, j, d[p]);
            }
        }
        b += 4;
    }
    for (p, &i) in live.iter().enumerate().skip(b) {
        for &j in &live[p + 1..] {
            set(i, j, dot(row(i), row(j)));
        }
    }
    for i in 0..n {
        rho[i * n + i] = 1.0;
    }
    for (t, _) in panel.tickers().iter().zip(&defined).filter(|(_, d)| !**d) {
        log::warn!("window at {}: {t} has zero variance, dropped from the tree", window.start);
    }
    Ok(CorrelationMatrix {
        tickers: panel.tickers().to_vec(),
        rho,
        defined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeWeighting {
    /// Maximize the total correlation of the selected links.
    #[default]
    Correlation,
    /// Minimize the total of `sqrt(2 (1 - rho))` over the selected links.
    Distance,
}

/// Distance that decreases strictly with correlation.
pub fn correlation_distance(rho: f64) -> f64 {
    (2.0 * (1.0 - rho)).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeEdge {
    /// Node indices with `nodes[a] < nodes[b]` lexicographically.
    pub a: usize,
    pub b: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanningTree {
    nodes: Vec<String>,
    edges: Vec<TreeEdge>,
    dropped: Vec<String>,
}

impl SpanningTree {
    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    /// Edges in the order they were accepted.
    pub fn edges(&self) -> &[TreeEdge] {
        &self.edges
    }

    /// Tickers left out because their correlations were undefined.
    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.rho).sum()
    }

    pub fn edge_names(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.edges
            .iter()
            .map(|e| (self.nodes[e.a].as_str(), self.nodes[e.b].as_str(), e.rho))
    }

    pub fn edge_set(&self) -> BTreeSet<(String, String)> {
        self.edge_names()
            .map(|(a, b, _)| (a.to_string(), b.to_string()))
            .collect()
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merge the sets of `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Maximum-correlation spanning tree over the defined tickers.
pub fn asset_tree(corr: &CorrelationMatrix) -> Result<SpanningTree> {
    asset_tree_with(corr, TreeWeighting::Correlation)
}

/// Kruskal's algorithm. Candidate links are ranked by weight and then by
/// the lexicographic ticker pair, which fixes the result under ties.
pub fn asset_tree_with(corr: &CorrelationMatrix, weighting: TreeWeighting) -> Result<SpanningTree> {
    let live: Vec<usize> = (0..corr.len()).filter(|&i| corr.is_defined(i)).collect();
    if live.len() < 2 {
        return Err(Error::TooFewNodes(live.len()));
    }
    let dropped: Vec<String> = corr.undefined_tickers().map(str::to_string).collect();
    let nodes: Vec<String> = live.iter().map(|&i| corr.tickers()[i].clone()).collect();

    struct Candidate {
        key: f64,
        a: u32,
        b: u32,
    }
    let m = live.len();
    let mut candidates = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            let rho = corr.get(live[a], live[b]);
            // Sorting ascending on the key: negate correlation to rank the largest first.
            let key = match weighting {
                TreeWeighting::Correlation => -rho,
                TreeWeighting::Distance => correlation_distance(rho),
            };
            let (a, b) = if nodes[a] < nodes[b] { (a, b) } else { (b, a) };
            candidates.push(Candidate {
                key,
                a: a as u32,
                b: b as u32,
            });
        }
    }
    candidates.sort_unstable_by(|x, y| {
        x.key.total_cmp(&y.key).then_with(|| {
            let (xa, xb) = (&nodes[x.a as usize], &nodes[x.b as usize]);
            let (ya, yb) = (&nodes[y.a as usize], &nodes[y.b as usize]);
            xa.cmp(ya).then_with(|| xb.cmp(yb))
        })
    });

    let mut sets = UnionFind::new(m);
    let mut edges = Vec::with_capacity(m - 1);
    for c in candidates {
        let (a, b) = (c.a as usize, c.b as usize);
        if sets.union(a, b) {
            edges.push(TreeEdge {
                a,
                b,
                rho: corr.get(live[a], live[b]),
            });
            if edges.len() == m - 1 {
                break;
            }
        }
    }
    debug_assert_eq!(edges.len(), m - 1);
    Ok(SpanningTree { nodes, edges, dropped })
}

/// Orders trees' edges for export: by descending correlation, then ticker pair.
pub fn sorted_edges(tree: &SpanningTree) -> Vec<(&str, &str, f64)> {
    let mut v: Vec<_> = tree.edge_names().collect();
    v.sort_by(|x, y| {
        y.2.partial_cmp(&x.2)
            .unwrap_or(Ordering::Equal)
            .then_with(|| (x.0, x.1).cmp(&(y.0, y.1)))
    });
    v
}
