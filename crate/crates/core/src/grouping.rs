//! Grouping coefficient: the share of tree links that join two companies of
//! the same industry category.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::corrnet::SpanningTree;
use crate::error::{Error, Result};
use crate::ingest::CategoryMap;

fn node_categories<'a>(tree: &SpanningTree, categories: &'a CategoryMap) -> Result<Vec<&'a str>> {
    tree.nodes().iter().map(|t| categories.category_of(t)).collect()
}

pub fn grouping_coefficient(tree: &SpanningTree, categories: &CategoryMap) -> Result<f64> {
    let cats = node_categories(tree, categories)?;
    let same = tree.edges().iter().filter(|e| cats[e.a] == cats[e.b]).count();
    Ok(same as f64 / tree.edges().len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CategoryCounts {
    /// Tree links with both endpoints in the category.
    pub internal_edges: usize,
    pub nodes: usize,
}

pub fn per_category_breakdown(tree: &SpanningTree, categories: &CategoryMap) -> Result<BTreeMap<String, CategoryCounts>> {
    let cats = node_categories(tree, categories)?;
    let mut out: BTreeMap<String, CategoryCounts> = BTreeMap::new();
    for c in &cats {
        out.entry(c.to_string()).or_default().nodes += 1;
    }
    for e in tree.edges() {
        if cats[e.a] == cats[e.b] {
            out.get_mut(cats[e.a]).expect("category seen above").internal_edges += 1;
        }
    }
    Ok(out)
}

/// Expected grouping coefficient when labels are assigned to nodes by a
/// uniformly random permutation of the given label multiset.
///
/// Every tree link joins a uniformly random pair of distinct nodes, so the
/// expectation does not depend on the tree.
pub fn shuffled_label_expectation<'a>(labels: impl IntoIterator<Item = &'a str>) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let n: usize = counts.values().sum();
    if n < 2 {
        return f64::NAN;
    }
    let same: usize = counts.values().map(|&c| c * (c - 1)).sum();
    same as f64 / (n * (n - 1)) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingSeries {
    pub window_starts: Vec<NaiveDate>,
    pub values: Vec<f64>,
    /// `values / values[baseline]`; `None` when that baseline is zero.
    pub relative_values: Option<Vec<f64>>,
}

/// Grouping coefficient per tree, relative to the value at window `baseline`.
pub fn grouping_series(
    window_starts: &[NaiveDate],
    trees: &[SpanningTree],
    categories: &CategoryMap,
    baseline: usize,
) -> Result<GroupingSeries> {
    if trees.is_empty() {
        return Err(Error::Data("grouping series needs at least one tree".into()));
    }
    if window_starts.len() != trees.len() {
        return Err(Error::Data("one window start date is needed per tree".into()));
    }
    if baseline >= trees.len() {
        return Err(Error::Config(format!(
            "baseline window {baseline} out of range for {} windows",
            trees.len()
        )));
    }
    let values = trees
        .iter()
        .map(|t| grouping_coefficient(t, categories))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupingSeries {
        window_starts: window_starts.to_vec(),
        relative_values: relative_to(&values, baseline),
        values,
    })
}

pub(crate) fn relative_to(values: &[f64], baseline: usize) -> Option<Vec<f64>> {
    let base = values[baseline];
    if base > 0.0 {
        Some(values.iter().map(|v| v / base).collect())
    } else {
        log::warn!("grouping coefficient at the baseline window is zero; relative series undefined");
        None
    }
}
