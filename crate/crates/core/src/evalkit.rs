//! Recall@k and nDCG@k with binary relevance, per-specifier breakdowns,
//! and cross-method comparison tables.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::corpuslab::QueryRecord;
use crate::retrieval::RetrievalRun;
use crate::timeparse::Specifier;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("queries missing from qrels: {}", ids.join(", "))]
    MissingQueries { ids: Vec<String> },
    #[error("qrels entry for {query_id} has no relevant passages")]
    EmptyRelevance { query_id: String },
    #[error("methods report different dataset lists; cannot build a comparison table")]
    RaggedReports,
    #[error("no methods supplied")]
    NoMethods,
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Binary relevance judgments.
#[derive(Debug, Clone, Default)]
pub struct Qrels {
    pub relevant: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn from_queries(queries: &[QueryRecord]) -> Result<Qrels> {
        let mut relevant = BTreeMap::new();
        for q in queries {
            if q.gold_passage_ids.is_empty() {
                return Err(EvalError::EmptyRelevance { query_id: q.query_id.clone() });
            }
            relevant.insert(q.query_id.clone(), q.gold_passage_ids.clone());
        }
        Ok(Qrels { relevant })
    }

    fn check_covers(&self, run: &RetrievalRun) -> Result<()> {
        let missing: Vec<String> = run
            .results
            .keys()
            .filter(|q| !self.relevant.contains_key(*q))
            .cloned()
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(EvalError::MissingQueries { ids: missing })
        }
    }
}

/// Macro-averaged proportion of each query's relevant passages found in
/// its top k.
pub fn recall_at_k(run: &RetrievalRun, qrels: &Qrels, k: usize) -> Result<f64> {
    qrels.check_covers(run)?;
    let mut total = 0.0;
    for (query_id, hits) in &run.results {
        let rel = &qrels.relevant[query_id];
        let found = hits
            .iter()
            .take(k)
            .filter(|h| rel.contains(&h.passage_id))
            .count();
        total += found as f64 / rel.len() as f64;
    }
    Ok(total / run.results.len().max(1) as f64)
}

/// Macro-averaged nDCG@k with binary relevance and a log2(rank+1)
/// discount; the ideal ranking places all relevant passages first.
pub fn ndcg_at_k(run: &RetrievalRun, qrels: &Qrels, k: usize) -> Result<f64> {
    qrels.check_covers(run)?;
    let mut total = 0.0;
    for (query_id, hits) in &run.results {
        let rel = &qrels.relevant[query_id];
        let dcg: f64 = hits
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, h)| rel.contains(&h.passage_id))
            .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
            .sum();
        let ideal: f64 = (0..rel.len().min(k))
            .map(|i| 1.0 / ((i + 2) as f64).log2())
            .sum();
        total += dcg / ideal;
    }
    Ok(total / run.results.len().max(1) as f64)
}

/// Per-specifier Recall@k over the queries present in the run; the
/// non-temporal group is reported separately. Empty groups are absent.
#[derive(Debug, Clone, Default)]
pub struct SpecifierReport {
    pub per_specifier: BTreeMap<Specifier, f64>,
    pub non_temporal: Option<f64>,
    pub k: usize,
}

impl SpecifierReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("group,recall_at_{}\n", self.k);
        for (spec, recall) in &self.per_specifier {
            out.push_str(&format!("{},{recall:.6}\n", spec.name()));
        }
        if let Some(recall) = self.non_temporal {
            out.push_str(&format!("non_temporal,{recall:.6}\n"));
        }
        out
    }
}

pub fn per_specifier_report(
    run: &RetrievalRun,
    queries: &[QueryRecord],
    qrels: &Qrels,
    k: usize,
) -> Result<SpecifierReport> {
    qrels.check_covers(run)?;
    let specifier_of: BTreeMap<&str, Option<Specifier>> = queries
        .iter()
        .map(|q| (q.query_id.as_str(), q.specifier))
        .collect();
    let mut groups: BTreeMap<Option<Specifier>, RetrievalRun> = BTreeMap::new();
    for (query_id, hits) in &run.results {
        let spec = specifier_of.get(query_id.as_str()).copied().flatten();
        groups
            .entry(spec)
            .or_insert_with(|| RetrievalRun {
                results: BTreeMap::new(),
                strategy: run.strategy.clone(),
                k: run.k,
            })
            .results
            .insert(query_id.clone(), hits.clone());
    }
    let mut report = SpecifierReport { k, ..SpecifierReport::default() };
    for (spec, group_run) in &groups {
        let recall = recall_at_k(group_run, qrels, k)?;
        match spec {
            Some(s) => {
                report.per_specifier.insert(*s, recall);
            }
            None => report.non_temporal = Some(recall),
        }
    }
    Ok(report)
}

/// One method's metrics over named datasets, Table-2 style.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub dataset: String,
    pub recall5: f64,
    pub recall20: f64,
    pub ndcg5: f64,
    pub ndcg20: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub specifier_breakdown: Option<SpecifierReport>,
}

impl MetricsReport {
    pub fn averages(&self) -> MetricsRow {
        let n = self.rows.len().max(1) as f64;
        MetricsRow {
            dataset: "avg".into(),
            recall5: self.rows.iter().map(|r| r.recall5).sum::<f64>() / n,
            recall20: self.rows.iter().map(|r| r.recall20).sum::<f64>() / n,
            ndcg5: self.rows.iter().map(|r| r.ndcg5).sum::<f64>() / n,
            ndcg20: self.rows.iter().map(|r| r.ndcg20).sum::<f64>() / n,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,recall_at_5,recall_at_20,ndcg_at_5,ndcg_at_20\n");
        for row in self.rows.iter().chain(std::iter::once(&self.averages())) {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                row.dataset, row.recall5, row.recall20, row.ndcg5, row.ndcg20
            ));
        }
        out
    }
}

/// Comparison grid over methods: one block of columns per dataset plus an
/// averages block, per-metric best marked.
#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    /// cells[method][dataset] (the last dataset column is "avg")
    pub cells: Vec<Vec<MetricsRow>>,
}

impl ComparisonTable {
    /// Whether `method` holds the (possibly shared) best value of a metric
    /// on a dataset column.
    pub fn is_best(&self, method: usize, dataset: usize, metric: fn(&MetricsRow) -> f64) -> bool {
        let v = metric(&self.cells[method][dataset]);
        self.cells.iter().all(|row| metric(&row[dataset]) <= v)
    }

    pub fn to_text(&self) -> String {
        let metrics: [(&str, fn(&MetricsRow) -> f64); 4] = [
            ("R@5", |r| r.recall5),
            ("R@20", |r| r.recall20),
            ("nDCG@5", |r| r.ndcg5),
            ("nDCG@20", |r| r.ndcg20),
        ];
        let name_width = self.methods.iter().map(String::len).max().unwrap_or(6).max(6);
        let mut out = String::new();
        for (di, dataset) in self.datasets.iter().enumerate() {
            out.push_str(&format!("== {dataset} ==\n"));
            out.push_str(&format!("{:name_width$}", "method"));
            for (label, _) in &metrics {
                out.push_str(&format!(" {label:>9}"));
            }
            out.push('\n');
            for (mi, method) in self.methods.iter().enumerate() {
                out.push_str(&format!("{method:name_width$}"));
                for (_, f) in &metrics {
                    let v = f(&self.cells[mi][di]);
                    let mark = if self.is_best(mi, di, *f) { "*" } else { " " };
                    out.push_str(&format!(" {v:>8.4}{mark}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn compare_methods(methods: &[(String, MetricsReport)]) -> Result<ComparisonTable> {
    let (_, first) = methods.first().ok_or(EvalError::NoMethods)?;
    let datasets: Vec<String> = first
        .rows
        .iter()
        .map(|r| r.dataset.clone())
        .chain(std::iter::once("avg".into()))
        .collect();
    let mut cells = Vec::new();
    for (_, report) in methods {
        let names: Vec<&str> = report.rows.iter().map(|r| r.dataset.as_str()).collect();
        let expected: Vec<&str> = first.rows.iter().map(|r| r.dataset.as_str()).collect();
        if names != expected {
            return Err(EvalError::RaggedReports);
        }
        let mut row: Vec<MetricsRow> = report.rows.clone();
        row.push(report.averages());
        cells.push(row);
    }
    Ok(ComparisonTable {
        datasets,
        methods: methods.iter().map(|(n, _)| n.clone()).collect(),
        cells,
    })
}

/// CSV rows for merge-count curves: merge_count,dataset,recall_at_20.
pub fn curve_csv(points: &[(usize, String, f64)]) -> String {
    let mut out = String::from("merge_count,dataset,recall_at_20\n");
    for (count, dataset, recall) in points {
        out.push_str(&format!("{count},{dataset},{recall:.6}\n"));
    }
    out
}
