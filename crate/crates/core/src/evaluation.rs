//! Spearman correlation, STS task evaluation and report rendering.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::encoders::TextEncoder;
use crate::error::{Error, Result};
use crate::losses::cosine_sim;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsExample {
    pub sentence_a: String,
    pub sentence_b: String,
    pub gold: f64,
}

/// Fractional ranks (1-based); ties get the mean rank of their block.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation of a constant sequence is undefined".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "spearman of sequences with lengths {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("spearman needs at least 2 items".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

/// Spearman between cosine similarities of deterministic sentence
/// embeddings and gold scores.
pub fn evaluate_task(encoder: &dyn TextEncoder, examples: &[StsExample], max_tokens: usize) -> Result<f64> {
    if examples.len() < 2 {
        return Err(Error::InvalidArgument("an STS task needs at least 2 examples".into()));
    }
    let mut predicted = Vec::with_capacity(examples.len());
    for ex in examples {
        let a = encoder.encode(&ex.sentence_a, None, max_tokens)?;
        let b = encoder.encode(&ex.sentence_b, None, max_tokens)?;
        predicted.push(cosine_sim(
            a.sentence_embedding.as_slice().unwrap(),
            b.sentence_embedding.as_slice().unwrap(),
        )?);
    }
    let gold: Vec<f64> = examples.iter().map(|e| e.gold).collect();
    spearman(&predicted, &gold)
}

/// Read a task file: UTF-8 TSV with a header row and columns
/// `sentence_a`, `sentence_b`, `gold`.
pub fn load_task(path: impl AsRef<Path>) -> Result<Vec<StsExample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_task(&text).map_err(|message| Error::TaskFile {
        path: path.to_path_buf(),
        message,
    })
}

pub fn parse_task(text: &str) -> std::result::Result<Vec<StsExample>, String> {
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.split('\t').map(str::trim).collect(),
        None => return Err("missing header row".into()),
    };
    if header != ["sentence_a", "sentence_b", "gold"] {
        return Err(format!("header must be sentence_a<TAB>sentence_b<TAB>gold, got {header:?}"));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(format!("line {}: expected 3 columns, got {}", i + 1, cols.len()));
        }
        let gold: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| format!("line {}: bad gold score {:?}", i + 1, cols[2]))?;
        if !gold.is_finite() {
            return Err(format!("line {}: gold score is not finite", i + 1));
        }
        out.push(StsExample {
            sentence_a: cols[0].to_string(),
            sentence_b: cols[1].to_string(),
            gold,
        });
    }
    Ok(out)
}

pub fn write_task(path: impl AsRef<Path>, examples: &[StsExample]) -> Result<()> {
    let mut out = String::from("sentence_a\tsentence_b\tgold\n");
    for e in examples {
        out.push_str(&format!("{}\t{}\t{}\n", e.sentence_a, e.sentence_b, e.gold));
    }
    crate::corpus::write_atomic(path.as_ref(), out.as_bytes())
}

/// Task files (`*.tsv`) in a directory, sorted by name.
pub fn task_files(dir: impl AsRef<Path>) -> Result<Vec<(String, PathBuf)>> {
    let dir = dir.as_ref();
    let mut tasks: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    tasks.sort();
    Ok(tasks)
}

/// Round half up to `decimals` places.
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    // nudge values like 78.25 that sit just below the tie in binary
    (x * scale + 0.5 + 1e-9).floor() / scale
}

/// Per-task Spearman scores (x100) and their unrounded mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task: IndexMap<String, f64>,
    pub average: f64,
}

impl EvalReport {
    /// Fixed-width table: one column per task plus `avg.`, one decimal.
    pub fn render_table(&self, row_label: &str) -> String {
        let mut cols: Vec<(String, f64)> = self.per_task.iter().map(|(k, v)| (k.clone(), *v)).collect();
        cols.push(("avg.".into(), self.average));
        let label_w = row_label.len().max(5);
        let widths: Vec<usize> = cols.iter().map(|(k, _)| k.len().max(6)).collect();
        let mut head = format!("{:<label_w$}", "Model");
        let mut row = format!("{row_label:<label_w$}");
        for ((name, score), w) in cols.iter().zip(&widths) {
            head.push_str(&format!(" | {name:>w$}"));
            row.push_str(&format!(" | {:>w$.1}", round_half_up(*score, 1)));
        }
        let rule = "-".repeat(head.len());
        format!("{head}\n{rule}\n{row}\n")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

pub fn emit_report(per_task: &[(String, f64)]) -> Result<EvalReport> {
    if per_task.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one task".into()));
    }
    let average = per_task.iter().map(|(_, v)| v).sum::<f64>() / per_task.len() as f64;
    Ok(EvalReport {
        per_task: per_task.iter().cloned().collect(),
        average,
    })
}
