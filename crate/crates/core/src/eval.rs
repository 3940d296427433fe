//! Retrieval and answer metrics.
//!
//! All string matching goes through [`normalize_answer`]: case folding,
//! whitespace collapsing and stripping of leading/trailing punctuation.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::embedding::{check_dim, Embedding};
use crate::error::{Error, Result};
use crate::text::{normalize_answer, term, tokens};

pub const DEFAULT_RELAXED_TOLERANCE: f64 = 0.05;
pub const DEFAULT_BUCKET_WIDTH: usize = 50;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    #[serde(default)]
    pub query_id: String,
    #[serde(default)]
    pub gold_entity_name: String,
    /// Accepted answer aliases.
    #[serde(default)]
    pub gold_answers: Vec<String>,
    #[serde(default)]
    pub numeric_gold: Option<f64>,
    /// Entity names retrieved in stage 1; absent means not evaluated.
    #[serde(default)]
    pub stage1_entities: Option<Vec<String>>,
    /// Passages retrieved in stage 2; absent means not evaluated.
    #[serde(default)]
    pub stage2_passages: Option<Vec<String>>,
    #[serde(default)]
    pub prediction: Option<String>,
}

/// Whether the gold entity is among the stage-1 entities.
pub fn stage1_hit(record: &EvalRecord) -> bool {
    let gold = normalize_answer(&record.gold_entity_name);
    !gold.is_empty()
        && record
            .stage1_entities
            .iter()
            .flatten()
            .any(|e| normalize_answer(e) == gold)
}

/// Whether any gold alias occurs in any stage-2 passage.
pub fn stage2_hit(record: &EvalRecord) -> bool {
    let aliases: Vec<String> = record
        .gold_answers
        .iter()
        .map(|a| normalize_answer(a))
        .filter(|a| !a.is_empty())
        .collect();
    record.stage2_passages.iter().flatten().any(|p| {
        let p = normalize_answer(p);
        aliases.iter().any(|a| p.contains(a.as_str()))
    })
}

/// Exact alias match of the normalized prediction.
pub fn vqa_hit(prediction: &str, gold_answers: &[String]) -> bool {
    let pred = normalize_answer(prediction);
    gold_answers.iter().any(|a| normalize_answer(a) == pred)
}

fn parse_number(text: &str) -> Option<f64> {
    let cleaned: String = text.trim().chars().filter(|&c| c != ',').collect();
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// `|pred - gold| <= tolerance * |gold|`; a zero gold requires an exact zero.
pub fn relaxed_hit(prediction: &str, gold: f64, tolerance: f64) -> bool {
    let Some(pred) = parse_number(prediction) else {
        return false;
    };
    if gold == 0.0 {
        return pred == 0.0;
    }
    (pred - gold).abs() <= tolerance * gold.abs()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub hits: usize,
    pub evaluated: usize,
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        (self.evaluated > 0).then(|| self.hits as f64 / self.evaluated as f64)
    }

    fn record(&mut self, hit: bool) {
        self.evaluated += 1;
        self.hits += usize::from(hit);
    }
}

impl std::ops::Add for Rate {
    type Output = Rate;

    fn add(self, other: Rate) -> Rate {
        Rate {
            hits: self.hits + other.hits,
            evaluated: self.evaluated + other.evaluated,
        }
    }
}

fn fraction(records: &[EvalRecord], mut score: impl FnMut(&EvalRecord) -> Option<bool>) -> Rate {
    let mut rate = Rate::default();
    for r in records {
        if let Some(hit) = score(r) {
            rate.record(hit);
        }
    }
    rate
}

pub fn stage1_precision(records: &[EvalRecord]) -> Rate {
    fraction(records, |r| {
        r.stage1_entities.as_ref().map(|_| stage1_hit(r))
    })
}

pub fn stage2_precision(records: &[EvalRecord]) -> Rate {
    fraction(records, |r| {
        (r.stage2_passages.is_some() && !r.gold_answers.is_empty()).then(|| stage2_hit(r))
    })
}

/// Records without a prediction are excluded.
pub fn vqa_accuracy(records: &[EvalRecord]) -> Rate {
    fraction(records, |r| match &r.prediction {
        Some(p) if !r.gold_answers.is_empty() => Some(vqa_hit(p, &r.gold_answers)),
        _ => None,
    })
}

pub fn relaxed_accuracy(records: &[EvalRecord], tolerance: f64) -> Rate {
    fraction(records, |r| match (&r.prediction, r.numeric_gold) {
        (Some(p), Some(g)) => Some(relaxed_hit(p, g, tolerance)),
        _ => None,
    })
}

/// Token offset of the first mention of `entity` in `passage`, matched on
/// normalized terms.
pub fn mention_offset(passage: &str, entity: &str) -> Option<usize> {
    let needle: Vec<String> = tokens(entity).map(term).filter(|t| !t.is_empty()).collect();
    if needle.is_empty() {
        return None;
    }
    let hay: Vec<String> = tokens(passage).map(term).collect();
    hay.windows(needle.len())
        .position(|w| w == needle.as_slice())
}

/// Counts of first-mention offsets, bucketed by token position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionHistogram {
    pub bucket_width: usize,
    pub buckets: Vec<usize>,
    /// Passages that never mention the entity.
    pub not_mentioned: usize,
}

impl PositionHistogram {
    pub fn new(bucket_width: usize) -> Self {
        Self {
            bucket_width: bucket_width.max(1),
            buckets: Vec::new(),
            not_mentioned: 0,
        }
    }

    pub fn add(&mut self, offset: Option<usize>) {
        match offset {
            Some(o) => {
                let b = o / self.bucket_width;
                if self.buckets.len() <= b {
                    self.buckets.resize(b + 1, 0);
                }
                self.buckets[b] += 1;
            }
            None => self.not_mentioned += 1,
        }
    }

    pub fn mentions(&self) -> usize {
        self.buckets.iter().sum()
    }

    pub fn total(&self) -> usize {
        self.mentions() + self.not_mentioned
    }

    /// Share of mentions whose offset is below `limit` tokens. `limit` is
    /// rounded down to a bucket boundary.
    pub fn fraction_below(&self, limit: usize) -> Option<f64> {
        let mentions = self.mentions();
        if mentions == 0 {
            return None;
        }
        let full = limit / self.bucket_width;
        let below: usize = self.buckets.iter().take(full).sum();
        Some(below as f64 / mentions as f64)
    }

    /// `bucket_start,bucket_end,count` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bucket_start,bucket_end,count")?;
        for (i, c) in self.buckets.iter().enumerate() {
            writeln!(
                w,
                "{},{},{}",
                i * self.bucket_width,
                (i + 1) * self.bucket_width,
                c
            )?;
        }
        Ok(())
    }
}

/// First-mention positions of each record's gold entity over its stage-2
/// passages.
pub fn entity_position_histogram(records: &[EvalRecord], bucket_width: usize) -> PositionHistogram {
    let mut hist = PositionHistogram::new(bucket_width);
    for r in records {
        if r.gold_entity_name.trim().is_empty() {
            continue;
        }
        for p in r.stage2_passages.iter().flatten() {
            hist.add(mention_offset(p, &r.gold_entity_name));
        }
    }
    hist
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub relaxed_tolerance: f64,
    pub bucket_width: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            relaxed_tolerance: DEFAULT_RELAXED_TOLERANCE,
            bucket_width: DEFAULT_BUCKET_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: usize,
    pub stage1: Rate,
    pub stage2: Rate,
    pub vqa: Rate,
    pub relaxed: Rate,
    pub relaxed_tolerance: f64,
    pub missing_predictions: usize,
    pub position_histogram: PositionHistogram,
    pub stage1_precision: Option<f64>,
    pub stage2_precision: Option<f64>,
    pub vqa_accuracy: Option<f64>,
    pub relaxed_accuracy: Option<f64>,
}

impl MetricReport {
    pub fn evaluated_any(&self) -> bool {
        [self.stage1, self.stage2, self.vqa, self.relaxed]
            .iter()
            .any(|r| r.evaluated > 0)
    }
}

pub fn evaluate(records: &[EvalRecord], options: &EvalOptions) -> MetricReport {
    let stage1 = stage1_precision(records);
    let stage2 = stage2_precision(records);
    let vqa = vqa_accuracy(records);
    let relaxed = relaxed_accuracy(records, options.relaxed_tolerance);
    MetricReport {
        records: records.len(),
        stage1,
        stage2,
        vqa,
        relaxed,
        relaxed_tolerance: options.relaxed_tolerance,
        missing_predictions: records
            .iter()
            .filter(|r| {
                r.prediction.is_none() && (!r.gold_answers.is_empty() || r.numeric_gold.is_some())
            })
            .count(),
        position_histogram: entity_position_histogram(records, options.bucket_width),
        stage1_precision: stage1.value(),
        stage2_precision: stage2.value(),
        vqa_accuracy: vqa.value(),
        relaxed_accuracy: relaxed.value(),
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>8} {:>10} {:>9}",
            "metric", "hits", "evaluated", "rate"
        )?;
        for (name, rate) in [
            ("stage1_precision", self.stage1),
            ("stage2_precision", self.stage2),
            ("vqa_accuracy", self.vqa),
            ("relaxed_accuracy", self.relaxed),
        ] {
            let value = rate
                .value()
                .map_or_else(|| "n/a".to_string(), |v| format!("{:.2}%", v * 100.0));
            writeln!(
                f,
                "{name:<20} {:>8} {:>10} {value:>9}",
                rate.hits, rate.evaluated
            )?;
        }
        writeln!(
            f,
            "records: {}  missing predictions: {}",
            self.records, self.missing_predictions
        )?;
        let h = &self.position_histogram;
        write!(
            f,
            "entity mentions: {} ({} passages without a mention)",
            h.mentions(),
            h.not_mentioned
        )
    }
}

/// A record line that failed to parse.
#[derive(Debug, Clone, PartialEq)]
pub struct BadRecord {
    pub line: usize,
    pub message: String,
}

pub fn parse_eval_record(line: &str, lineno: usize) -> Result<EvalRecord> {
    serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))
}

/// Reads eval records, collecting malformed lines instead of failing.
pub fn read_eval_records<R: BufRead>(r: R) -> Result<(Vec<EvalRecord>, Vec<BadRecord>)> {
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_eval_record(&line, i + 1) {
            Ok(rec) => good.push(rec),
            Err(e) => bad.push(BadRecord {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    Ok((good, bad))
}

/// Mean pooling over the square patch grid with a `kernel x kernel` window
/// moved by `stride`. Output is row-major over the pooled grid.
pub fn avg_pool_baseline(
    patches: &[Embedding],
    kernel: usize,
    stride: usize,
) -> Result<Vec<Embedding>> {
    let n = patches.len();
    let side = (n as f64).sqrt().round() as usize;
    if n == 0 || side * side != n {
        return Err(Error::Shape(format!(
            "{n} patches do not form a square grid"
        )));
    }
    if kernel == 0 || stride == 0 || kernel > side {
        return Err(Error::Shape(format!(
            "kernel {kernel} / stride {stride} invalid for a {side}x{side} grid"
        )));
    }
    let dim = patches[0].dim();
    for p in patches {
        check_dim(dim, p.dim())?;
    }
    let out_side = (side - kernel) / stride + 1;
    let mut out = Vec::with_capacity(out_side * out_side);
    let scale = 1.0 / (kernel * kernel) as f64;
    for oy in 0..out_side {
        for ox in 0..out_side {
            let mut acc = vec![0.0f64; dim];
            for dy in 0..kernel {
                for dx in 0..kernel {
                    let p = &patches[(oy * stride + dy) * side + ox * stride + dx];
                    for (a, &x) in acc.iter_mut().zip(p.as_slice()) {
                        *a += f64::from(x);
                    }
                }
            }
            out.push(Embedding::new(
                acc.into_iter().map(|a| (a * scale) as f32).collect(),
            )?);
        }
    }
    Ok(out)
}
