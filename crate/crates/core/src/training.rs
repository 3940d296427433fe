//! Noise-injected training instances.
//!
//! Each instance interleaves the top `k - 1` retrieved snippets, one snippet
//! about a deliberately mismatched entity, the query image and the query
//! text. Instances are exported as one JSON object per line; images travel
//! by reference.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::pipeline::{
    entity_context_query, KnowledgeSnippet, Retriever, StageTwoFailure, TextBackend,
};
use crate::text::{normalize_name, token_count};

/// Marker standing in for image content when an instance is rendered as text.
pub const IMAGE_PLACEHOLDER: &str = "<image>";

/// One position in the interleaved sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Segment {
    /// Retrieved snippet, 1-based stage-1 rank.
    Snippet(usize),
    Noise,
    QueryImage,
    QueryText,
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Segment::Snippet(i) => write!(f, "snippet_{i}"),
            Segment::Noise => f.write_str("noise"),
            Segment::QueryImage => f.write_str("query_image"),
            Segment::QueryText => f.write_str("query_text"),
        }
    }
}

impl FromStr for Segment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "noise" => Ok(Segment::Noise),
            "query_image" => Ok(Segment::QueryImage),
            "query_text" => Ok(Segment::QueryText),
            _ => s
                .strip_prefix("snippet_")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(Segment::Snippet)
                .ok_or_else(|| format!("unknown layout segment {s:?}")),
        }
    }
}

impl TryFrom<String> for Segment {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Segment> for String {
    fn from(s: Segment) -> String {
        s.to_string()
    }
}

/// Where the noise snippet goes among the retrieved snippets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePlacement {
    /// After every retrieved snippet.
    #[default]
    Last,
    /// At a seed-determined position among the snippets.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub layout: Vec<Segment>,
    pub snippets: Vec<KnowledgeSnippet>,
    pub noise: KnowledgeSnippet,
    pub query_text: String,
    pub query_image_ref: String,
    pub gold_entity: String,
    pub answer: String,
}

impl TrainingInstance {
    /// Checks the layout schema and the gold/noise mismatch.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.snippets.len();
        if self.layout.len() != n + 3 {
            return Err(format!(
                "layout has {} segments, expected {} for {n} snippets",
                self.layout.len(),
                n + 3
            ));
        }
        if self.layout[n + 1..] != [Segment::QueryImage, Segment::QueryText] {
            return Err("layout must end with query_image, query_text".into());
        }
        let mut next = 1;
        let mut noise = 0;
        for seg in &self.layout[..=n] {
            match *seg {
                Segment::Snippet(i) if i == next => next += 1,
                Segment::Noise => noise += 1,
                other => return Err(format!("unexpected segment {other} in snippet area")),
            }
        }
        if noise != 1 {
            return Err(format!(
                "layout needs exactly one noise segment, found {noise}"
            ));
        }
        if normalize_name(&self.noise.entity.entity_name) == normalize_name(&self.gold_entity) {
            return Err(format!(
                "noise entity {:?} matches the gold entity",
                self.noise.entity.entity_name
            ));
        }
        Ok(())
    }

    /// The interleaved sequence as text, with [`IMAGE_PLACEHOLDER`] marking
    /// each image.
    pub fn interleaved_text(&self) -> String {
        let snippet_text = |s: &KnowledgeSnippet| {
            let mut out = format!(
                "{IMAGE_PLACEHOLDER}\n{}: {}",
                s.entity.entity_name, s.entity.description
            );
            for p in &s.passages {
                out.push('\n');
                out.push_str(p);
            }
            out
        };
        self.layout
            .iter()
            .map(|seg| match *seg {
                Segment::Snippet(i) => snippet_text(&self.snippets[i - 1]),
                Segment::Noise => snippet_text(&self.noise),
                Segment::QueryImage => IMAGE_PLACEHOLDER.to_string(),
                Segment::QueryText => self.query_text.clone(),
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    fn passages(&self) -> impl Iterator<Item = &String> {
        self.snippets
            .iter()
            .chain(std::iter::once(&self.noise))
            .flat_map(|s| s.passages.iter())
    }
}

pub fn serialize_instance(instance: &TrainingInstance) -> String {
    serde_json::to_string(instance).expect("instances serialize")
}

/// Parses and validates one record line.
pub fn parse_instance(record: &str) -> Result<TrainingInstance> {
    parse_instance_line(record, 1)
}

pub fn parse_instance_line(record: &str, lineno: usize) -> Result<TrainingInstance> {
    let instance: TrainingInstance =
        serde_json::from_str(record).map_err(|e| Error::parse(lineno, e.to_string()))?;
    instance.validate().map_err(|m| Error::parse(lineno, m))?;
    Ok(instance)
}

/// Reads a whole dataset file.
pub fn read_instances<R: BufRead>(r: R) -> Result<Vec<TrainingInstance>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(parse_instance_line(&line, i + 1)?);
        }
    }
    Ok(out)
}

/// A training query annotated with its gold entity and answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedQuery {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
    #[serde(default)]
    pub image_ref: String,
    pub image_embedding: Vec<f32>,
    pub gold_entity: String,
    pub answer: String,
}

pub fn parse_annotated_query(line: &str, lineno: usize) -> Result<AnnotatedQuery> {
    serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))
}

pub fn read_annotated_queries<R: BufRead>(r: R) -> Result<Vec<AnnotatedQuery>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(parse_annotated_query(&line, i + 1)?);
        }
    }
    Ok(out)
}

/// A built instance plus the stage-2 failures met while building it.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltInstance {
    pub instance: TrainingInstance,
    pub failures: Vec<StageTwoFailure>,
}

/// Builds one instance: the top `k - 1` snippets for the query followed by a
/// snippet about an entity sampled from the store that does not match
/// `gold_entity`.
pub fn build_instance<B: TextBackend>(
    retriever: &Retriever<'_, B>,
    query: &AnnotatedQuery,
    placement: NoisePlacement,
    seed: u64,
) -> Result<BuiltInstance> {
    let kb = retriever.knowledge_base();
    let image = Embedding::new(query.image_embedding.clone())?;
    let noise_entity = kb
        .store()
        .sample_mismatched(&query.gold_entity, seed)?
        .clone();

    let k = retriever.config().k.saturating_sub(1);
    let retrieval = retriever.retrieve_top(&image, &query.text, k)?;
    let mut failures = retrieval.failures;

    let noise_passages = match retriever.fetch_passages(&entity_context_query(&noise_entity)) {
        Ok(p) => p,
        Err(e) => {
            failures.push(StageTwoFailure {
                rank: 0,
                entity_id: noise_entity.id,
                message: e.to_string(),
            });
            Vec::new()
        }
    };
    let noise = KnowledgeSnippet {
        stage1_score: kb.index().similarity(noise_entity.id, &image)?,
        entity: noise_entity,
        passages: noise_passages,
    };

    let n = retrieval.snippets.len();
    let mut layout: Vec<Segment> = (1..=n).map(Segment::Snippet).collect();
    let noise_at = match placement {
        NoisePlacement::Last => n,
        NoisePlacement::Shuffled => {
            ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15).random_range(0..=n)
        }
    };
    layout.insert(noise_at, Segment::Noise);
    layout.extend([Segment::QueryImage, Segment::QueryText]);

    Ok(BuiltInstance {
        instance: TrainingInstance {
            layout,
            snippets: retrieval.snippets,
            noise,
            query_text: query.text.clone(),
            query_image_ref: query.image_ref.clone(),
            gold_entity: query.gold_entity.clone(),
            answer: query.answer.clone(),
        },
        failures,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkippedQuery {
    pub position: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub instances: usize,
    pub skipped: usize,
    /// Instances where at least one stage-2 request failed.
    pub degraded: usize,
    pub passages: usize,
    pub passage_tokens: usize,
    pub max_passage_tokens: usize,
    pub skipped_queries: Vec<SkippedQuery>,
}

/// Per-query seed derived from the dataset seed.
pub fn instance_seed(seed: u64, position: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((position as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds one instance per query and writes them in input order. Queries
/// that fail are skipped and reported in the summary.
pub fn build_dataset<B: TextBackend, W: Write>(
    retriever: &Retriever<'_, B>,
    queries: &[AnnotatedQuery],
    placement: NoisePlacement,
    seed: u64,
    mut out: W,
) -> Result<DatasetSummary> {
    let built: Vec<Result<BuiltInstance>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| build_instance(retriever, q, placement, instance_seed(seed, i)))
        .collect();

    let mut summary = DatasetSummary::default();
    for (position, (query, result)) in queries.iter().zip(built).enumerate() {
        match result {
            Ok(b) => {
                for p in b.instance.passages() {
                    let t = token_count(p);
                    summary.passages += 1;
                    summary.passage_tokens += t;
                    summary.max_passage_tokens = summary.max_passage_tokens.max(t);
                }
                if !b.failures.is_empty() {
                    summary.degraded += 1;
                }
                out.write_all(serialize_instance(&b.instance).as_bytes())?;
                out.write_all(b"\n")?;
                summary.instances += 1;
            }
            Err(e) => {
                summary.skipped += 1;
                summary.skipped_queries.push(SkippedQuery {
                    position,
                    id: query.id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    out.flush()?;
    Ok(summary)
}
