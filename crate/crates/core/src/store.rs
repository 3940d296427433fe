//! Entity records keyed by vector id, persisted as one JSON object per line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_name;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: u64,
    pub entity_name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub image_ref: String,
    #[serde(default)]
    pub patch_embedding_ref: Option<String>,
}

impl EntityRecord {
    pub fn new(id: u64, entity_name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            id,
            entity_name: entity_name.into(),
            description: description.into(),
            image_ref: String::new(),
            patch_embedding_ref: None,
        }
    }

    pub fn with_image_ref(mut self, image_ref: impl Into<String>) -> Self {
        self.image_ref = image_ref.into();
        self
    }

    pub fn matches_name(&self, name: &str) -> bool {
        normalize_name(&self.entity_name) == normalize_name(name)
    }
}

/// Immutable-after-load collection of entity records, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityStore {
    records: Vec<EntityRecord>,
    by_id: HashMap<u64, usize>,
}

impl EntityStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = EntityRecord>) -> Result<Self> {
        let mut store = Self::new();
        for r in records {
            store.push(r)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, record: EntityRecord) -> Result<()> {
        if record.entity_name.trim().is_empty() {
            return Err(Error::Config(format!(
                "record {} has an empty entity_name",
                record.id
            )));
        }
        if self.by_id.contains_key(&record.id) {
            return Err(Error::DuplicateId(record.id));
        }
        self.by_id.insert(record.id, self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EntityRecord] {
        &self.records
    }

    pub fn contains(&self, id: u64) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn get(&self, id: u64) -> Result<&EntityRecord> {
        self.by_id
            .get(&id)
            .map(|&i| &self.records[i])
            .ok_or(Error::NotFound(id))
    }

    /// Draws a record uniformly from those whose normalized name differs from
    /// `excluded_entity_name`. Deterministic for a given seed.
    pub fn sample_mismatched(
        &self,
        excluded_entity_name: &str,
        seed: u64,
    ) -> Result<&EntityRecord> {
        let excluded = normalize_name(excluded_entity_name);
        let eligible: Vec<&EntityRecord> = self
            .records
            .iter()
            .filter(|r| normalize_name(&r.entity_name) != excluded)
            .collect();
        if eligible.is_empty() {
            return Err(Error::ExhaustedStore(excluded_entity_name.to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(eligible[rng.random_range(0..eligible.len())])
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads line-delimited records. Blank lines are skipped; errors carry
    /// the 1-based line number.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut store = Self::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record = parse_record_line(&line, lineno)?;
            store
                .push(record)
                .map_err(|e| Error::parse(lineno, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Parses one store line.
pub fn parse_record_line(line: &str, lineno: usize) -> Result<EntityRecord> {
    let record: EntityRecord =
        serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))?;
    if record.entity_name.trim().is_empty() {
        return Err(Error::parse(lineno, "entity_name is empty"));
    }
    Ok(record)
}
