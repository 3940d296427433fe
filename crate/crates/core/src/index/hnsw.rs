//! Hierarchical navigable small-world graph.
//!
//! Nodes are assigned a top level drawn from `floor(-ln(U) * level_lambda)`.
//! Insertion descends greedily from the entry point, then runs a beam search
//! with width `ef_construction` at each level the node occupies and links it
//! to the closest `max_degree` candidates. Neighbor lists that overflow
//! (`max_degree` above level 0, `2 * max_degree` at level 0) are shrunk to
//! their closest members.
//!
//! Internally nodes are dense `u32` indices in insertion order; external
//! record ids appear only at the API boundary.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{exact_search, VectorStore};
use crate::embedding::{dot, top_k, Embedding, ScoredId};
use crate::error::{Error, Result};

/// Levels above this are never drawn; keeps forged or pathological inputs bounded.
pub(crate) const MAX_LEVEL: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HnswParams {
    pub max_degree: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub level_lambda: f64,
    pub rng_seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self::with_max_degree(16)
    }
}

impl HnswParams {
    /// Defaults for a given degree bound; `level_lambda` is `1 / ln(max_degree)`.
    pub fn with_max_degree(max_degree: usize) -> Self {
        Self {
            max_degree,
            ef_construction: 200,
            // 64 reaches only ~0.84 recall@10 on uniform 64-d data.
            ef_search: 200,
            level_lambda: 1.0 / (max_degree.max(2) as f64).ln(),
            rng_seed: 0x5eed_cafe,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_degree < 2 {
            return Err(Error::Config("max_degree must be at least 2".into()));
        }
        if self.ef_search == 0 {
            return Err(Error::Config("ef_search must be at least 1".into()));
        }
        if self.ef_construction < self.max_degree {
            return Err(Error::Config(format!(
                "ef_construction ({}) must be >= max_degree ({})",
                self.ef_construction, self.max_degree
            )));
        }
        if !(self.level_lambda.is_finite() && self.level_lambda > 0.0) {
            return Err(Error::Config("level_lambda must be positive".into()));
        }
        Ok(())
    }

    /// Out-degree bound at `level`.
    pub fn degree_cap(&self, level: usize) -> usize {
        if level == 0 {
            self.max_degree * 2
        } else {
            self.max_degree
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    sim: f64,
    node: u32,
}

// Greater means closer to the query; equal similarity prefers the lower node.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    pub(crate) params: HnswParams,
    pub(crate) vectors: VectorStore,
    pub(crate) node_of: HashMap<u64, u32>,
    /// `links[node][level]`; a node at level `L` has `L + 1` lists.
    pub(crate) links: Vec<Vec<Vec<u32>>>,
    pub(crate) entry_point: Option<u32>,
    pub(crate) max_level: usize,
    pub(crate) frozen: bool,
    rng: ChaCha8Rng,
}

impl PartialEq for HnswIndex {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.vectors == other.vectors
            && self.links == other.links
            && self.entry_point == other.entry_point
            && self.max_level == other.max_level
    }
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            vectors: VectorStore::new(dim)?,
            node_of: HashMap::new(),
            links: Vec::new(),
            entry_point: None,
            max_level: 0,
            frozen: false,
            rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
            params,
        })
    }

    /// Inserts every item in order and freezes the result.
    pub fn build<I>(dim: usize, params: HnswParams, items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, Embedding)>,
    {
        let mut index = Self::new(dim, params)?;
        for (id, v) in items {
            index.insert(id, &v)?;
        }
        index.freeze();
        Ok(index)
    }

    pub(crate) fn from_parts(
        params: HnswParams,
        vectors: VectorStore,
        links: Vec<Vec<Vec<u32>>>,
        entry_point: Option<u32>,
    ) -> Result<Self> {
        let mut node_of = HashMap::with_capacity(vectors.len());
        for (node, &id) in vectors.ids().iter().enumerate() {
            if node_of.insert(id, node as u32).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        let max_level = entry_point
            .map(|ep| links[ep as usize].len() - 1)
            .unwrap_or(0);
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
            params,
            vectors,
            node_of,
            links,
            entry_point,
            max_level,
            frozen: true,
        })
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &VectorStore {
        &self.vectors
    }

    /// Record ids in insertion order.
    pub fn ids(&self) -> &[u64] {
        self.vectors.ids()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.node_of.contains_key(&id)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn entry_point(&self) -> Option<u64> {
        self.entry_point.map(|n| self.vectors.ids()[n as usize])
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    /// Top level of the node holding `id`.
    pub fn level_of(&self, id: u64) -> Option<usize> {
        self.node_of
            .get(&id)
            .map(|&n| self.links[n as usize].len() - 1)
    }

    /// Neighbor record ids of `id` at `level`.
    pub fn neighbors(&self, id: u64, level: usize) -> Option<Vec<u64>> {
        let &node = self.node_of.get(&id)?;
        let lists = &self.links[node as usize];
        lists.get(level).map(|list| {
            list.iter()
                .map(|&n| self.vectors.ids()[n as usize])
                .collect()
        })
    }

    /// The stored unit vector for `id`.
    pub fn vector(&self, id: u64) -> Option<Embedding> {
        self.node_of
            .get(&id)
            .map(|&n| self.vectors.embedding(n as usize))
    }

    /// Cosine similarity between `query` and the stored vector for `id`.
    pub fn similarity(&self, id: u64, query: &Embedding) -> Result<f64> {
        let &node = self.node_of.get(&id).ok_or(Error::NotFound(id))?;
        let q = self.vectors.normalize_query(query)?;
        Ok(dot(q.as_slice(), self.vectors.row(node as usize)))
    }

    fn draw_level(&mut self) -> usize {
        let u: f64 = 1.0 - self.rng.random::<f64>();
        let level = (-u.ln() * self.params.level_lambda).floor();
        (level as usize).min(MAX_LEVEL)
    }

    pub fn insert(&mut self, id: u64, v: &Embedding) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        if self.node_of.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        let row = self.vectors.push(id, v)?;
        let node = row as u32;
        self.node_of.insert(id, node);
        let level = self.draw_level();
        self.links.push(vec![Vec::new(); level + 1]);

        let Some(entry) = self.entry_point else {
            self.entry_point = Some(node);
            self.max_level = level;
            return Ok(());
        };

        let query = self.vectors.row(row).to_vec();
        let mut visited = Visited::new(self.len());
        let mut eps = vec![self.candidate(&query, entry)];
        for lc in (level + 1..=self.max_level).rev() {
            eps = vec![self.greedy_closest(&query, eps[0], lc)];
        }
        for lc in (0..=level.min(self.max_level)).rev() {
            let mut found =
                self.search_layer(&query, &eps, self.params.ef_construction, lc, &mut visited);
            found.sort_unstable_by(|a, b| b.cmp(a));
            let chosen: Vec<u32> = found
                .iter()
                .take(self.params.max_degree)
                .map(|c| c.node)
                .collect();
            for &nb in &chosen {
                self.links[nb as usize][lc].push(node);
                if self.links[nb as usize][lc].len() > self.params.degree_cap(lc) {
                    self.shrink(nb, lc);
                }
            }
            self.links[row][lc] = chosen;
            eps = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry_point = Some(node);
        }
        Ok(())
    }

    /// Keeps only the closest `degree_cap(level)` neighbors of `node`.
    fn shrink(&mut self, node: u32, level: usize) {
        let base = self.vectors.row(node as usize);
        let mut scored: Vec<Candidate> = self.links[node as usize][level]
            .iter()
            .map(|&n| Candidate {
                sim: dot(base, self.vectors.row(n as usize)),
                node: n,
            })
            .collect();
        scored.sort_unstable_by(|a, b| b.cmp(a));
        scored.truncate(self.params.degree_cap(level));
        self.links[node as usize][level] = scored.into_iter().map(|c| c.node).collect();
    }

    #[inline]
    fn candidate(&self, query: &[f32], node: u32) -> Candidate {
        Candidate {
            sim: dot(query, self.vectors.row(node as usize)),
            node,
        }
    }

    fn greedy_closest(&self, query: &[f32], start: Candidate, level: usize) -> Candidate {
        let mut best = start;
        loop {
            let mut improved = false;
            for &nb in &self.links[best.node as usize][level] {
                let c = self.candidate(query, nb);
                if c > best {
                    best = c;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Beam search at one level. Returns up to `ef` closest nodes found, unordered.
    fn search_layer(
        &self,
        query: &[f32],
        entries: &[Candidate],
        ef: usize,
        level: usize,
        visited: &mut Visited,
    ) -> Vec<Candidate> {
        visited.reset();
        let mut frontier: BinaryHeap<Candidate> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Candidate>> = BinaryHeap::with_capacity(ef + 1);
        for &e in entries {
            if visited.insert(e.node) {
                frontier.push(e);
                results.push(Reverse(e));
                if results.len() > ef {
                    results.pop();
                }
            }
        }
        while let Some(c) = frontier.pop() {
            let worst = results.peek().expect("results non-empty").0;
            if c < worst && results.len() >= ef {
                break;
            }
            for &nb in &self.links[c.node as usize][level] {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = self.candidate(query, nb);
                let admit =
                    results.len() < ef || cand > results.peek().expect("results non-empty").0;
                if admit {
                    frontier.push(cand);
                    results.push(Reverse(cand));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        results.into_iter().map(|r| r.0).collect()
    }

    /// Approximate top-k with the configured `ef_search`.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<ScoredId>> {
        self.search_with_ef(query, k, self.params.ef_search)
    }

    /// Approximate top-k with an explicit beam width (raised to `k` if smaller).
    pub fn search_with_ef(&self, query: &Embedding, k: usize, ef: usize) -> Result<Vec<ScoredId>> {
        let Some(entry) = self.entry_point else {
            return Err(Error::EmptyIndex);
        };
        let q = self.vectors.normalize_query(query)?;
        let q = q.as_slice();
        let mut ep = self.candidate(q, entry);
        for lc in (1..=self.max_level).rev() {
            ep = self.greedy_closest(q, ep, lc);
        }
        let mut visited = Visited::new(self.len());
        let found = self.search_layer(q, &[ep], ef.max(k), 0, &mut visited);
        let ids = self.vectors.ids();
        Ok(top_k(
            found
                .into_iter()
                .map(|c| ScoredId::new(ids[c.node as usize], c.sim)),
            k,
        ))
    }

    /// Exhaustive scan over the same vectors; the ground truth for [`Self::search`].
    pub fn exact_search(&self, query: &Embedding, k: usize) -> Result<Vec<ScoredId>> {
        exact_search(&self.vectors, query, k)
    }

    /// Checks edge validity, degree bounds, level consistency and level-0
    /// reachability from the entry point.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.len();
        if self.links.len() != n {
            return Err(format!(
                "{} adjacency entries for {n} nodes",
                self.links.len()
            ));
        }
        match self.entry_point {
            None if n > 0 => return Err("non-empty index without entry point".into()),
            None => return Ok(()),
            Some(ep) if ep as usize >= n => return Err(format!("entry point {ep} out of range")),
            Some(ep) => {
                if self.links[ep as usize].len() != self.max_level + 1 {
                    return Err("entry point is not on the top level".into());
                }
            }
        }
        for (node, lists) in self.links.iter().enumerate() {
            if lists.is_empty() || lists.len() > self.max_level + 1 {
                return Err(format!("node {node} has {} levels", lists.len()));
            }
            for (level, list) in lists.iter().enumerate() {
                if list.len() > self.params.degree_cap(level) {
                    return Err(format!(
                        "node {node} level {level} degree {} exceeds {}",
                        list.len(),
                        self.params.degree_cap(level)
                    ));
                }
                for &nb in list {
                    let Some(target) = self.links.get(nb as usize) else {
                        return Err(format!("node {node} links to missing node {nb}"));
                    };
                    if target.len() <= level {
                        return Err(format!(
                            "node {node} links to {nb} at level {level} above its top level"
                        ));
                    }
                    if nb as usize == node {
                        return Err(format!("node {node} links to itself"));
                    }
                }
            }
        }
        let reached = self.reachable_at_level0();
        if reached != n {
            return Err(format!("only {reached} of {n} nodes reachable at level 0"));
        }
        Ok(())
    }

    fn reachable_at_level0(&self) -> usize {
        let Some(ep) = self.entry_point else {
            return 0;
        };
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([ep]);
        seen[ep as usize] = true;
        let mut count = 1;
        while let Some(node) = queue.pop_front() {
            for &nb in &self.links[node as usize][0] {
                if !seen[nb as usize] {
                    seen[nb as usize] = true;
                    count += 1;
                    queue.push_back(nb);
                }
            }
        }
        count
    }
}

/// Per-query visited set, reusable across levels.
struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch += 1;
    }

    fn insert(&mut self, node: u32) -> bool {
        let slot = &mut self.marks[node as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}
