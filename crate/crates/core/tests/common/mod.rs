#![allow(dead_code)]

use mmrag_core::pipeline::LocalLexicalBackend;
use mmrag_core::{Embedding, EntityRecord, EntityStore, HnswIndex, HnswParams, KnowledgeBase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect()
}

pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Embedding {
    Embedding::new(gaussian(rng, dim))
        .unwrap()
        .normalized()
        .unwrap()
}

pub fn unit_vectors(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Embedding> {
    (0..n).map(|_| unit_vector(rng, dim)).collect()
}

pub fn random_embeddings(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Embedding> {
    (0..n)
        .map(|_| Embedding::new(gaussian(rng, dim)).unwrap())
        .collect()
}

/// A knowledge base of `n` landmarks with random image vectors, plus a
/// corpus where landmark `i`'s answer token appears in exactly one passage.
pub struct Planted {
    pub kb: KnowledgeBase,
    pub vectors: Vec<Embedding>,
    pub corpus: Vec<String>,
}

pub const PLANTED_QUESTION: &str = "When was this completed?";

pub fn landmark_name(i: usize) -> String {
    format!("Landmark{i:03}")
}

pub fn landmark_answer(i: usize) -> String {
    format!("answer{i:03}")
}

pub fn planted(n: usize, dim: usize, seed: u64) -> Planted {
    let mut r = rng(seed);
    let vectors = unit_vectors(&mut r, n, dim);
    let records = (0..n).map(|i| {
        EntityRecord::new(
            i as u64,
            landmark_name(i),
            format!("a site known as {}", landmark_name(i)),
        )
        .with_image_ref(format!("images/{i}.jpg"))
    });
    let store = EntityStore::from_records(records).unwrap();
    let index = HnswIndex::build(
        dim,
        HnswParams::default(),
        vectors
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, v)| (i as u64, v)),
    )
    .unwrap();
    let mut corpus = Vec::new();
    for i in 0..n {
        let name = landmark_name(i);
        corpus.push(format!(
            "{name} was completed in the year {}.",
            landmark_answer(i)
        ));
        corpus.push(format!("{name} attracts many visitors every summer."));
        corpus.push(format!("Guides recommend {name} at dawn."));
    }
    Planted {
        kb: KnowledgeBase::bind(index, store).unwrap(),
        vectors,
        corpus,
    }
}

impl Planted {
    pub fn backend(&self) -> LocalLexicalBackend {
        LocalLexicalBackend::from_texts(self.corpus.clone())
    }
}
