mod common;

use mmrag_core::pipeline::{
    expand_query, stage1_retrieve, stage2_retrieve, truncate_passage, LocalLexicalBackend, Passage,
    RetrievalConfig, Retriever, TextBackend,
};
use mmrag_core::text::token_count;
use mmrag_core::{EntityRecord, Error, Result};

use common::*;

#[test]
fn planted_entity_ranks_first() {
    let p = planted(100, 24, 31);
    let hits = stage1_retrieve(&p.kb, &p.vectors[42], 3).unwrap();
    assert_eq!(hits[0].entity.id, 42);
    assert!((hits[0].score - 1.0).abs() < 1e-6);
    let small = planted(2, 24, 32);
    assert_eq!(
        stage1_retrieve(&small.kb, &small.vectors[0], 3)
            .unwrap()
            .len(),
        2
    );
}

#[test]
fn expansion_respects_cap_and_keeps_question() {
    let q = "When was this building completed?";
    let long: Vec<String> = (0..10_000).map(|i| format!("d{i}")).collect();
    let e = EntityRecord::new(1, "Tower Bridge", long.join(" "));
    let expanded = expand_query(q, &e);
    assert_eq!(token_count(&expanded), 512);
    assert!(expanded.ends_with(q));
    assert!(expanded.starts_with("Tower Bridge. d0 d1"));
    let bare = EntityRecord::new(2, "Big Ben", "");
    assert_eq!(expand_query(q, &bare), format!("Big Ben. {q}"));
}

#[test]
fn lexical_ranking_by_term_overlap() {
    let backend = LocalLexicalBackend::from_texts([
        "nothing relevant here",
        "alpha beta gamma",
        "alpha beta gamma delta epsilon",
        "gamma beta alpha again",
    ]);
    let hits = backend
        .search("alpha beta gamma delta epsilon", 10)
        .unwrap();
    let texts: Vec<&str> = hits.iter().map(|p| p.text.as_str()).collect();
    assert_eq!(
        texts,
        vec![
            "alpha beta gamma delta epsilon",
            "alpha beta gamma",
            "gamma beta alpha again"
        ]
    );
    assert_eq!(
        hits.iter().map(|p| p.score).collect::<Vec<_>>(),
        vec![5.0, 3.0, 3.0]
    );
    let unique =
        LocalLexicalBackend::from_texts(["the tower", "Landmark007 stands here", "another tower"]);
    assert_eq!(
        stage2_retrieve(
            &unique,
            "Landmark007. a site known as Landmark007. When?",
            1
        )
        .unwrap()[0]
            .text,
        "Landmark007 stands here"
    );
}

#[test]
fn retrieval_truncates_and_honours_l() {
    let p = planted(10, 16, 33);
    let long: Vec<String> = (0..900).map(|i| format!("t{i}")).collect();
    let mut corpus = p.corpus.clone();
    corpus.push(format!(
        "{} was completed {}",
        landmark_name(3),
        long.join(" ")
    ));
    let config = RetrievalConfig {
        k: 2,
        l: 4,
        ..RetrievalConfig::default()
    };
    let retriever = Retriever::new(&p.kb, LocalLexicalBackend::from_texts(corpus), config).unwrap();
    let out = retriever.retrieve(&p.vectors[3], PLANTED_QUESTION).unwrap();
    assert_eq!(out.snippets.len(), 2);
    for s in &out.snippets {
        assert!(s.passages.len() <= 4);
        assert!(s.passages.iter().all(|t| token_count(t) <= 400));
    }
    assert!(out.snippets[0]
        .passages
        .iter()
        .any(|t| token_count(t) == 400));
    let short: String = (0..50).map(|i| format!("w{i} ")).collect();
    assert_eq!(truncate_passage(&short, 400), short);
}

struct Failing;

impl TextBackend for Failing {
    fn search(&self, _query: &str, _limit: usize) -> Result<Vec<Passage>> {
        Err(Error::Backend("offline".into()))
    }
}

#[test]
fn backend_failure_degrades_without_dropping_snippets() {
    let p = planted(5, 8, 34);
    let retriever = Retriever::new(&p.kb, Failing, RetrievalConfig::default()).unwrap();
    let out = retriever.retrieve(&p.vectors[0], "what is this?").unwrap();
    assert_eq!(out.snippets.len(), 3);
    assert!(out.snippets.iter().all(|s| s.passages.is_empty()));
    assert_eq!(out.failures.len(), 3);
    assert_eq!(out.failures[0].rank, 1);

    let config = RetrievalConfig {
        k: 1,
        ..RetrievalConfig::default()
    };
    let empty = Retriever::new(
        &p.kb,
        LocalLexicalBackend::from_texts(Vec::<String>::new()),
        config,
    )
    .unwrap();
    let out = empty.retrieve(&p.vectors[0], "what is this?").unwrap();
    assert_eq!(out.snippets.len(), 1);
    assert!(out.snippets[0].passages.is_empty());
    assert!(!out.is_degraded());
}

#[test]
fn answer_is_contained_for_planted_queries() {
    let p = planted(30, 16, 35);
    let retriever = Retriever::new(&p.kb, p.backend(), RetrievalConfig::default()).unwrap();
    for (i, v) in p.vectors.iter().enumerate() {
        let out = retriever.retrieve(v, PLANTED_QUESTION).unwrap();
        assert!(out
            .snippets
            .iter()
            .flat_map(|s| &s.passages)
            .any(|t| t.contains(&landmark_answer(i))));
    }
}
