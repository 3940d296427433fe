use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmrag_core::{Embedding, EmbeddingFile, EntityRecord, EntityStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn mmrag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmrag"))
        .args(args)
        .env_remove("MMRAG_SEARCH_API_KEY")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    vectors: Vec<Embedding>,
}

impl Fixture {
    /// `n` entities named `Site{i}` with random vectors, an aligned store,
    /// and a corpus with one answer-bearing passage per entity.
    fn new(n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let vectors: Vec<Embedding> = (0..n)
            .map(|_| {
                Embedding::new((0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
            })
            .collect();
        EmbeddingFile::new(16, vectors.clone())
            .unwrap()
            .save(dir.path().join("emb.rve"))
            .unwrap();
        EntityStore::from_records(
            (0..n as u64).map(|i| {
                EntityRecord::new(i, format!("Site{i}"), format!("a place called Site{i}"))
            }),
        )
        .unwrap()
        .save(dir.path().join("store.jsonl"))
        .unwrap();
        let corpus: String = (0..n)
            .map(|i| {
                format!(
                    "{{\"text\":\"Site{i} was opened in year{i}. {}\"}}\n",
                    "filler ".repeat(450).trim_end()
                )
            })
            .collect();
        fs::write(dir.path().join("corpus.jsonl"), corpus).unwrap();
        Self { dir, vectors }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn build_index(&self, out: &str) -> Output {
        mmrag(&[
            "index",
            "build",
            "--embeddings",
            s(&self.path("emb.rve")),
            "--store",
            s(&self.path("store.jsonl")),
            "--out",
            s(&self.path(out)),
            "--seed",
            "7",
        ])
    }

    fn write_query(&self, i: usize) -> PathBuf {
        let path = self.path(&format!("q{i}.rve"));
        EmbeddingFile::new(16, vec![self.vectors[i].clone()])
            .unwrap()
            .save(&path)
            .unwrap();
        path
    }

    fn write_queries(&self, n: usize) -> PathBuf {
        let lines: String = (0..n)
            .map(|i| {
                let e = i % self.vectors.len();
                format!(
                    "{{\"id\":\"q{i}\",\"text\":\"When was this opened?\",\"image_ref\":\"q{i}.jpg\",\"image_embedding\":{:?},\"gold_entity\":\"Site{e}\",\"answer\":\"year{e}\"}}\n",
                    self.vectors[e].as_slice()
                )
            })
            .collect();
        let path = self.path("queries.jsonl");
        fs::write(&path, lines).unwrap();
        path
    }
}

#[test]
fn index_build_is_reproducible_and_queryable() {
    let f = Fixture::new(100);
    let out = f.build_index("a.rhn");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("indexed 100 vectors (dim 16)"));
    assert_eq!(code(&f.build_index("b.rhn")), 0);
    assert_eq!(
        fs::read(f.path("a.rhn")).unwrap(),
        fs::read(f.path("b.rhn")).unwrap()
    );

    let q = f.write_query(42);
    let out = mmrag(&[
        "index",
        "query",
        "--index",
        s(&f.path("a.rhn")),
        "--store",
        s(&f.path("store.jsonl")),
        "--query-embedding",
        s(&q),
        "--k",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = stdout(&out).lines().next().unwrap().to_string();
    assert!(first.starts_with("1\t42\t1.000000\tSite42"), "{first}");
}

#[test]
fn index_build_reports_count_mismatch() {
    let f = Fixture::new(10);
    EntityStore::from_records((0..9u64).map(|i| EntityRecord::new(i, format!("S{i}"), "")))
        .unwrap()
        .save(f.path("store.jsonl"))
        .unwrap();
    let out = f.build_index("x.rhn");
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("10") && err.contains("9"), "{err}");
}

#[test]
fn corrupt_index_is_an_io_error() {
    let f = Fixture::new(20);
    f.build_index("a.rhn");
    let mut bytes = fs::read(f.path("a.rhn")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(f.path("a.rhn"), bytes).unwrap();
    let q = f.write_query(0);
    let out = mmrag(&[
        "index",
        "query",
        "--index",
        s(&f.path("a.rhn")),
        "--query-embedding",
        s(&q),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn retrieve_defaults_and_flags() {
    let f = Fixture::new(30);
    f.build_index("kb.rhn");
    let q = f.write_query(5);
    let (kb, store, corpus) = (
        f.path("kb.rhn"),
        f.path("store.jsonl"),
        f.path("corpus.jsonl"),
    );
    let base = [
        "retrieve",
        "--index",
        s(&kb),
        "--store",
        s(&store),
        "--corpus",
        s(&corpus),
        "--query-embedding",
        s(&q),
        "--text",
        "When was this opened?",
    ];
    let out = mmrag(&base);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["entity_name"], "Site5");
    let passages = lines[0]["passages"].as_array().unwrap();
    assert!(passages[0].as_str().unwrap().contains("year5"));
    assert!(passages
        .iter()
        .all(|p| p.as_str().unwrap().split_whitespace().count() <= 400));

    let mut narrow = base.to_vec();
    narrow.extend(["--k", "1", "--l", "1"]);
    let out = mmrag(&narrow);
    let lines: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0]["passages"].as_array().unwrap().len() <= 1);
}

#[test]
fn retrieve_with_dead_endpoint() {
    let f = Fixture::new(10);
    f.build_index("kb.rhn");
    let q = f.write_query(1);
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let endpoint = format!("http://127.0.0.1:{port}/search");
    let (cfg, kb, store) = (f.path("cfg.toml"), f.path("kb.rhn"), f.path("store.jsonl"));
    fs::write(&cfg, "[backend]\nmax_retries = 0\nbackoff_ms = 1\n").unwrap();
    let args = [
        "retrieve",
        "--config",
        s(&cfg),
        "--index",
        s(&kb),
        "--store",
        s(&store),
        "--backend",
        "remote",
        "--endpoint",
        &endpoint,
        "--query-embedding",
        s(&q),
        "--text",
        "what is it?",
    ];
    let degraded = mmrag(&args);
    assert_eq!(code(&degraded), 1, "{}", stderr(&degraded));
    assert_eq!(stdout(&degraded).lines().count(), 3);
    assert!(stderr(&degraded).contains("warning"));

    let mut strict = args.to_vec();
    strict.push("--strict");
    let out = mmrag(&strict);
    assert_eq!(code(&out), 3);
    assert!(stdout(&out).is_empty());
}

#[test]
fn refine_prints_selection_and_mask() {
    let dir = tempfile::tempdir().unwrap();
    let patches: Vec<Embedding> = [[0.0, 1.0], [2.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]
        .iter()
        .map(|r| Embedding::new(r.to_vec()).unwrap())
        .collect();
    EmbeddingFile::new(2, patches)
        .unwrap()
        .save(dir.path().join("p.rve"))
        .unwrap();
    EmbeddingFile::new(2, vec![Embedding::new(vec![1.0, 0.0]).unwrap()])
        .unwrap()
        .save(dir.path().join("t.rve"))
        .unwrap();
    EmbeddingFile::new(3, vec![Embedding::new(vec![1.0, 0.0, 0.0]).unwrap()])
        .unwrap()
        .save(dir.path().join("t3.rve"))
        .unwrap();
    let p = dir.path().join("p.rve");
    let out = mmrag(&[
        "refine",
        "--patches",
        s(&p),
        "--text-embedding",
        s(&dir.path().join("t.rve")),
        "--m",
        "2",
        "--grid-width",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout(&out), "1 2\nP1\n2 2\n0 1\n1 0\n");
    let out = mmrag(&[
        "refine",
        "--patches",
        s(&p),
        "--text-embedding",
        s(&dir.path().join("t3.rve")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn build_training_is_deterministic() {
    let f = Fixture::new(20);
    f.build_index("kb.rhn");
    let queries = f.write_queries(10);
    let run = |out: &str| {
        mmrag(&[
            "build-training",
            "--queries",
            s(&queries),
            "--index",
            s(&f.path("kb.rhn")),
            "--store",
            s(&f.path("store.jsonl")),
            "--corpus",
            s(&f.path("corpus.jsonl")),
            "--out",
            s(&f.path(out)),
            "--seed",
            "11",
        ])
    };
    let out = run("a.jsonl");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["instances"], 10);
    assert_eq!(summary["max_passage_tokens"], 400);
    run("b.jsonl");
    let a = fs::read_to_string(f.path("a.jsonl")).unwrap();
    assert_eq!(a, fs::read_to_string(f.path("b.jsonl")).unwrap());
    for line in a.lines() {
        let inst = mmrag_core::training::parse_instance(line).unwrap();
        assert_ne!(inst.noise.entity.entity_name, inst.gold_entity);
    }
}

#[test]
fn eval_reports_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    let lines: String = (0..10)
        .map(|i| {
            let passage = if i < 6 { "opened in 1889" } else { "unknown" };
            format!("{{\"query_id\":\"{i}\",\"gold_entity_name\":\"Site\",\"gold_answers\":[\"1889\"],\"stage1_entities\":[\"Site\"],\"stage2_passages\":[\"{passage}\"]}}\n")
        })
        .collect();
    fs::write(&path, &lines).unwrap();
    let json = dir.path().join("report.json");
    let out = mmrag(&["eval", "--records", s(&path), "--json", s(&json)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["stage1_precision"], 1.0);
    assert_eq!(report["stage2_precision"], 0.6);

    fs::write(&path, format!("{lines}not json\n")).unwrap();
    assert_eq!(code(&mmrag(&["eval", "--records", s(&path)])), 1);
    assert_eq!(
        code(&mmrag(&["eval", "--records", s(&path), "--strict"])),
        2
    );

    fs::write(&path, "").unwrap();
    let out = mmrag(&["eval", "--records", s(&path)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no evaluable records"));
}

#[test]
fn missing_inputs_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmrag(&["eval", "--records", s(&dir.path().join("nope.jsonl"))]);
    assert_eq!(code(&out), 2);
    fs::write(dir.path().join("c.toml"), "[backend]\napi_key = \"x\"\n").unwrap();
    let out = mmrag(&[
        "--config",
        s(&dir.path().join("c.toml")),
        "eval",
        "--records",
        "x",
    ]);
    assert_eq!(code(&out), 2);
}
