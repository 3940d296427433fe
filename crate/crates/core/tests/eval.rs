use mmrag_core::eval::{
    avg_pool_baseline, entity_position_histogram, evaluate, mention_offset, relaxed_hit,
    stage2_precision, vqa_accuracy, EvalOptions, EvalRecord,
};
use mmrag_core::Embedding;

fn record(gold: &str, passages: &[&str]) -> EvalRecord {
    EvalRecord {
        gold_entity_name: gold.into(),
        gold_answers: vec!["1889".into()],
        stage2_passages: Some(passages.iter().map(|s| s.to_string()).collect()),
        ..Default::default()
    }
}

#[test]
fn mentions_planted_at_199_fall_below_200() {
    let records: Vec<EvalRecord> = (0..50)
        .map(|i| {
            let filler: Vec<String> = (0..199).map(|j| format!("f{i}x{j}")).collect();
            let passage = format!("{} Eiffel Tower stands tall", filler.join(" "));
            record("Eiffel Tower", &[&passage])
        })
        .collect();
    let hist = entity_position_histogram(&records, 50);
    assert_eq!(hist.mentions(), 50);
    assert_eq!(hist.fraction_below(200), Some(1.0));
    assert_eq!(hist.buckets[3], 50);
    let twelve = "a b c d e f g h i j k l Eiffel Tower";
    assert_eq!(mention_offset(twelve, "eiffel tower"), Some(12));
    let hist = entity_position_histogram(&[record("Eiffel Tower", &[twelve, "no mention"])], 50);
    assert_eq!((hist.buckets[0], hist.not_mentioned), (1, 1));
}

#[test]
fn hand_counted_rates() {
    let mut records: Vec<EvalRecord> = (0..10)
        .map(|i| EvalRecord {
            gold_answers: vec!["New York City".into(), "NYC".into()],
            prediction: Some(if i < 7 { "nyc".into() } else { "Boston".into() }),
            ..Default::default()
        })
        .collect();
    assert_eq!(vqa_accuracy(&records).value(), Some(0.7));
    for (i, r) in records.iter_mut().enumerate() {
        r.stage2_passages = Some(vec![if i < 6 {
            "Welcome to NYC!".into()
        } else {
            "Elsewhere".into()
        }]);
    }
    assert_eq!(stage2_precision(&records).value(), Some(0.6));
    assert!(relaxed_hit("0", 0.0, 0.05));
    assert!(!relaxed_hit("0.001", 0.0, 0.05));
    let report = evaluate(&records, &EvalOptions::default());
    assert!(report.evaluated_any());
    assert_eq!(report.stage1.evaluated, 0);
    assert!(!evaluate(&[], &EvalOptions::default()).evaluated_any());
}

#[test]
fn pooling_means() {
    let grid = |rows: [[f32; 2]; 4]| -> Vec<Embedding> {
        rows.iter()
            .map(|r| Embedding::new(r.to_vec()).unwrap())
            .collect()
    };
    let pooled = avg_pool_baseline(
        &grid([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]),
        2,
        2,
    )
    .unwrap();
    assert_eq!(pooled.len(), 1);
    assert_eq!(pooled[0].as_slice(), &[1.0, 1.0]);
    let same = avg_pool_baseline(&grid([[0.5, -3.0]; 4]), 2, 2).unwrap();
    assert_eq!(same[0].as_slice(), &[0.5, -3.0]);
    let patches: Vec<Embedding> = (0..576)
        .map(|i| Embedding::new(vec![i as f32]).unwrap())
        .collect();
    assert_eq!(avg_pool_baseline(&patches, 2, 2).unwrap().len(), 144);
    assert!(avg_pool_baseline(&patches[..575], 2, 2).is_err());
}
