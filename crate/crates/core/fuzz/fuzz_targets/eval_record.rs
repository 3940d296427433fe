#![no_main]

use libfuzzer_sys::fuzz_target;
use mmrag_core::eval::{evaluate, read_eval_records, EvalOptions};

fuzz_target!(|data: &[u8]| {
    if let Ok((records, _bad)) = read_eval_records(data) {
        let report = evaluate(&records, &EvalOptions::default());
        for rate in [report.stage1, report.stage2, report.vqa, report.relaxed] {
            assert!(rate.hits <= rate.evaluated);
        }
    }
});
