use macplane::run::{run_config, sweep};
use macplane::scenarios::{builtin, with_variant};
use macplane::summary::summarize;
use macplane::trace::{read_jsonl, to_jsonl};
use macplane::validate::validate;
use macplane::{VariantName, World};

#[test]
fn split_run_matches_single_run() {
    for v in [VariantName::Baseline, VariantName::Separated] {
        let spec = with_variant(builtin("p2").unwrap(), v).resolve().unwrap();
        let whole = World::new(spec.clone()).run();
        let mut w = World::new(spec);
        for t in [1_000, 1_001, 7_777, 20_000, 49_999] {
            w.run_until(t);
        }
        let parts = w.into_output();
        assert_eq!(to_jsonl(&whole.trace), to_jsonl(&parts.trace), "{v:?}");
    }
}

#[test]
fn trace_file_round_trips_and_summarizes_the_same() {
    let r = run_config(&builtin("p1a").unwrap(), Some(3)).unwrap();
    let text = to_jsonl(&r.trace);
    let back = read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(to_jsonl(&back), text);
    assert_eq!(summarize(&back, &r.meta).unwrap().to_csv(), r.summary.to_csv());
}

#[test]
fn single_value_sweep_equals_one_run() {
    let cfg = builtin("p5").unwrap();
    let rows = sweep(&cfg, "mcs", &["QAM256".to_string()], &[2]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].summary.to_csv(), run_config(&cfg, Some(2)).unwrap().summary.to_csv());
}

#[test]
fn unknown_axis_is_rejected() {
    assert!(sweep(&builtin("p5").unwrap(), "color", &["1".into()], &[1]).is_err());
}

#[test]
fn seeds_change_the_trace() {
    let cfg = builtin("p1a").unwrap();
    let a = run_config(&cfg, Some(1)).unwrap();
    let b = run_config(&cfg, Some(2)).unwrap();
    assert_ne!(to_jsonl(&a.trace), to_jsonl(&b.trace));
}

#[test]
fn separated_runs_validate_clean() {
    for name in ["p1a", "p3", "p6"] {
        let cfg = with_variant(builtin(name).unwrap(), VariantName::Separated);
        let r = run_config(&cfg, None).unwrap();
        let rep = validate(&r.trace, &cfg.resolve().unwrap());
        assert!(rep.ok(), "{name}: {:?}", rep.counts);
    }
}
