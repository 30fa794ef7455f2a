mod common;

use std::collections::BTreeMap;

use common::{chain, count_gt, news, records, year_gt};
use serde_json::json;
use sofa_core::datamodel::{Dataset, Record};
use sofa_core::enumerator::{optimize, EnumerationConfig};
use sofa_core::fixtures::load_fixture;
use sofa_core::interpreter::{
    check_equivalence, generate_corpus, run, run_batch, CorpusConfig, RunOptions, Verdict,
};
use sofa_core::presto::Taxonomy;
use sofa_core::Error;

fn values(r: &Record, path: &[&str]) -> Vec<String> {
    let mut v = r.root();
    for p in path {
        match v.get(p) {
            Some(x) => v = x,
            None => return Vec::new(),
        }
    }
    v.as_array()
        .map(|a| a.iter().filter_map(|e| e.get("v").and_then(|s| s.as_str()).map(str::to_string)).collect())
        .unwrap_or_default()
}

#[test]
fn fig5_output_is_filtered_and_annotated() {
    let f = load_fixture("fig5").unwrap();
    let t = f.taxonomy();
    let mut cfgs = f.manifest.corpus.clone();
    for c in cfgs.values_mut() {
        c.records = 10;
    }
    let data = sofa_core::interpreter::corpora_for(&f.plan, &cfgs, 1);
    let (out, _) = run(&f.plan, &t, &data, RunOptions::default()).unwrap();
    let input = &data["news"];
    let want = input
        .records
        .iter()
        .filter(|r| r.get("year").and_then(|y| y.as_f64()).unwrap() > 2010.0)
        .count();
    let sink = &out["sink"];
    assert_eq!(sink.len(), want);
    for r in &sink.records {
        assert!(r.get("year").and_then(|y| y.as_f64()).unwrap() > 2010.0);
        assert!(r.get("entities").and_then(|e| e.get("PER")).is_some());
        assert!(r.get("entities").and_then(|e| e.get("COMP")).is_some());
    }
}

#[test]
fn crafted_corpus_golden() {
    let t = Taxonomy::builtin();
    let d = chain(&[
        ("s", "anntt-sent", json!({})),
        ("p", "anntt-ent-pers", json!({})),
        ("f", "fltr", count_gt("entities.PER", 0)),
        ("y", "fltr", year_gt(2010)),
        ("j", "prjt", json!({"fields": ["id", "entities"]})),
    ]);
    let ds = records(&[
        r#"{"id":1,"year":2012,"text":"Weber visited the firm Umbrella. The shares fell.","source":"wire"}"#,
        r#"{"id":2,"year":2013,"text":"The shares walked. Prices fell.","source":"web"}"#,
        r#"{"id":3,"year":2014,"text":"Jones met Chen in Lagos.","source":"wire"}"#,
        r#"{"id":4,"year":2009,"text":"Weber said nothing.","source":"print"}"#,
    ]);
    let (out, _) = run(&d, &t, &news(ds), RunOptions::default()).unwrap();
    let got: BTreeMap<i64, Vec<String>> = out["sink"]
        .records
        .iter()
        .map(|r| (r.get("id").unwrap().as_f64().unwrap() as i64, values(r, &["entities", "PER"])))
        .collect();
    let want = BTreeMap::from([(1, vec!["Weber".to_string()]), (3, vec!["Jones".to_string(), "Chen".to_string()])]);
    assert_eq!(got, want);
    for r in &out["sink"].records {
        assert_eq!(r.fields().keys().collect::<Vec<_>>(), ["entities", "id"]);
    }
}

#[test]
fn identity_flow_returns_its_input() {
    let t = Taxonomy::builtin();
    let ds = generate_corpus(&CorpusConfig::default(), 3);
    let (out, trace) = run(&chain(&[]), &t, &news(ds.clone()), RunOptions::default()).unwrap();
    assert_eq!(out["sink"], ds);
    assert!(trace.ops.is_empty());
}

#[test]
fn reordered_filters_are_equivalent() {
    let t = Taxonomy::builtin();
    let wire = json!({"pred": {"path": "source", "op": "==", "value": "wire"}});
    let a = chain(&[("a", "fltr", year_gt(2010)), ("b", "fltr", wire.clone())]);
    let b = chain(&[("b", "fltr", wire), ("a", "fltr", year_gt(2010))]);
    let cfgs = BTreeMap::from([("news".to_string(), CorpusConfig::default())]);
    let seeds: Vec<u64> = (0..5).collect();
    assert_eq!(check_equivalence(&a, &b, &t, &cfgs, &seeds).unwrap(), Verdict::Pass { seeds: 5 });
}

#[test]
fn different_predicates_give_a_counterexample() {
    let t = Taxonomy::builtin();
    let a = chain(&[("a", "fltr", year_gt(2010))]);
    let b = chain(&[("a", "fltr", year_gt(2011))]);
    let cfgs = BTreeMap::new();
    match check_equivalence(&a, &b, &t, &cfgs, &[0, 1, 2]).unwrap() {
        Verdict::Counterexample { seed, left_only, right_only, .. } => {
            assert_eq!(seed, 0);
            assert!(right_only.is_empty());
            assert!(!left_only.is_empty());
            assert!(left_only.iter().all(|r| r.get("year").unwrap().as_f64() == Some(2011.0)));
        }
        v => panic!("{v:?}"),
    }
}

#[test]
fn corpus_generation_is_seeded() {
    let cfg = CorpusConfig::default();
    assert_eq!(generate_corpus(&cfg, 9), generate_corpus(&cfg, 9));
    assert_ne!(generate_corpus(&cfg, 9), generate_corpus(&cfg, 10));
    assert_eq!(generate_corpus(&cfg, 9).len(), cfg.records);
}

#[test]
fn duplicates_follow_the_configured_rate() {
    let t = Taxonomy::builtin();
    let d = chain(&[
        ("x", "ddup", json!({"path": "text", "threshold": 0.8})),
        ("y", "fuse", json!({})),
    ]);
    let kept = |rate: f64| {
        let cfg = CorpusConfig {
            records: 400,
            dup_rate: rate,
            ..CorpusConfig::default()
        };
        let (out, _) = run(&d, &t, &news(generate_corpus(&cfg, 4)), RunOptions::default()).unwrap();
        out["sink"].len()
    };
    let (none, some) = (kept(0.0), kept(0.3));
    assert!(none > some);
    let removed = (400 - some) as f64 / 400.0;
    assert!((removed - 0.3).abs() < 0.1, "removed {removed}");
}

#[test]
fn no_entities_means_no_relations() {
    let t = Taxonomy::builtin();
    let d = chain(&[
        ("s", "anntt-sent", json!({})),
        ("p", "anntt-ent-pers", json!({})),
        ("c", "anntt-ent-comp", json!({})),
        ("o", "anntt-pos", json!({})),
        ("r", "anntt-rel", json!({})),
    ]);
    let cfg = CorpusConfig {
        person_rate: 0.0,
        company_rate: 0.0,
        ..CorpusConfig::default()
    };
    let (out, _) = run(&d, &t, &news(generate_corpus(&cfg, 2)), RunOptions::default()).unwrap();
    for r in &out["sink"].records {
        assert!(values(r, &["entities", "PER"]).is_empty());
        assert!(values(r, &["relations"]).is_empty());
        assert!(r.get("relations").and_then(|x| x.as_array()).is_none_or(|a| a.is_empty()));
    }
}

#[test]
fn annotators_only_append() {
    let t = Taxonomy::builtin();
    let ds = generate_corpus(&CorpusConfig { sentences: true, ..CorpusConfig::default() }, 6);
    for op in ["anntt-ent-pers", "anntt-ent-comp", "anntt-ent-loc", "anntt-tok", "anntt-stem", "anntt-lang"] {
        let d = common::chain_with(&["id", "year", "text", "source", "sentences"], &[("a", op, json!({}))]);
        let (out, _) = run(&d, &t, &news(ds.clone()), RunOptions { strict: true }).unwrap();
        assert_eq!(out["sink"].len(), ds.len(), "{op}");
        let by_id = |d: &Dataset| -> BTreeMap<String, Record> {
            d.records.iter().map(|r| (r.get("id").unwrap().to_json().to_string(), r.clone())).collect()
        };
        let (before, after) = (by_id(&ds), by_id(&out["sink"]));
        for (id, r) in &before {
            for (k, v) in r.fields() {
                assert_eq!(after[id].get(k), Some(v), "{op} changed {k}");
            }
        }
    }
}

#[test]
fn batch_agrees_with_single_runs() {
    let f = load_fixture("running-example").unwrap();
    let t = f.taxonomy();
    let o = optimize(&f.plan, &t, &f.model(&t), &EnumerationConfig::unpruned()).unwrap();
    let plans: Vec<_> = o.ranked().into_iter().take(25).map(|p| p.plan).collect();
    let data = f.corpora(11);
    let refs: Vec<_> = plans.iter().collect();
    let batch = run_batch(&refs, &t, &data, RunOptions::default());
    for (p, b) in plans.iter().zip(batch) {
        assert_eq!(b.unwrap(), run(p, &t, &data, RunOptions::default()).unwrap().0);
    }
}

#[test]
fn abstract_operator_cannot_run() {
    let t = Taxonomy::builtin();
    let d = chain(&[("x", "anntt", json!({}))]);
    let r = run(&d, &t, &news(Dataset::default()), RunOptions::default());
    assert!(matches!(r, Err(Error::Exec { .. }) | Err(Error::Invalid(_))), "{r:?}");
}

/// Hand-traced output of the running example on a small crafted corpus
/// with two near-duplicate pairs, a null field filled by fusion and
/// sentences failing each of the three filters.
#[test]
fn running_example_on_crafted_corpus() {
    let f = load_fixture("running-example").unwrap();
    let t = f.taxonomy();
    let dir = sofa_core::fixtures::fixtures_dir().join("running-example");
    let read = |name: &str| {
        let file = std::fs::File::open(dir.join(name)).unwrap();
        Dataset::read_jsonl(std::io::BufReader::new(file)).unwrap()
    };
    let data = BTreeMap::from([("news".to_string(), read("crafted.jsonl"))]);
    let want = read("crafted.expected.jsonl");
    let (out, trace) = run(&f.plan, &t, &data, RunOptions { strict: true }).unwrap();
    assert_eq!(out["sink"].canonical(), want.canonical());
    assert_eq!(trace.ops["rdup"].produced, 6);
    assert_eq!(trace.ops["sent"].produced, 9);
}
