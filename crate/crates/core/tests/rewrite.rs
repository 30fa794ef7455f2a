mod common;

use std::collections::BTreeSet;

use common::{chain, count_gt, year_gt};
use serde_json::json;

use sofa_core::dataflow::{validate, Dataflow, Edge, Node};
use sofa_core::fixtures::load_fixture;
use sofa_core::presto::Taxonomy;
use sofa_core::rewrite::{evaluate_static_rules, match_structural, read_write_conflicts, Explanation, QueryFacts, Resolver};

fn resolves(t: &Taxonomy, d: &Dataflow, x: &str, y: &str) -> bool {
    let facts = QueryFacts::derive(d, t).unwrap();
    Resolver::new(t, Some(&facts)).resolve_reorder(x, y)
}

#[test]
fn two_filters_reorder() {
    let t = Taxonomy::builtin();
    let d = chain(&[("a", "fltr", year_gt(2000)), ("b", "fltr", year_gt(2010))]);
    assert!(resolves(&t, &d, "a", "b"));
    let facts = QueryFacts::derive(&d, &t).unwrap();
    match Resolver::new(&t, Some(&facts)).explain("a", "b") {
        Explanation::Proved(p) => assert!(p.render().contains("commutative"), "{}", p.render()),
        Explanation::Failed(f) => panic!("{f:?}"),
    }
}

#[test]
fn entity_annotators_reorder_but_pos_and_rel_do_not() {
    let t = Taxonomy::builtin();
    let d = chain(&[
        ("sent", "anntt-sent", json!({})),
        ("pers", "anntt-ent-pers", json!({})),
        ("comp", "anntt-ent-comp", json!({})),
        ("pos", "anntt-pos", json!({})),
        ("rel", "anntt-rel", json!({})),
    ]);
    assert!(resolves(&t, &d, "pers", "comp"));
    assert!(resolves(&t, &d, "comp", "pers"));
    assert!(!resolves(&t, &d, "pos", "rel"));
    assert!(!resolves(&t, &d, "sent", "pers"));
    // concept level, without query facts
    let r = Resolver::new(&t, None);
    assert!(r.resolve_reorder("anntt-ent-pers", "anntt-ent-comp"));
    assert!(!r.resolve_reorder("anntt-pos", "anntt-rel"));
}

#[test]
fn read_write_conflict_examples() {
    let t = Taxonomy::builtin();
    let d = chain(&[
        ("sent", "anntt-sent", json!({})),
        ("pers", "anntt-ent-pers", json!({})),
        ("comp", "anntt-ent-comp", json!({})),
        ("pos", "anntt-pos", json!({})),
        ("rel", "anntt-rel", json!({})),
        ("year", "fltr", year_gt(2010)),
    ]);
    let f = QueryFacts::derive(&d, &t).unwrap();
    // pos is written by one and read by the other
    assert!(read_write_conflicts(&f, "pos", "rel"));
    // both append to entities
    assert!(!read_write_conflicts(&f, "pers", "comp"));
    assert!(!read_write_conflicts(&f, "pers", "year"));
}

#[test]
fn static_table_examples() {
    let t = Taxonomy::builtin();
    let table = evaluate_static_rules(&t);
    let has = |a: &str, b: &str| table.contains(&(a.to_string(), b.to_string()));
    assert!(has("fltr", "fltr"));
    assert!(has("anntt-ent-pers", "anntt-ent-comp"));
    assert!(!has("anntt-pos", "anntt-rel"));
    assert!(!has("anntt-sent", "anntt-tok"));
    for (x, y) in t.prerequisite_pairs() {
        assert!(!has(x, y), "({x}, {y}) is prerequisite-bound");
    }
}

#[test]
fn static_table_matches_golden() {
    let t = Taxonomy::builtin();
    let table = evaluate_static_rules(&t);
    let golden = std::fs::read_to_string(sofa_core::fixtures::fixtures_dir().join("static-reorder.txt")).unwrap();
    let want: BTreeSet<(String, String)> = golden
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (a, b) = l.split_once(' ').unwrap();
            (a.to_string(), b.to_string())
        })
        .collect();
    assert_eq!(table, want);
}

/// Single-input RAAT pairs: the rules allow a swap exactly when there is no
/// read/write conflict, except where a declared prerequisite blocks it.
#[test]
fn raat_pairs_follow_conflicts() {
    let t = Taxonomy::builtin();
    let d = chain(&[
        ("sent", "anntt-sent", json!({})),
        ("up", "trnsf", json!({"set": {"source": {"upper": "source"}}})),
        ("pers", "anntt-ent-pers", json!({})),
        ("fpers", "fltr", count_gt("entities.PER", 0)),
        ("len", "extend", json!({"set": {"n": {"len": "text"}}})),
        ("comp", "anntt-ent-comp", json!({})),
        ("fsrc", "fltr", json!({"pred": {"path": "source", "op": "==", "value": "WIRE"}})),
        ("year", "fltr", year_gt(2010)),
        ("pos", "anntt-pos", json!({})),
        ("rel", "anntt-rel", json!({})),
    ]);
    assert_eq!(validate(&d, &t), vec![]);
    let facts = QueryFacts::derive(&d, &t).unwrap();
    let r = Resolver::new(&t, Some(&facts));
    let ids: Vec<&str> = d.operators().map(|n| n.id.as_str()).collect();
    for (i, x) in ids.iter().enumerate() {
        for y in &ids[i + 1..] {
            let cx = &facts.instances[*x].concept;
            let cy = &facts.instances[*y].concept;
            let blocked = t.has_prerequisite(cx, cy).unwrap();
            let want = !read_write_conflicts(&facts, x, y) && !blocked;
            assert_eq!(r.resolve_reorder(x, y), want, "{x} {y}");
        }
    }
}

#[test]
fn rule_with_unknown_predicate_rejected() {
    let mut t = Taxonomy::builtin();
    let e = t.load_package("reorder(X,Y) :- frobnicates(X,Y).").unwrap_err();
    assert!(e.to_string().contains("frobnicates"), "{e}");
    let e = t.load_package("reorder(X,Y) :- isA(X,'fltr').").unwrap_err();
    assert!(e.to_string().contains('Y'), "unsafe head variable: {e}");
}

#[test]
fn user_rules_only_add_reorderings() {
    let base = Taxonomy::builtin();
    let mut more = base.clone();
    more.load_package("package extra.\nreorder(X,Y) :- isA(X,'grp'), isA(Y,'fltr').")
        .unwrap();
    let a = evaluate_static_rules(&base);
    let b = evaluate_static_rules(&more);
    assert!(a.is_subset(&b));
    assert!(b.contains(&("grp".to_string(), "fltr".to_string())));
}

fn join_flow(trnsf_cfg: serde_json::Value) -> Dataflow {
    Dataflow::new(
        vec![
            Node::source("orders", &["oid", "cust", "amount", "year", "status"]),
            Node::source("customers", &["cid", "name", "region", "tier"]),
            Node::op("join", "join", json!({"left": "cust", "right": "cid"})),
            Node::op("x", "trnsf", trnsf_cfg),
            Node::sink("sink"),
        ],
        vec![
            Edge::new("orders", "join", 0),
            Edge::new("customers", "join", 1),
            Edge::new("join", "x", 0),
            Edge::new("x", "sink", 0),
        ],
    )
}

#[test]
fn trnsf_on_one_join_side_is_pushed_below() {
    let t = Taxonomy::builtin();
    let d = join_flow(json!({"set": {"status": {"upper": "status"}}}));
    let m = match_structural(&t, &d);
    assert_eq!(m.len(), 1);
    let r = &m[0].rewritten;
    assert_eq!(validate(r, &t), vec![]);
    assert!(r.inputs("x").iter().any(|e| e.from == "orders"));
    assert!(r.inputs("sink").iter().any(|e| e.from == "join"));
}

#[test]
fn trnsf_reading_a_join_key_does_not_match() {
    let t = Taxonomy::builtin();
    let d = join_flow(json!({"set": {"status": {"copy": "cust"}}}));
    assert!(match_structural(&t, &d).is_empty());
}

#[test]
fn annotated_rmark_is_pushed_below_a_join() {
    let d = Dataflow::new(
        vec![
            Node::source("docs", &["id", "text"]),
            Node::source("meta", &["mid", "year"]),
            Node::op("join", "join", json!({"left": "id", "right": "mid"})),
            Node::op("x", "rmark", json!({"fields": ["text"]})),
            Node::sink("sink"),
        ],
        vec![
            Edge::new("docs", "join", 0),
            Edge::new("meta", "join", 1),
            Edge::new("join", "x", 0),
            Edge::new("x", "sink", 0),
        ],
    );
    assert!(match_structural(&Taxonomy::builtin_with_level(0), &d).is_empty());
    let full = Taxonomy::builtin_with_level(2);
    let m = match_structural(&full, &d);
    assert_eq!(m.len(), 1);
    assert!(m[0].rewritten.inputs("x").iter().any(|e| e.from == "docs"));
}

#[test]
fn running_example_keeps_filter_prerequisites() {
    let f = load_fixture("running-example").unwrap();
    let t = f.taxonomy();
    let facts = QueryFacts::derive(&f.plan, &t).unwrap();
    let r = Resolver::new(&t, Some(&facts));
    assert!(!r.resolve_reorder("pers", "fpers"));
    assert!(!r.resolve_reorder("pos", "rel"));
    assert!(r.resolve_reorder("pos", "fpers"));
}
