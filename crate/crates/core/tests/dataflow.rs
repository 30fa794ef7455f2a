mod common;

use common::{chain, year_gt};
use serde_json::json;

use sofa_core::dataflow::{propagate_schemas, topological_order, validate, Dataflow, Edge, Node, Side, ViolationKind};
use sofa_core::datamodel::{AttributePath, SchemaDescriptor};
use sofa_core::fixtures::{all_fixtures, load_fixture};
use sofa_core::presto::Taxonomy;

fn out_schema(d: &Dataflow, t: &Taxonomy, node: &str) -> SchemaDescriptor {
    propagate_schemas(d, t)
        .unwrap()
        .into_iter()
        .find(|p| p.node == node && p.side == Side::Out)
        .unwrap()
        .schema
}

fn has(s: &SchemaDescriptor, p: &str) -> bool {
    s.attributes.contains(&AttributePath::parse(p).unwrap())
}

#[test]
fn running_example_is_valid() {
    let f = load_fixture("running-example").unwrap();
    assert_eq!(validate(&f.plan, &f.taxonomy()), vec![]);
}

#[test]
fn cycle_is_reported() {
    let t = Taxonomy::builtin();
    let d = Dataflow::new(
        vec![
            Node::source("src", common::NEWS),
            Node::op("a", "union-all", json!({})),
            Node::op("b", "fltr", year_gt(2000)),
            Node::sink("sink"),
        ],
        vec![
            Edge::new("src", "a", 0),
            Edge::new("a", "b", 0),
            Edge::new("b", "a", 1),
            Edge::new("b", "sink", 0),
        ],
    );
    let v = validate(&d, &t);
    assert!(v.iter().any(|x| x.kind == ViolationKind::Cycle), "{v:?}");
}

#[test]
fn consumer_of_unproduced_pos_is_a_schema_violation() {
    let t = Taxonomy::builtin();
    let d = chain(&[("sent", "anntt-sent", json!({})), ("rel", "anntt-rel", json!({}))]);
    let v = validate(&d, &t);
    assert!(v.iter().any(|x| x.kind == ViolationKind::Schema && x.subject.contains("rel")), "{v:?}");
    let ok = chain(&[
        ("sent", "anntt-sent", json!({})),
        ("pers", "anntt-ent-pers", json!({})),
        ("comp", "anntt-ent-comp", json!({})),
        ("pos", "anntt-pos", json!({})),
        ("rel", "anntt-rel", json!({})),
    ]);
    assert_eq!(validate(&ok, &t), vec![]);
}

#[test]
fn unknown_operator_is_a_violation_not_a_panic() {
    let t = Taxonomy::builtin();
    let d = chain(&[("x", "frobnicate", json!({}))]);
    let v = validate(&d, &t);
    assert!(v.iter().any(|x| x.kind == ViolationKind::UnknownOperator));
}

#[test]
fn abstract_operator_rejected() {
    let t = Taxonomy::builtin();
    let d = chain(&[("x", "anntt", json!({}))]);
    assert!(validate(&d, &t).iter().any(|x| x.kind == ViolationKind::AbstractOperator));
}

#[test]
fn port_arity_checked() {
    let t = Taxonomy::builtin();
    let d = chain(&[("j", "join", json!({"left": "id", "right": "id"}))]);
    assert!(validate(&d, &t).iter().any(|x| x.kind == ViolationKind::PortArity));
}

#[test]
fn sentence_annotator_adds_sentences() {
    let t = Taxonomy::builtin();
    let d = chain(&[("sent", "anntt-sent", json!({}))]);
    let s = out_schema(&d, &t, "sent");
    assert!(has(&s, "text") && has(&s, "sentences"));
}

#[test]
fn filter_preserves_schema() {
    let t = Taxonomy::builtin();
    let d = chain(&[("f", "fltr", year_gt(2010))]);
    assert_eq!(out_schema(&d, &t, "f"), out_schema(&d, &t, "src"));
}

#[test]
fn trfrc_adds_its_write_set() {
    let t = Taxonomy::builtin();
    let d = chain(&[("norm", "trfrc", json!({"set": {"norm": {"lower": "text"}}}))]);
    let mut want = out_schema(&d, &t, "src");
    want.attributes.insert(AttributePath::parse("norm").unwrap());
    assert_eq!(out_schema(&d, &t, "norm"), want);
}

#[test]
fn schemas_independent_of_node_order() {
    for f in all_fixtures() {
        let t = f.taxonomy();
        let mut rev = f.plan.clone();
        rev.nodes.reverse();
        rev.edges.reverse();
        let mut a = propagate_schemas(&f.plan, &t).unwrap();
        let mut b = propagate_schemas(&rev, &t).unwrap();
        a.sort_by(|x, y| (&x.node, x.side, x.port).cmp(&(&y.node, y.side, y.port)));
        b.sort_by(|x, y| (&x.node, x.side, x.port).cmp(&(&y.node, y.side, y.port)));
        assert_eq!(a, b, "{}", f.name);
    }
}

#[test]
fn topological_order_respects_edges_on_fixtures() {
    for f in all_fixtures() {
        let order = topological_order(&f.plan).unwrap();
        let pos = |id: &str| order.iter().position(|x| x == id).unwrap();
        for e in &f.plan.edges {
            assert!(pos(&e.from) < pos(&e.to), "{} {e:?}", f.name);
        }
        assert_eq!(topological_order(&f.plan).unwrap(), order);
    }
}

#[test]
fn empty_flow_has_no_order() {
    assert!(topological_order(&Dataflow::default()).is_err());
}

#[test]
fn fixtures_round_trip_through_json() {
    for f in all_fixtures() {
        let text = f.plan.to_json_string();
        assert_eq!(Dataflow::from_json_str(&text).unwrap(), f.plan, "{}", f.name);
    }
}

#[test]
fn declared_access_round_trips() {
    let text = r#"{"nodes":[{"id":"s","kind":"source","config":{"schema":["id","year","text"]}},
        {"id":"f","kind":"op","op":"fltr","config":{"pred":{"path":"year","op":">","value":1}},
         "reads":["year"],"writes":[{"path":"es","mode":"append"}]},
        {"id":"k","kind":"sink"}],
        "edges":[{"from":"s","fromPort":0,"to":"f","toPort":0},{"from":"f","fromPort":0,"to":"k","toPort":0}]}"#;
    let d = Dataflow::from_json_str(text).unwrap();
    assert_eq!(Dataflow::from_json_str(&d.to_json_string()).unwrap(), d);
}

#[test]
fn valid_flows_have_a_source_and_a_sink() {
    for f in all_fixtures() {
        assert!(f.plan.sources().count() >= 1 && f.plan.sinks().count() >= 1);
    }
    let t = Taxonomy::builtin();
    let only_sink = Dataflow::new(vec![Node::sink("k")], vec![]);
    assert!(!validate(&only_sink, &t).is_empty());
}
