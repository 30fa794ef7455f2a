mod common;

use common::{chain_with, count_gt, year_gt, NEWS};
use serde_json::json;
use sofa_core::cost::CostModel;
use sofa_core::dataflow::Dataflow;
use sofa_core::enumerator::{enumerate, optimize, rank, EnumerationConfig, Pass, PassKind};
use sofa_core::fixtures::{all_fixtures, load_fixture};
use sofa_core::precedence::{build_precedence, PrecedenceGraph};
use sofa_core::presto::Taxonomy;
use sofa_core::rewrite::QueryFacts;

fn pg_of(d: &Dataflow, t: &Taxonomy) -> PrecedenceGraph {
    let facts = QueryFacts::derive(d, t).unwrap();
    build_precedence(d, t, &facts)
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

/// Orders of a chain's operators that respect every operator pair in `pg`.
fn linear_extensions(d: &Dataflow, pg: &PrecedenceGraph) -> usize {
    let ops: Vec<String> = d.operators().map(|n| n.id.clone()).collect();
    permutations(&ops)
        .into_iter()
        .filter(|p| {
            pg.edges.iter().all(|(u, v)| {
                match (p.iter().position(|x| x == u), p.iter().position(|x| x == v)) {
                    (Some(i), Some(j)) => i < j,
                    _ => true,
                }
            })
        })
        .count()
}

fn chain(ops: &[(&str, &str, serde_json::Value)]) -> Dataflow {
    let mut schema = NEWS.to_vec();
    schema.push("sentences");
    chain_with(&schema, ops)
}

fn chains() -> Vec<Dataflow> {
    vec![
        chain(&[("a", "anntt-ent-pers", json!({})), ("f", "fltr", count_gt("entities.PER", 0))]),
        chain(&[
            ("f1", "fltr", year_gt(2010)),
            ("f2", "fltr", json!({"pred": {"path": "source", "op": "==", "value": "wire"}})),
            ("a", "anntt-ent-pers", json!({})),
        ]),
        chain(&[
            ("s", "anntt-sent", json!({})),
            ("p", "anntt-ent-pers", json!({})),
            ("c", "anntt-ent-comp", json!({})),
            ("f", "fltr", year_gt(2012)),
        ]),
    ]
}

#[test]
fn dependent_chain_has_one_plan() {
    let t = Taxonomy::builtin();
    let d = &chains()[0];
    let e = enumerate(d, &t, &pg_of(d, &t), &CostModel::defaults(&t), &EnumerationConfig::unpruned()).unwrap();
    assert_eq!(e.plans.len(), 1);
    assert_eq!(e.plans[0].plan.canonical_key(), d.canonical_key());
}

#[test]
fn chain_plan_count_equals_linear_extensions() {
    let t = Taxonomy::builtin();
    for d in chains() {
        let pg = pg_of(&d, &t);
        let e = enumerate(&d, &t, &pg, &CostModel::defaults(&t), &EnumerationConfig::unpruned()).unwrap();
        assert_eq!(e.plans.len(), linear_extensions(&d, &pg), "{}", d.canonical_key());
    }
}

#[test]
fn three_independent_operators_give_six_orders() {
    let t = Taxonomy::builtin();
    let d = &chains()[1];
    let e = enumerate(d, &t, &pg_of(d, &t), &CostModel::defaults(&t), &EnumerationConfig::unpruned()).unwrap();
    assert_eq!(e.plans.len(), 6);
}

#[test]
fn every_plan_respects_precedence() {
    for f in all_fixtures() {
        let t = f.taxonomy();
        let o = optimize(&f.plan, &t, &f.model(&t), &EnumerationConfig::unpruned()).unwrap();
        for pass in &o.passes {
            for p in &pass.enumeration.plans {
                let reach = p.plan.reachability();
                for (u, v) in &pass.pg.edges {
                    assert!(reach[u].contains(v), "{} {:?}: {u}->{v}", f.name, p.provenance);
                }
            }
        }
    }
}

#[test]
fn ranking_is_ascending_and_stable() {
    let f = load_fixture("running-example").unwrap();
    let t = f.taxonomy();
    let o = optimize(&f.plan, &t, &f.model(&t), &EnumerationConfig::unpruned()).unwrap();
    let ranked = o.ranked();
    assert!(ranked.windows(2).all(|w| w[0].cost <= w[1].cost));
    assert_eq!(ranked[0].cost, o.best.cost);
    let mut tied = ranked.clone();
    for p in &mut tied {
        p.cost = 1.0;
    }
    let again = rank(tied.clone());
    assert_eq!(again, tied);
}

#[test]
fn original_plan_is_in_the_space() {
    for f in all_fixtures() {
        let t = f.taxonomy();
        let o = optimize(&f.plan, &t, &f.model(&t), &EnumerationConfig::unpruned()).unwrap();
        let collapsed = o.passes.iter().find(|p| p.pass == PassKind::Collapsed).unwrap();
        assert!(collapsed.enumeration.keys().contains(&f.plan.canonical_key()), "{}", f.name);
        assert!(o.best.cost <= o.original_cost, "{}", f.name);
    }
}

#[test]
fn pruning_keeps_the_best_cost_under_any_order() {
    for f in all_fixtures() {
        let t = f.taxonomy();
        let m = f.model(&t);
        let full = optimize(&f.plan, &t, &m, &EnumerationConfig::unpruned()).unwrap();
        for seed in 0..5 {
            let cfg = EnumerationConfig {
                seed: Some(seed),
                ..EnumerationConfig::default()
            };
            let pruned = optimize(&f.plan, &t, &m, &cfg).unwrap();
            assert_eq!(pruned.best.cost, full.best.cost, "{} seed {seed}", f.name);
        }
    }
}

#[test]
fn seeded_order_does_not_change_the_unpruned_space() {
    let f = load_fixture("running-example").unwrap();
    let t = f.taxonomy();
    let m = f.model(&t);
    let base = optimize(&f.plan, &t, &m, &EnumerationConfig::unpruned()).unwrap().space(&t).unwrap();
    for seed in [1, 2] {
        let cfg = EnumerationConfig {
            seed: Some(seed),
            ..EnumerationConfig::unpruned()
        };
        assert_eq!(optimize(&f.plan, &t, &m, &cfg).unwrap().space(&t).unwrap(), base);
    }
}

#[test]
fn expanded_pass_adds_plans_for_complex_operators() {
    let f = load_fixture("q7-shape").unwrap();
    let t = f.taxonomy();
    let m = f.model(&t);
    let run = |pass| {
        let cfg = EnumerationConfig {
            pass,
            ..EnumerationConfig::unpruned()
        };
        optimize(&f.plan, &t, &m, &cfg).unwrap().space(&t).unwrap()
    };
    let collapsed = run(Pass::Collapsed);
    let both = run(Pass::Both);
    assert!(collapsed.is_subset(&both));
    assert!(both.len() > collapsed.len());
}

#[test]
fn optimization_is_deterministic() {
    let f = load_fixture("q2-shape").unwrap();
    let t = f.taxonomy();
    let m = f.model(&t);
    let a = optimize(&f.plan, &t, &m, &EnumerationConfig::default()).unwrap();
    let b = optimize(&f.plan, &t, &m, &EnumerationConfig::default()).unwrap();
    assert_eq!(a.ranked(), b.ranked());
    assert_eq!(a.best, b.best);
}

#[test]
fn limit_truncates() {
    let f = load_fixture("running-example").unwrap();
    let t = f.taxonomy();
    let d = &f.plan;
    let cfg = EnumerationConfig {
        limit: 3,
        ..EnumerationConfig::unpruned()
    };
    let e = enumerate(d, &t, &pg_of(d, &t), &f.model(&t), &cfg).unwrap();
    assert_eq!(e.plans.len(), 3);
    assert!(e.truncated);
}
