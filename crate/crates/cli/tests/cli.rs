use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn sofa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sofa"))
        .args(args)
        .env_remove("SOFA_PACKAGE_PATH")
        .output()
        .expect("sofa runs")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fixture_file(name: &str, file: &str) -> String {
    fixtures().join(name).join(file).to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Node ids and edges of a DOT digraph as written by `explain`.
fn dot_graph(dot: &str) -> (BTreeSet<String>, BTreeSet<(String, String)>) {
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for line in dot.lines().map(str::trim) {
        let ids: Vec<&str> = line.split('"').skip(1).step_by(2).collect();
        if line.contains("->") {
            edges.insert((ids[0].to_string(), ids[1].to_string()));
        } else if line.contains("[label=") {
            nodes.insert(ids[0].to_string());
        }
    }
    (nodes, edges)
}

fn write_plan(dir: &TempDir, name: &str, json: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn optimize_running_example_writes_best_plan() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("best.json");
    let report = dir.path().join("report.json");
    let o = sofa(&[
        "optimize",
        "--fixture",
        "running-example",
        "-o",
        out.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plan: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    // the cheapest plan may come from the expanded pass
    assert!(plan["nodes"].as_array().unwrap().len() >= 11);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(rep["bestCost"].as_f64().unwrap() < rep["originalCost"].as_f64().unwrap());
}

#[test]
fn optimize_from_plan_and_stats_files() {
    let o = sofa(&[
        "optimize",
        "--plan",
        &fixture_file("q7-shape", "plan.json"),
        "--stats",
        &fixture_file("q7-shape", "stats.json"),
        "--no-prune",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("\"nodes\""));
}

#[test]
fn optimize_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let all = dir.path().join(format!("all{i}"));
        let o = sofa(&["optimize", "--fixture", "q2-shape", "--emit-all", all.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push((stdout(&o), fs::read_to_string(all.join("index.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn cycle_exits_2_and_names_it() {
    let dir = TempDir::new().unwrap();
    let plan = write_plan(
        &dir,
        "cycle.json",
        r#"{"nodes":[{"id":"src","kind":"source","config":{"schema":["id","text"]}},
            {"id":"a","kind":"op","op":"anntt-sent"},{"id":"b","kind":"op","op":"anntt-tok"},
            {"id":"out","kind":"sink"}],
           "edges":[{"from":"src","to":"a"},{"from":"a","to":"b"},{"from":"b","to":"a","toPort":1},
            {"from":"b","to":"out"}]}"#,
    );
    let o = sofa(&["optimize", "--plan", &plan, "--stats", &fixture_file("fig5", "stats.json")]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("cycle") && (err.contains("`a`") || err.contains("`b`") || err.contains(" a")), "{err}");
}

#[test]
fn unknown_operator_exits_2() {
    let dir = TempDir::new().unwrap();
    let plan = write_plan(
        &dir,
        "unknown.json",
        r#"{"nodes":[{"id":"src","kind":"source","config":{"schema":["id","text"]}},
            {"id":"x","kind":"op","op":"no-such-op"},{"id":"out","kind":"sink"}],
           "edges":[{"from":"src","to":"x"},{"from":"x","to":"out"}]}"#,
    );
    let o = sofa(&["optimize", "--plan", &plan, "--stats", &fixture_file("fig5", "stats.json")]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_stats_exits_3() {
    let o = sofa(&["optimize", "--plan", &fixture_file("fig5", "plan.json")]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn explain_fig5_matches_golden() {
    let o = sofa(&["explain", "--fixture", "fig5", "--reduced"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let golden = fs::read_to_string(fixtures().join("fig5/precedence.dot")).unwrap();
    assert_eq!(dot_graph(&stdout(&o)), dot_graph(&golden));
}

#[test]
fn explain_chain_is_a_path() {
    let dir = TempDir::new().unwrap();
    let plan = write_plan(
        &dir,
        "chain.json",
        r#"{"nodes":[{"id":"src","kind":"source","config":{"schema":["id","text"]}},
            {"id":"sent","kind":"op","op":"anntt-sent"},{"id":"tok","kind":"op","op":"anntt-tok"},
            {"id":"out","kind":"sink"}],
           "edges":[{"from":"src","to":"sent"},{"from":"sent","to":"tok"},{"from":"tok","to":"out"}]}"#,
    );
    let o = sofa(&["explain", "--plan", &plan, "--reduced"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, edges) = dot_graph(&stdout(&o));
    let want: BTreeSet<(String, String)> = [("src", "sent"), ("sent", "tok"), ("tok", "out")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    assert_eq!(edges, want);
}

#[test]
fn explain_expanded_shows_components() {
    let collapsed = sofa(&["explain", "--fixture", "q7-shape"]);
    let expanded = sofa(&["explain", "--fixture", "q7-shape", "--pass", "expanded"]);
    assert!(expanded.status.success(), "{}", stderr(&expanded));
    let (c, _) = dot_graph(&stdout(&collapsed));
    let (e, _) = dot_graph(&stdout(&expanded));
    assert!(e.len() > c.len(), "{e:?} vs {c:?}");
    assert!(stdout(&expanded).contains("anntt-ent-pers"));
}

#[test]
fn run_writes_one_file_per_sink() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = sofa(&["run", "--fixture", "q6-shape", "--seed", "3", "--strict", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("sink.jsonl")).unwrap();
    assert!(text.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}

#[test]
fn run_reads_data_directory() {
    let dir = TempDir::new().unwrap();
    let gen = dir.path().join("gen");
    let o = sofa(&["run", "--fixture", "q7-shape", "-o", gen.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    fs::write(
        data.join("news.jsonl"),
        "{\"id\":1,\"year\":2012,\"text\":\"Anna Berg met Acme Corp. Nothing else.\",\"source\":\"wire\"}\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = sofa(&[
        "run",
        "--fixture",
        "q7-shape",
        "--data",
        data.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("sink.jsonl").exists());
}

#[test]
fn stats_sample_writes_json() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s.json");
    let o = sofa(&[
        "stats",
        "--fixture",
        "running-example",
        "--fraction",
        "0.05",
        "--seed",
        "7",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(s["operators"]["pers"]["sel"].is_number());
    assert!(s["sources"]["src"].as_f64().unwrap() > 0.0);
}

#[test]
fn compare_emits_csv_grid() {
    let o = sofa(&["compare", "--fixture", "running-example"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "mode,plans,plansPruned,bestCost,runtimeUnits");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("sofa,"));
}

#[test]
fn check_equiv_original_vs_optimized() {
    let dir = TempDir::new().unwrap();
    let best = dir.path().join("best.json");
    let o = sofa(&["optimize", "--fixture", "q7-shape", "-o", best.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = sofa(&[
        "check-equiv",
        "--plan",
        &fixture_file("q7-shape", "plan.json"),
        "--plan",
        best.to_str().unwrap(),
        "--fixture",
        "q7-shape",
        "--seeds",
        "3",
    ]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("equivalent on 3 seeds"));
}

#[test]
fn check_equiv_reports_counterexample() {
    let dir = TempDir::new().unwrap();
    let a = write_plan(
        &dir,
        "a.json",
        r#"{"nodes":[{"id":"src","kind":"source","config":{"schema":["id","year","text","source"]}},
            {"id":"f","kind":"op","op":"fltr","config":{"pred":{"path":"year","op":">","value":2010}}},
            {"id":"out","kind":"sink"}],
           "edges":[{"from":"src","to":"f"},{"from":"f","to":"out"}]}"#,
    );
    let b = write_plan(
        &dir,
        "b.json",
        r#"{"nodes":[{"id":"src","kind":"source","config":{"schema":["id","year","text","source"]}},
            {"id":"f","kind":"op","op":"fltr","config":{"pred":{"path":"year","op":">","value":2005}}},
            {"id":"out","kind":"sink"}],
           "edges":[{"from":"src","to":"f"},{"from":"f","to":"out"}]}"#,
    );
    let o = sofa(&["check-equiv", "--plan", &a, "--plan", &b, "--seeds", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("counterexample"));
}

#[test]
fn packages_list_and_show() {
    let o = sofa(&["packages", "list"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for p in ["base", "ie", "dc", "web"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{p} "))), "{text}");
    }
    let o = sofa(&["packages", "show", "anntt-rel"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("prerequisites:") && stdout(&o).contains("anntt-pos"));
    let o = sofa(&["packages", "show", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rules_why_prints_derivation_or_failures() {
    let o = sofa(&["rules", "why", "anntt-ent-pers", "anntt-ent-comp"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("holds"));
    let o = sofa(&["rules", "why", "--plan", &fixture_file("running-example", "plan.json"), "pos", "rel"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("not derivable"));
}

#[test]
fn package_path_resolves_named_packages() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("extra.presto"),
        "package extra.\noperator(shout, concrete).\nisA(shout, trnsf).\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sofa"))
        .args(["--packages", "extra", "packages", "show", "shout"])
        .env("SOFA_PACKAGE_PATH", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("extra:shout"));
    let o = sofa(&["--packages", "extra", "packages", "list"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn level_option_adds_web_annotations() {
    let base = sofa(&["packages", "show", "rmark"]);
    let l2 = sofa(&["--level", "2", "packages", "show", "rmark"]);
    assert!(base.status.success() && l2.status.success());
    assert_ne!(stdout(&base), stdout(&l2));
}
