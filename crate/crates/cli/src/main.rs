mod session;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use sofa_core::baselines::{compare_modes, enumerate_mode, rows_to_csv, Mode};
use sofa_core::cost::sample_stats;
use sofa_core::dataflow::{validate, Dataflow};
use sofa_core::datamodel::Dataset;
use sofa_core::enumerator::{optimize, rank, EnumerationConfig, Pass, PlanAlternative};
use sofa_core::interpreter::{check_equivalence, corpora_for, run, RunOptions, Verdict};
use sofa_core::precedence::build_precedence;
use sofa_core::presto::{expand_complex, Taxonomy};
use sofa_core::rewrite::{Explanation, QueryFacts, Resolver};
use sofa_core::Error;

use session::{cost_model, read_data, read_plan, InputArgs, PackageArgs, WeightArgs};

#[derive(Parser, Debug)]
#[command(name = "sofa", version, about = "Semantics-aware optimizer for UDF-heavy dataflows")]
struct Cli {
    #[command(flatten)]
    pkgs: PackageArgs,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Enumerate reorderings and write the cheapest plan.
    Optimize {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        weights: WeightArgs,
        /// Enumerate the full space instead of pruning by cost.
        #[arg(long)]
        no_prune: bool,
        /// `collapsed`, `expanded` or `both`.
        #[arg(long, default_value = "both")]
        pass: Pass,
        /// `sofa`, `rw`, `filterpush` or `siso`.
        #[arg(long, default_value = "sofa")]
        mode: Mode,
        /// Seed for randomized exploration order.
        #[arg(long)]
        seed: Option<u64>,
        /// Best plan output (stdout if omitted).
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
        /// Cost report of the best plan.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory receiving every alternative as `plan-<rank>.json`.
        #[arg(long)]
        emit_all: Option<PathBuf>,
    },
    /// Print the precedence graph in DOT.
    Explain {
        #[command(flatten)]
        input: InputArgs,
        /// `collapsed` or `expanded`.
        #[arg(long, default_value = "collapsed")]
        pass: Pass,
        /// Transitive reduction only.
        #[arg(long)]
        reduced: bool,
    },
    /// Execute a plan and write one JSON-Lines file per sink.
    Run {
        #[command(flatten)]
        input: InputArgs,
        /// Directory of `<dataset>.jsonl` files; generated corpora otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check every output against the operator metadata.
        #[arg(long)]
        strict: bool,
        #[arg(short = 'o', long)]
        out: PathBuf,
    },
    /// Sample the data and write a statistics file.
    Stats {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
    },
    /// Plan counts, best cost and runtime per optimizer mode as CSV.
    Compare {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long, value_delimiter = ',', default_value = "sofa,rw,filterpush,siso")]
        modes: Vec<Mode>,
        /// Data for measuring runtime units of each best plan.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Generate data with this seed when no --data is given.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
    },
    /// Run two plans on generated corpora and compare their sinks.
    CheckEquiv {
        /// Exactly two dataflow files.
        #[arg(long = "plan", num_args = 1, required = true)]
        plans: Vec<PathBuf>,
        /// Corpus settings from this fixture.
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Inspect loaded packages.
    Packages {
        #[command(subcommand)]
        cmd: PackagesCmd,
    },
    /// Inspect rewrite rules.
    Rules {
        #[command(subcommand)]
        cmd: RulesCmd,
    },
}

#[derive(Subcommand, Debug)]
enum PackagesCmd {
    /// Loaded packages with their concepts.
    List,
    /// Properties, ancestors and prerequisites of one concept.
    Show { concept: String },
}

#[derive(Subcommand, Debug)]
enum RulesCmd {
    /// Derivation of `reorder(x, y)` or the goals that failed.
    Why {
        x: String,
        y: String,
        /// Resolve `x` and `y` as instance ids of this plan.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for invalid inputs, 3 for missing statistics, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::MissingStats(_) | Error::EmptySample => 3,
                Error::Exec { .. } | Error::Metadata { .. } | Error::Io(_) | Error::UnknownFixture(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn checked(d: &Dataflow, t: &Taxonomy) -> Result<()> {
    let v = validate(d, t);
    if !v.is_empty() {
        return Err(Error::Invalid(v).into());
    }
    Ok(())
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    let pkgs = cli.pkgs;
    match cli.cmd {
        Cmd::Optimize {
            input,
            weights,
            no_prune,
            pass,
            mode,
            seed,
            out,
            report,
            emit_all,
        } => {
            let inp = input.load()?;
            let t = pkgs.taxonomy(inp.level)?;
            checked(&inp.plan, &t)?;
            let model = cost_model(&t, inp.stats, &weights)?;
            let cfg = EnumerationConfig {
                prune: !no_prune,
                pass,
                seed,
                ..EnumerationConfig::default()
            };
            let ranked: Vec<PlanAlternative> = if mode == Mode::Sofa {
                optimize(&inp.plan, &t, &model, &cfg)?.ranked()
            } else {
                rank(enumerate_mode(mode, &inp.plan, &t, &model, &cfg)?)
            };
            let Some(best) = ranked.first() else { bail!("no plan produced") };
            let original = model.plan_cost(&inp.plan)?.total;
            eprintln!(
                "{} plans, best cost {} (original {original})",
                ranked.len(),
                best.cost
            );
            write_or_print(out.as_ref(), &(best.plan.to_json_string() + "\n"))?;
            if let Some(p) = report {
                let rep = model.plan_cost(&best.plan)?;
                let doc = json!({
                    "mode": mode.to_string(),
                    "plans": ranked.len(),
                    "originalCost": original,
                    "bestCost": best.cost,
                    "pass": best.pass,
                    "provenance": best.provenance,
                    "report": rep,
                });
                fs::write(&p, serde_json::to_string_pretty(&doc)? + "\n")?;
            }
            if let Some(dir) = emit_all {
                fs::create_dir_all(&dir)?;
                let mut index = Vec::new();
                for (i, p) in ranked.iter().enumerate() {
                    let name = format!("plan-{:04}.json", i + 1);
                    fs::write(dir.join(&name), p.plan.to_json_string() + "\n")?;
                    index.push(json!({"rank": i + 1, "file": name, "cost": p.cost, "pass": p.pass}));
                }
                fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)? + "\n")?;
            }
            Ok(0)
        }
        Cmd::Explain { input, pass, reduced } => {
            let inp = input.load()?;
            let t = pkgs.taxonomy(inp.level)?;
            checked(&inp.plan, &t)?;
            let flow = match pass {
                Pass::Collapsed => inp.plan,
                Pass::Expanded => expand_complex(&t, &inp.plan)?,
                Pass::Both => bail!("explain takes --pass collapsed or --pass expanded"),
            };
            let facts = QueryFacts::derive(&flow, &t)?;
            let pg = build_precedence(&flow, &t, &facts);
            print!("{}", pg.to_dot(&flow, reduced));
            Ok(0)
        }
        Cmd::Run {
            input,
            data,
            seed,
            strict,
            out,
        } => {
            let inp = input.load()?;
            let t = pkgs.taxonomy(inp.level)?;
            checked(&inp.plan, &t)?;
            let data = match data {
                Some(dir) => read_data(&inp.plan, &dir)?,
                None => corpora_for(&inp.plan, &inp.corpus, seed),
            };
            let (sinks, trace) = run(&inp.plan, &t, &data, RunOptions { strict })?;
            fs::create_dir_all(&out)?;
            for (sink, ds) in &sinks {
                let f = fs::File::create(out.join(format!("{sink}.jsonl")))?;
                ds.write_jsonl(std::io::BufWriter::new(f))?;
            }
            eprintln!("runtime units {}", trace.total_units());
            Ok(0)
        }
        Cmd::Stats {
            input,
            data,
            fraction,
            seed,
            out,
        } => {
            let inp = input.load()?;
            let t = pkgs.taxonomy(inp.level)?;
            checked(&inp.plan, &t)?;
            let data = match data {
                Some(dir) => read_data(&inp.plan, &dir)?,
                None => corpora_for(&inp.plan, &inp.corpus, seed),
            };
            let stats = sample_stats(&inp.plan, &t, &data, fraction, seed)?;
            write_or_print(out.as_ref(), &(stats.to_json_string() + "\n"))?;
            Ok(0)
        }
        Cmd::Compare {
            input,
            weights,
            modes,
            data,
            seed,
            out,
        } => {
            let inp = input.load()?;
            let t = pkgs.taxonomy(inp.level)?;
            checked(&inp.plan, &t)?;
            let model = cost_model(&t, inp.stats.clone(), &weights)?;
            let data = match (data, seed) {
                (Some(dir), _) => Some(read_data(&inp.plan, &dir)?),
                (None, Some(s)) => Some(corpora_for(&inp.plan, &inp.corpus, s)),
                (None, None) => None,
            };
            let rows = compare_modes(&inp.plan, &t, &model, &modes, data.as_ref())?;
            write_or_print(out.as_ref(), &rows_to_csv(&rows))?;
            Ok(0)
        }
        Cmd::CheckEquiv { plans, fixture, seeds } => {
            let [a, b] = plans.as_slice() else {
                bail!("check-equiv takes exactly two --plan arguments")
            };
            let (a, b) = (read_plan(a)?, read_plan(b)?);
            let corpus = match &fixture {
                Some(n) => sofa_core::fixtures::load_fixture(n)?.manifest.corpus,
                None => Default::default(),
            };
            let level = match &fixture {
                Some(n) => sofa_core::fixtures::load_fixture(n)?.manifest.level,
                None => 0,
            };
            let t = pkgs.taxonomy(level)?;
            checked(&a, &t)?;
            checked(&b, &t)?;
            let seeds: Vec<u64> = (0..seeds).collect();
            match check_equivalence(&a, &b, &t, &corpus, &seeds)? {
                Verdict::Pass { seeds } => {
                    println!("equivalent on {seeds} seeds");
                    Ok(0)
                }
                Verdict::Counterexample {
                    seed,
                    sink,
                    left_only,
                    right_only,
                } => {
                    println!("counterexample: seed {seed}, sink {sink}");
                    for (tag, recs) in [("first only", left_only), ("second only", right_only)] {
                        println!("{tag}: {} records", recs.len());
                        let mut buf = Vec::new();
                        Dataset::new(recs.into_iter().take(5).collect()).write_jsonl(&mut buf)?;
                        print!("{}", String::from_utf8_lossy(&buf));
                    }
                    Ok(1)
                }
            }
        }
        Cmd::Packages { cmd } => {
            let t = pkgs.taxonomy(0)?;
            match cmd {
                PackagesCmd::List => {
                    for p in t.packages() {
                        let names: Vec<String> = t
                            .concepts()
                            .filter(|c| c.package == *p)
                            .map(|c| c.name.clone())
                            .collect();
                        println!("{p} ({}): {}", names.len(), names.join(" "));
                    }
                }
                PackagesCmd::Show { concept } => print!("{}", t.describe(&concept)?),
            }
            Ok(0)
        }
        Cmd::Rules {
            cmd: RulesCmd::Why { x, y, plan },
        } => {
            let t = pkgs.taxonomy(0)?;
            let facts = match &plan {
                Some(p) => {
                    let d = read_plan(p)?;
                    checked(&d, &t)?;
                    Some(QueryFacts::derive(&d, &t)?)
                }
                None => None,
            };
            let r = Resolver::new(&t, facts.as_ref());
            match r.explain(&x, &y) {
                Explanation::Proved(d) => {
                    println!("reorder({x}, {y}) holds");
                    print!("{}", d.render());
                    Ok(0)
                }
                Explanation::Failed(tried) => {
                    println!("reorder({x}, {y}) not derivable");
                    for (rule, goal) in tried {
                        println!("  {rule}\n    fails at {goal}");
                    }
                    Ok(1)
                }
            }
        }
    }
}
