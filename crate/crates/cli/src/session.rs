//! Loading packages, plans, statistics and data for one command.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use sofa_core::cost::{CostModel, CostWeights, StatsFile};
use sofa_core::dataflow::Dataflow;
use sofa_core::datamodel::Dataset;
use sofa_core::fixtures::{load_fixture, Fixture};
use sofa_core::interpreter::CorpusConfig;
use sofa_core::presto::{Taxonomy, BUILTIN_PACKAGES, WEB_LEVELS};

pub const PACKAGE_PATH_VAR: &str = "SOFA_PACKAGE_PATH";

#[derive(Args, Debug, Clone, Default)]
pub struct PackageArgs {
    /// Extra packages: a `.presto` file, or a name looked up in
    /// $SOFA_PACKAGE_PATH and then among the embedded packages.
    #[arg(long = "packages", value_delimiter = ',', global = true)]
    pub packages: Vec<String>,
    /// Start from an empty taxonomy instead of the built-in packages.
    #[arg(long, global = true)]
    pub no_builtin: bool,
    /// Annotation level of the web operator (0..=2).
    #[arg(long, global = true)]
    pub level: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct InputArgs {
    /// Dataflow JSON file.
    #[arg(long, conflicts_with = "fixture")]
    pub plan: Option<PathBuf>,
    /// Shipped fixture supplying plan, statistics and corpus settings.
    #[arg(long)]
    pub fixture: Option<String>,
    /// Statistics JSON file (overrides the fixture's).
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

/// Plan plus whatever a fixture contributes.
pub struct Inputs {
    pub plan: Dataflow,
    pub stats: Option<StatsFile>,
    pub corpus: BTreeMap<String, CorpusConfig>,
    pub level: usize,
}

impl InputArgs {
    pub fn load(&self) -> Result<Inputs> {
        let fixture: Option<Fixture> = self.fixture.as_deref().map(load_fixture).transpose()?;
        let plan = match (&self.plan, &fixture) {
            (Some(p), _) => read_plan(p)?,
            (None, Some(f)) => f.plan.clone(),
            (None, None) => bail!("one of --plan or --fixture is required"),
        };
        let stats = match &self.stats {
            Some(p) => Some(read_stats(p)?),
            None => fixture.as_ref().map(|f| f.stats.clone()),
        };
        Ok(Inputs {
            plan,
            stats,
            corpus: fixture.as_ref().map(|f| f.manifest.corpus.clone()).unwrap_or_default(),
            level: fixture.as_ref().map_or(0, |f| f.manifest.level),
        })
    }
}

pub fn read_plan(p: &Path) -> Result<Dataflow> {
    let s = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(Dataflow::from_json_str(&s)?)
}

pub fn read_stats(p: &Path) -> Result<StatsFile> {
    let s = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(StatsFile::from_json_str(&s)?)
}

fn search_path() -> Vec<PathBuf> {
    std::env::var_os(PACKAGE_PATH_VAR)
        .map(|v| std::env::split_paths(&v).collect())
        .unwrap_or_default()
}

fn package_source(spec: &str) -> Result<String> {
    let p = Path::new(spec);
    if p.is_file() {
        return fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    }
    for dir in search_path() {
        let f = dir.join(format!("{spec}.presto"));
        if f.is_file() {
            return fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()));
        }
    }
    BUILTIN_PACKAGES
        .iter()
        .chain(WEB_LEVELS)
        .find(|(n, _)| *n == spec)
        .map(|(_, src)| src.to_string())
        .with_context(|| format!("package `{spec}` not found (searched ${PACKAGE_PATH_VAR} and embedded packages)"))
}

impl PackageArgs {
    /// Built-ins at the requested level, then each `--packages` entry in
    /// order. Embedded names already loaded are skipped.
    pub fn taxonomy(&self, default_level: usize) -> Result<Taxonomy> {
        let level = self.level.unwrap_or(default_level);
        if level > WEB_LEVELS.len() {
            bail!("--level must be at most {}", WEB_LEVELS.len());
        }
        let (mut t, loaded): (Taxonomy, Vec<&str>) = if self.no_builtin {
            (Taxonomy::new(), Vec::new())
        } else {
            let names = BUILTIN_PACKAGES.iter().chain(&WEB_LEVELS[..level]).map(|(n, _)| *n);
            (Taxonomy::builtin_with_level(level), names.collect())
        };
        for spec in &self.packages {
            if loaded.contains(&spec.as_str()) && !Path::new(spec).is_file() {
                continue;
            }
            let src = package_source(spec)?;
            t.load_package(&src).with_context(|| format!("loading package {spec}"))?;
        }
        Ok(t)
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct WeightArgs {
    /// I/O weight (overrides the statistics file).
    #[arg(long)]
    pub u: Option<f64>,
    /// Shipping weight.
    #[arg(long)]
    pub v: Option<f64>,
    /// CPU weight.
    #[arg(long)]
    pub w: Option<f64>,
}

pub fn cost_model(t: &Taxonomy, stats: Option<StatsFile>, w: &WeightArgs) -> Result<CostModel> {
    let Some(mut file) = stats else {
        return Err(sofa_core::Error::MissingStats("no --stats given and no fixture statistics".into()).into());
    };
    let cur = file.weights;
    file.weights = CostWeights {
        u: w.u.unwrap_or(cur.u),
        v: w.v.unwrap_or(cur.v),
        w: w.w.unwrap_or(cur.w),
    };
    file.weights.check()?;
    Ok(CostModel::new(t, file))
}

/// Reads `<dataset>.jsonl` for every source dataset of `d`.
pub fn read_data(d: &Dataflow, dir: &Path) -> Result<BTreeMap<String, Dataset>> {
    let mut out = BTreeMap::new();
    for s in d.sources() {
        let name = s.dataset_name().to_string();
        let f = dir.join(format!("{name}.jsonl"));
        let file = fs::File::open(&f).with_context(|| format!("opening {}", f.display()))?;
        let ds = Dataset::read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", f.display()))?;
        out.insert(name, ds);
    }
    Ok(out)
}
