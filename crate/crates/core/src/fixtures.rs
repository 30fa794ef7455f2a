//! Shipped example flows with their statistics and corpus settings. The files
//! live under `fixtures/<name>/` and are compiled in.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cost::{CostModel, StatsFile};
use crate::dataflow::Dataflow;
use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::interpreter::{corpora_for, CorpusConfig};
use crate::presto::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Pipeline,
    Dag,
    Join,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub description: String,
    /// Annotation level of the web operator.
    #[serde(default)]
    pub level: usize,
    pub shape: Shape,
    /// Generator settings per dataset name.
    pub corpus: BTreeMap<String, CorpusConfig>,
    #[serde(default)]
    pub expected: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub manifest: Manifest,
    pub plan: Dataflow,
    pub stats: StatsFile,
}

macro_rules! fixture_files {
    ($($name:literal),* $(,)?) => {
        /// Names of all shipped fixtures.
        pub const FIXTURE_NAMES: &[&str] = &[$($name),*];

        fn files(name: &str) -> Option<(&'static str, &'static str, &'static str)> {
            match name {
                $($name => Some((
                    include_str!(concat!("../../../fixtures/", $name, "/manifest.json")),
                    include_str!(concat!("../../../fixtures/", $name, "/plan.json")),
                    include_str!(concat!("../../../fixtures/", $name, "/stats.json")),
                )),)*
                _ => None,
            }
        }
    };
}

fixture_files!("fig5", "running-example", "q2-shape", "q4-shape", "q6-shape", "q7-shape", "q8-payg");

pub fn load_fixture(name: &str) -> Result<Fixture> {
    let (manifest, plan, stats) = files(name).ok_or_else(|| Error::UnknownFixture(name.to_string()))?;
    Ok(Fixture {
        name: name.to_string(),
        manifest: serde_json::from_str(manifest)?,
        plan: Dataflow::from_json_str(plan)?,
        stats: StatsFile::from_json_str(stats)?,
    })
}

pub fn all_fixtures() -> Vec<Fixture> {
    FIXTURE_NAMES
        .iter()
        .map(|n| load_fixture(n).expect("shipped fixture loads"))
        .collect()
}

/// On-disk directory of the shipped fixtures.
pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

impl Fixture {
    pub fn taxonomy(&self) -> Taxonomy {
        Taxonomy::builtin_with_level(self.manifest.level)
    }

    pub fn model(&self, t: &Taxonomy) -> CostModel {
        CostModel::new(t, self.stats.clone())
    }

    pub fn corpora(&self, seed: u64) -> BTreeMap<String, Dataset> {
        corpora_for(&self.plan, &self.manifest.corpus, seed)
    }

    /// Expected plan count for `key` in the manifest, if recorded.
    pub fn expected_count(&self, key: &str) -> Option<u64> {
        self.manifest.expected.get(key).and_then(serde_json::Value::as_u64)
    }
}
