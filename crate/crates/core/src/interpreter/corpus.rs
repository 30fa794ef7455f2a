//! Seeded synthetic corpora: news articles for the text operators, and small
//! order/customer tables for the relational ones.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::text::{sentence_spans, tokens, COMPANIES, LOCATIONS, OTHER_VERBS, PERSONS, RELATION_VERBS};
use crate::datamodel::{Dataset, Record, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    #[default]
    News,
    Orders,
    Customers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub kind: CorpusKind,
    pub records: usize,
    /// Fraction of articles that are near-copies of an earlier one.
    pub dup_rate: f64,
    pub year_min: i64,
    pub year_max: i64,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Chance that a sentence slot for a person or company is filled.
    pub person_rate: f64,
    pub company_rate: f64,
    /// Wrap some proper names in inline tags.
    pub markup: bool,
    /// Add `sentences` spans, as if the articles were already segmented.
    pub sentences: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            kind: CorpusKind::News,
            records: 100,
            dup_rate: 0.2,
            year_min: 2005,
            year_max: 2015,
            min_sentences: 2,
            max_sentences: 6,
            person_rate: 0.3,
            company_rate: 0.4,
            markup: false,
            sentences: false,
        }
    }
}

const FILLER: &[&str] = &[
    "market", "shares", "growth", "reports", "quarterly", "investors", "deals", "products", "walked", "running",
    "planned", "strongly", "results", "numbers", "talks", "rumors",
];
const ENDINGS: &[&str] = &["today.", "yesterday.", "again.", "recently.", "overseas."];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().unwrap_or("x")
}

fn name(rng: &mut ChaCha8Rng, pool: &[&str], markup: bool) -> String {
    let n = pick(rng, pool);
    if markup && rng.gen_bool(0.3) {
        format!("<b>{n}</b>")
    } else {
        n.to_string()
    }
}

fn sentence(rng: &mut ChaCha8Rng, cfg: &CorpusConfig) -> Vec<String> {
    let mut w: Vec<String> = Vec::new();
    let per = rng.gen_bool(cfg.person_rate.clamp(0.0, 1.0));
    let comp = rng.gen_bool(cfg.company_rate.clamp(0.0, 1.0));
    if per {
        if rng.gen_bool(0.2) {
            w.push("Dr.".into());
        }
        w.push(name(rng, PERSONS, cfg.markup));
    } else {
        w.push("The".into());
        w.push(pick(rng, FILLER).into());
    }
    let verb = if per && comp && rng.gen_bool(0.6) {
        pick(rng, RELATION_VERBS)
    } else {
        pick(rng, OTHER_VERBS)
    };
    w.push(verb.into());
    if comp {
        w.push("the".into());
        w.push("firm".into());
        w.push(name(rng, COMPANIES, cfg.markup));
    } else {
        w.push("the".into());
        w.push(pick(rng, FILLER).into());
    }
    for _ in 0..rng.gen_range(0..3) {
        w.push(pick(rng, FILLER).into());
    }
    if rng.gen_bool(0.25) {
        w.push("in".into());
        w.push(name(rng, LOCATIONS, cfg.markup));
    }
    w.push(pick(rng, ENDINGS).into());
    w
}

fn news(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> Vec<Record> {
    let mut docs: Vec<(i64, String)> = Vec::new();
    let mut out = Vec::new();
    for id in 1..=cfg.records as i64 {
        let (year, text) = if !docs.is_empty() && rng.gen_bool(cfg.dup_rate.clamp(0.0, 1.0)) {
            let (year, orig) = docs[rng.gen_range(0..docs.len())].clone();
            let mut toks: Vec<&str> = orig.split(' ').collect();
            let at = toks.len() - 1;
            toks.insert(at, "reportedly");
            (year, toks.join(" "))
        } else {
            let year = rng.gen_range(cfg.year_min..=cfg.year_max.max(cfg.year_min));
            let lo = cfg.min_sentences.max(1);
            let n = rng.gen_range(lo..=cfg.max_sentences.max(lo));
            let words: Vec<String> = (0..n).flat_map(|_| sentence(rng, cfg)).collect();
            (year, words.join(" "))
        };
        docs.push((year, text.clone()));
        let source = if rng.gen_bool(0.2) {
            Value::Null
        } else {
            Value::text(pick(rng, &["wire", "web", "print"]))
        };
        let mut fields = vec![("id", Value::Int(id)), ("year", Value::Int(year))];
        if cfg.sentences {
            let spans = sentence_spans(&tokens(&text))
                .into_iter()
                .map(|(b, e)| Value::Array(vec![Value::Int(b as i64), Value::Int(e as i64)]))
                .collect();
            fields.push(("sentences", Value::Array(spans)));
        }
        fields.push(("text", Value::Text(text)));
        fields.push(("source", source));
        out.push(record(&fields));
    }
    out
}

fn record(fields: &[(&str, Value)]) -> Record {
    Record::new(Value::Object(
        fields.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    ))
    .expect("object")
}

fn customers_for(records: usize) -> i64 {
    (records / 5).max(5) as i64
}

fn orders(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> Vec<Record> {
    let ncust = customers_for(cfg.records);
    (1..=cfg.records as i64)
        .map(|id| {
            record(&[
                ("oid", Value::Int(id)),
                ("cust", Value::Int(rng.gen_range(1..=ncust + 2))),
                ("amount", Value::Int(rng.gen_range(1..=500))),
                ("year", Value::Int(rng.gen_range(cfg.year_min..=cfg.year_max.max(cfg.year_min)))),
                ("status", Value::text(pick(rng, &["open", "closed", "returned"]))),
            ])
        })
        .collect()
}

fn customers(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> Vec<Record> {
    (1..=customers_for(cfg.records))
        .map(|cid| {
            record(&[
                ("cid", Value::Int(cid)),
                ("name", Value::text(format!("{} {}", pick(rng, PERSONS), cid))),
                ("region", Value::text(pick(rng, &["EU", "US", "APAC"]))),
                ("tier", Value::Int(rng.gen_range(1..=3))),
            ])
        })
        .collect()
}

/// Deterministic in (`cfg`, `seed`).
pub fn generate_corpus(cfg: &CorpusConfig, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dataset::new(match cfg.kind {
        CorpusKind::News => news(cfg, &mut rng),
        CorpusKind::Orders => orders(cfg, &mut rng),
        CorpusKind::Customers => customers(cfg, &mut rng),
    })
}
