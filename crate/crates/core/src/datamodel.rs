//! Semi-structured values, records, datasets and attribute paths.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A nested value tree. Decimals hold their normalized textual form so that
/// equality is exact.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Dec(String),
    Text(String),
    Array(Vec<Value>),
    Object(BTreeMap<String, Value>),
}

impl Value {
    pub fn obj() -> Value {
        Value::Object(BTreeMap::new())
    }

    pub fn text(s: impl Into<String>) -> Value {
        Value::Text(s.into())
    }

    /// Parses a decimal literal into its canonical form (`Int` when integral
    /// and in range).
    pub fn decimal(lit: &str) -> Option<Value> {
        let canon = normalize_decimal(lit)?;
        Some(match canon.parse::<i64>() {
            Ok(i) if !canon.contains('.') => Value::Int(i),
            _ => Value::Dec(canon),
        })
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Dec(d) => d.parse().ok(),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&Vec<Value>> {
        match self {
            Value::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_object(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Object(o) => Some(o),
            _ => None,
        }
    }

    pub fn get(&self, field: &str) -> Option<&Value> {
        self.as_object().and_then(|o| o.get(field))
    }

    pub fn depth(&self) -> usize {
        match self {
            Value::Array(a) => 1 + a.iter().map(Value::depth).max().unwrap_or(0),
            Value::Object(o) => 1 + o.values().map(Value::depth).max().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn from_json(v: &serde_json::Value) -> Value {
        match v {
            serde_json::Value::Null => Value::Null,
            serde_json::Value::Bool(b) => Value::Bool(*b),
            serde_json::Value::Number(n) => {
                let lit = n.to_string();
                Value::decimal(&lit).unwrap_or(Value::Dec(lit))
            }
            serde_json::Value::String(s) => Value::Text(s.clone()),
            serde_json::Value::Array(a) => Value::Array(a.iter().map(Value::from_json).collect()),
            serde_json::Value::Object(o) => Value::Object(
                o.iter()
                    .map(|(k, v)| (k.clone(), Value::from_json(v)))
                    .collect(),
            ),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Int(i) => serde_json::Value::from(*i),
            Value::Dec(d) => serde_json::from_str(d).unwrap_or(serde_json::Value::Null),
            Value::Text(s) => serde_json::Value::String(s.clone()),
            Value::Array(a) => serde_json::Value::Array(a.iter().map(Value::to_json).collect()),
            Value::Object(o) => serde_json::Value::Object(
                o.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
            ),
        }
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        serde_json::Value::deserialize(d).map(|v| Value::from_json(&v))
    }
}

/// Canonical text of a decimal literal: no exponent, no redundant zeros,
/// no negative zero.
fn normalize_decimal(lit: &str) -> Option<String> {
    let lit = lit.trim();
    let (neg, body) = match lit.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, lit.strip_prefix('+').unwrap_or(lit)),
    };
    let (mantissa, exp) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], body[i + 1..].parse::<i64>().ok()?),
        None => (body, 0),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: String = format!("{int_part}{frac_part}");
    // value = digits * 10^(exp - frac_len)
    let scale = exp - frac_part.len() as i64;
    let digits = digits.trim_start_matches('0');
    if digits.is_empty() {
        return Some("0".to_string());
    }
    let trimmed = digits.trim_end_matches('0');
    let scale = scale + (digits.len() - trimmed.len()) as i64;
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if scale >= 0 {
        out.push_str(trimmed);
        out.extend(std::iter::repeat('0').take(scale as usize));
    } else {
        let point = trimmed.len() as i64 + scale;
        if point > 0 {
            out.push_str(&trimmed[..point as usize]);
            out.push('.');
            out.push_str(&trimmed[point as usize..]);
        } else {
            out.push_str("0.");
            out.extend(std::iter::repeat('0').take((-point) as usize));
            out.push_str(trimmed);
        }
    }
    Some(out)
}

/// A record; the root is always an object.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Record(Value);

impl Record {
    pub fn new(root: Value) -> Result<Record> {
        match root {
            Value::Object(_) => Ok(Record(root)),
            _ => Err(Error::NotAnObject),
        }
    }

    pub fn empty() -> Record {
        Record(Value::obj())
    }

    pub fn root(&self) -> &Value {
        &self.0
    }

    pub fn fields(&self) -> &BTreeMap<String, Value> {
        match &self.0 {
            Value::Object(o) => o,
            _ => unreachable!("record root is an object"),
        }
    }

    pub fn get(&self, field: &str) -> Option<&Value> {
        self.fields().get(field)
    }

    pub fn into_root(self) -> Value {
        self.0
    }

    pub fn from_json_str(s: &str) -> Result<Record> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        Record::new(Value::from_json(&v))
    }

    pub fn to_json_string(&self) -> String {
        self.0.to_json().to_string()
    }
}

impl<'de> Deserialize<'de> for Record {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Record::new(v).map_err(serde::de::Error::custom)
    }
}

/// Unordered bag of records.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Dataset {
        Dataset { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in canonical order; used for comparison and golden files only.
    pub fn canonical(&self) -> Vec<Record> {
        let mut v = self.records.clone();
        v.sort();
        v
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Dataset> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = Record::from_json_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                col: 1,
                msg: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Dataset { records })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in self.canonical() {
            writeln!(w, "{}", r.to_json_string())?;
        }
        Ok(())
    }
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        bag_equal(self, other)
    }
}

/// Multiset equality under structural value equality.
pub fn bag_equal(a: &Dataset, b: &Dataset) -> bool {
    a.len() == b.len() && a.canonical() == b.canonical()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    Field(String),
    Any,
}

/// Dot-separated path; `*` fans out over array elements or object values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttributePath {
    steps: Vec<Step>,
}

impl AttributePath {
    pub fn parse(s: &str) -> Result<AttributePath> {
        if s.is_empty() {
            return Err(Error::InvalidPath(s.to_string()));
        }
        let mut steps = Vec::new();
        for part in s.split('.') {
            if part == "*" {
                steps.push(Step::Any);
            } else if !part.is_empty()
                && part
                    .chars()
                    .all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '$'))
            {
                steps.push(Step::Field(part.to_string()));
            } else {
                return Err(Error::InvalidPath(s.to_string()));
            }
        }
        Ok(AttributePath { steps })
    }

    pub fn field(name: &str) -> AttributePath {
        AttributePath {
            steps: vec![Step::Field(name.to_string())],
        }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn has_wildcard(&self) -> bool {
        self.steps.contains(&Step::Any)
    }

    pub fn head(&self) -> Option<&str> {
        match self.steps.first() {
            Some(Step::Field(f)) => Some(f),
            _ => None,
        }
    }

    /// True if `self` is a (non-strict) prefix of `other`; wildcards match any step.
    pub fn is_prefix_of(&self, other: &AttributePath) -> bool {
        self.steps.len() <= other.steps.len()
            && self
                .steps
                .iter()
                .zip(&other.steps)
                .all(|(a, b)| steps_compatible(a, b))
    }

    /// Prefix-or-equal overlap in either direction.
    pub fn overlaps(&self, other: &AttributePath) -> bool {
        self.is_prefix_of(other) || other.is_prefix_of(self)
    }
}

fn steps_compatible(a: &Step, b: &Step) -> bool {
    matches!((a, b), (Step::Any, _) | (_, Step::Any)) || a == b
}

impl fmt::Display for AttributePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self
            .steps
            .iter()
            .map(|s| match s {
                Step::Field(n) => n.as_str(),
                Step::Any => "*",
            })
            .collect();
        write!(f, "{}", parts.join("."))
    }
}

impl std::str::FromStr for AttributePath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AttributePath::parse(s)
    }
}

impl Serialize for AttributePath {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AttributePath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        AttributePath::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Set of attribute paths available or required at a port.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SchemaDescriptor {
    pub attributes: BTreeSet<AttributePath>,
}

impl SchemaDescriptor {
    pub fn new<I: IntoIterator<Item = AttributePath>>(paths: I) -> SchemaDescriptor {
        SchemaDescriptor {
            attributes: paths.into_iter().collect(),
        }
    }

    pub fn parse(paths: &[&str]) -> Result<SchemaDescriptor> {
        Ok(SchemaDescriptor::new(
            paths
                .iter()
                .map(|p| AttributePath::parse(p))
                .collect::<Result<Vec<_>>>()?,
        ))
    }

    pub fn contains_path(&self, p: &AttributePath) -> bool {
        self.attributes.iter().any(|a| a.is_prefix_of(p))
    }
}

/// Path-prefix containment: every consumer path equals or extends a producer path.
pub fn schema_contains(producer: &SchemaDescriptor, consumer: &SchemaDescriptor) -> bool {
    consumer.attributes.iter().all(|c| producer.contains_path(c))
}

/// All values reachable at `p`; empty when absent.
pub fn read_path<'a>(r: &'a Record, p: &AttributePath) -> Vec<&'a Value> {
    let mut cur = vec![r.root()];
    for step in p.steps() {
        let mut next = Vec::new();
        for v in cur {
            match (step, v) {
                (Step::Field(f), Value::Object(o)) => next.extend(o.get(f)),
                (Step::Any, Value::Array(a)) => next.extend(a.iter()),
                (Step::Any, Value::Object(o)) => next.extend(o.values()),
                _ => {}
            }
        }
        cur = next;
    }
    cur
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WriteMode {
    Set,
    Append,
}

/// Returns a new record with `v` written at `p`. Missing intermediate objects
/// are created.
pub fn write_path(r: &Record, p: &AttributePath, v: Value, mode: WriteMode) -> Result<Record> {
    if p.has_wildcard() {
        return Err(Error::WildcardWrite(p.to_string()));
    }
    let mut root = r.root().clone();
    write_in(&mut root, p.steps(), v, mode, p)?;
    Record::new(root)
}

fn write_in(
    node: &mut Value,
    steps: &[Step],
    v: Value,
    mode: WriteMode,
    full: &AttributePath,
) -> Result<()> {
    let Step::Field(f) = &steps[0] else {
        return Err(Error::WildcardWrite(full.to_string()));
    };
    let Value::Object(obj) = node else {
        return Err(Error::TypeConflict {
            path: full.to_string(),
            msg: "intermediate value is not an object".into(),
        });
    };
    if steps.len() > 1 {
        let child = obj.entry(f.clone()).or_insert_with(Value::obj);
        return write_in(child, &steps[1..], v, mode, full);
    }
    match mode {
        WriteMode::Set => {
            obj.insert(f.clone(), v);
        }
        WriteMode::Append => match obj.get_mut(f) {
            None => {
                obj.insert(f.clone(), Value::Array(vec![v]));
            }
            Some(Value::Array(a)) => a.push(v),
            Some(_) => {
                return Err(Error::TypeConflict {
                    path: full.to_string(),
                    msg: "append onto a non-array value".into(),
                })
            }
        },
    }
    Ok(())
}
