//! Shipped operator implementations.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value as Json;

use super::text::{self, bare, tokens};
use super::{Config, FieldUpdates, ImplMeta, IoRatio, OperatorImpl, Parallelization, SchemaBehavior};
use crate::dataflow::Access;
use crate::datamodel::{read_path, write_path, AttributePath, Dataset, Record, SchemaDescriptor, Value, WriteMode};

type Out = Result<Dataset, String>;
type EvalFn = fn(&Config, &[&Dataset]) -> Out;
type SchemaFn = fn(&Config, &[SchemaDescriptor]) -> SchemaDescriptor;
type PortFn = fn(&Config, usize) -> SchemaDescriptor;

struct Op {
    concept: &'static str,
    arity: usize,
    meta: ImplMeta,
    access: fn(&Config) -> Access,
    eval: EvalFn,
    removes: fn(&Config) -> Vec<AttributePath>,
    schema: Option<SchemaFn>,
    ports: Option<PortFn>,
    unit: f64,
    startup: f64,
}

impl OperatorImpl for Op {
    fn concept(&self) -> &'static str {
        self.concept
    }

    fn arity(&self) -> usize {
        self.arity
    }

    fn meta(&self) -> ImplMeta {
        self.meta
    }

    fn access(&self, cfg: &Config) -> Access {
        (self.access)(cfg)
    }

    fn removes(&self, cfg: &Config) -> Vec<AttributePath> {
        (self.removes)(cfg)
    }

    fn schema_out(&self, cfg: &Config, ins: &[SchemaDescriptor], acc: &Access) -> SchemaDescriptor {
        match self.schema {
            Some(f) => f(cfg, ins),
            None => {
                let mut out = SchemaDescriptor::default();
                for s in ins {
                    out.attributes.extend(s.attributes.iter().cloned());
                }
                if self.meta.schema != SchemaBehavior::Preserving {
                    out.attributes.extend(acc.writes.keys().cloned());
                }
                let removed = self.removes(cfg);
                out.attributes.retain(|a| !removed.iter().any(|r| r.is_prefix_of(a)));
                out
            }
        }
    }

    fn port_requirements(&self, cfg: &Config, port: usize, acc: &Access) -> SchemaDescriptor {
        match self.ports {
            Some(f) => f(cfg, port),
            None if port == 0 && self.arity == 1 => SchemaDescriptor::new(acc.reads.iter().cloned()),
            None => SchemaDescriptor::default(),
        }
    }

    fn eval(&self, cfg: &Config, inputs: &[&Dataset]) -> Out {
        if inputs.len() != self.arity {
            return Err(format!("expected {} inputs, got {}", self.arity, inputs.len()));
        }
        (self.eval)(cfg, inputs)
    }

    fn unit_cost(&self, _cfg: &Config) -> f64 {
        self.unit
    }

    fn startup(&self, _cfg: &Config) -> f64 {
        self.startup
    }
}

const fn meta(parallelization: Parallelization, schema: SchemaBehavior, updates: FieldUpdates, io: IoRatio) -> ImplMeta {
    ImplMeta {
        parallelization,
        schema,
        updates,
        io,
    }
}

fn no_removes(_: &Config) -> Vec<AttributePath> {
    Vec::new()
}

fn base(concept: &'static str, meta: ImplMeta, access: fn(&Config) -> Access, eval: EvalFn) -> Op {
    Op {
        concept,
        arity: 1,
        meta,
        access,
        eval,
        removes: no_removes,
        schema: None,
        ports: None,
        unit: 1.0,
        startup: 0.0,
    }
}

impl Op {
    fn arity(mut self, n: usize) -> Op {
        self.arity = n;
        self
    }

    fn costs(mut self, unit: f64, startup: f64) -> Op {
        self.unit = unit;
        self.startup = startup;
        self
    }

    fn removes(mut self, f: fn(&Config) -> Vec<AttributePath>) -> Op {
        self.removes = f;
        self
    }

    fn schema(mut self, f: SchemaFn) -> Op {
        self.schema = Some(f);
        self
    }

    fn ports(mut self, f: PortFn) -> Op {
        self.ports = Some(f);
        self
    }
}

pub(super) fn all() -> Vec<Box<dyn OperatorImpl>> {
    use FieldUpdates as U;
    use IoRatio as Io;
    use Parallelization as P;
    use SchemaBehavior as S;
    let ops = vec![
        // base
        base("fltr", meta(P::Map, S::Preserving, U::None, Io::AtMost), fltr_access, fltr).costs(0.2, 0.0),
        base("prjt", meta(P::Map, S::Reducing, U::None, Io::Equal), prjt_access, prjt)
            .costs(0.2, 0.0)
            .schema(prjt_schema),
        base("trnsf", meta(P::Map, S::Other, U::Arbitrary, Io::Equal), trnsf_access, trnsf).costs(0.5, 0.0),
        base("extend", meta(P::Map, S::Other, U::Arbitrary, Io::Equal), trnsf_access, trnsf).costs(0.5, 0.0),
        base("rename", meta(P::Map, S::Other, U::Arbitrary, Io::Equal), rename_access, rename)
            .costs(0.2, 0.0)
            .removes(rename_removes),
        base("nst", meta(P::Map, S::Other, U::Arbitrary, Io::Equal), nst_access, nst)
            .costs(0.3, 0.0)
            .removes(nst_removes),
        base("unnst", meta(P::Map, S::Other, U::Arbitrary, Io::Any), unnst_access, unnst)
            .costs(0.3, 0.0)
            .removes(unnst_removes),
        base("join", meta(P::Match, S::Other, U::Arbitrary, Io::Any), join_access, join)
            .arity(2)
            .costs(0.5, 0.0)
            .ports(join_ports),
        base("semi-join", meta(P::Match, S::Other, U::None, Io::AtMost), join_access, semi_join)
            .arity(2)
            .costs(0.4, 0.0)
            .ports(join_ports)
            .schema(left_schema),
        base("anti-join", meta(P::Match, S::Other, U::None, Io::AtMost), join_access, anti_join)
            .arity(2)
            .costs(0.4, 0.0)
            .ports(join_ports)
            .schema(left_schema),
        base("grp", meta(P::Reduce, S::Other, U::Arbitrary, Io::AtMost), grp_access, grp)
            .costs(0.5, 0.0)
            .schema(grp_schema),
        base("cogroup", meta(P::Cogroup, S::Other, U::Arbitrary, Io::AtMost), join_access, cogroup)
            .arity(2)
            .costs(0.5, 0.0)
            .ports(join_ports)
            .schema(cogroup_schema),
        base("union-all", meta(P::Map, S::Other, U::None, Io::Equal), |_| Access::default(), union_all)
            .arity(2)
            .costs(0.1, 0.0),
        base("distinct", meta(P::Reduce, S::Preserving, U::None, Io::AtMost), |_| Access::default(), distinct)
            .costs(0.3, 0.0),
        base("cross", meta(P::Cross, S::Other, U::Arbitrary, Io::Any), |_| Access::default(), cross)
            .arity(2)
            .costs(0.5, 0.0),
        // data cleansing
        base("scrb", meta(P::Map, S::Preserving, U::Arbitrary, Io::AtMost), scrb_access, scrb).costs(0.5, 0.0),
        base("ddup", meta(P::Reduce, S::Other, U::AddOnly, Io::Equal), ddup_access, ddup).costs(2.0, 5.0),
        base("fuse", meta(P::Reduce, S::Other, U::Arbitrary, Io::AtMost), fuse_access, fuse)
            .costs(1.0, 0.0)
            .removes(fuse_removes),
        base("sptrc", meta(P::Map, S::Other, U::Arbitrary, Io::Any), unnst_access, unnst)
            .costs(0.3, 0.0)
            .removes(unnst_removes),
        base("trfrc", meta(P::Map, S::Other, U::Arbitrary, Io::Equal), trnsf_access, trnsf).costs(0.5, 0.0),
        base("lnkrc", meta(P::Cogroup, S::Other, U::AddOnly, Io::AtMost), lnkrc_access, lnkrc)
            .arity(2)
            .costs(0.5, 0.0)
            .ports(join_ports)
            .schema(lnkrc_schema),
        // information extraction
        base("anntt-sent", meta(P::Map, S::Other, U::AddOnly, Io::Equal), sent_access, anntt_sent).costs(1.0, 2.0),
        base("anntt-tok", meta(P::Map, S::Other, U::AddOnly, Io::Equal), |_| ann_access("tokens"), anntt_tok)
            .costs(1.0, 5.0),
        base("anntt-pos", meta(P::Map, S::Other, U::AddOnly, Io::Equal), |_| ann_access("pos"), anntt_pos)
            .costs(3.0, 20.0),
        base("anntt-ent-pers", meta(P::Map, S::Other, U::AddOnly, Io::Equal), |_| ann_access("entities.PER"), |c, i| {
            anntt_dict(c, i, "entities.PER", text::PERSONS)
        })
        .costs(4.0, 30.0),
        base("anntt-ent-comp", meta(P::Map, S::Other, U::AddOnly, Io::Equal), |_| ann_access("entities.COMP"), |c, i| {
            anntt_dict(c, i, "entities.COMP", text::COMPANIES)
        })
        .costs(4.0, 30.0),
        base("anntt-ent-loc", meta(P::Map, S::Other, U::AddOnly, Io::Equal), |_| ann_access("entities.LOC"), |c, i| {
            anntt_dict(c, i, "entities.LOC", text::LOCATIONS)
        })
        .costs(4.0, 30.0),
        base("anntt-rel", meta(P::Map, S::Other, U::AddOnly, Io::Equal), rel_access, anntt_rel).costs(6.0, 40.0),
        base("anntt-stem", meta(P::Map, S::Other, U::AddOnly, Io::Equal), |_| tok_ann_access("stems"), anntt_stem)
            .costs(1.0, 2.0),
        base("anntt-stop", meta(P::Map, S::Other, U::AddOnly, Io::Equal), |_| tok_ann_access("stops"), anntt_stop)
            .costs(0.5, 1.0),
        base("anntt-lang", meta(P::Map, S::Other, U::AddOnly, Io::Equal), lang_access, anntt_lang).costs(0.5, 0.0),
        base("split-UDF", meta(P::Map, S::Other, U::Arbitrary, Io::Any), split_access, split_udf)
            .costs(0.5, 0.0)
            .schema(split_schema),
        base("edit-UDF", meta(P::Map, S::Other, U::Arbitrary, Io::Equal), edit_access, edit_udf)
            .costs(0.5, 0.0)
            .removes(edit_removes)
            .schema(edit_schema)
            .ports(|c, _| edit_ports(c)),
        base("splt-tok", meta(P::Map, S::Reducing, U::Arbitrary, Io::Any), splt_tok_access, splt_tok)
            .costs(0.5, 0.0)
            .schema(splt_tok_schema),
        base("mrg", meta(P::Match, S::Other, U::AddOnly, Io::Any), mrg_access, mrg)
            .arity(2)
            .costs(0.5, 0.0)
            .ports(mrg_ports),
        // web
        base("rmark", meta(P::Map, S::Preserving, U::Arbitrary, Io::Equal), rmark_access, rmark).costs(0.3, 0.0),
    ];
    ops.into_iter().map(|o| Box::new(o) as Box<dyn OperatorImpl>).collect()
}

// ---- config helpers ----

fn path(s: &str) -> Option<AttributePath> {
    AttributePath::parse(s).ok()
}

fn cfg_str<'a>(cfg: &'a Config, key: &str, default: &'a str) -> &'a str {
    cfg.get(key).and_then(Json::as_str).unwrap_or(default)
}

fn cfg_paths(cfg: &Config, key: &str) -> Vec<AttributePath> {
    match cfg.get(key) {
        Some(Json::String(s)) => path(s).into_iter().collect(),
        Some(Json::Array(a)) => a.iter().filter_map(Json::as_str).filter_map(path).collect(),
        _ => Vec::new(),
    }
}

fn cfg_path(cfg: &Config, key: &str, default: &str) -> AttributePath {
    path(cfg_str(cfg, key, default)).unwrap_or_else(|| AttributePath::field(default))
}

fn reads(paths: impl IntoIterator<Item = AttributePath>) -> Access {
    Access {
        reads: paths.into_iter().collect(),
        writes: BTreeMap::new(),
    }
}

fn with_writes(mut acc: Access, paths: impl IntoIterator<Item = AttributePath>, mode: WriteMode) -> Access {
    for p in paths {
        acc.writes.insert(p, mode);
    }
    acc
}

fn fp(s: &str) -> AttributePath {
    AttributePath::field(s)
}

fn np(s: &str) -> AttributePath {
    AttributePath::parse(s).expect("static path")
}

fn first<'a>(r: &'a Record, p: &AttributePath) -> Option<&'a Value> {
    read_path(r, p).into_iter().next()
}

fn set(r: &Record, p: &AttributePath, v: Value) -> Result<Record, String> {
    write_path(r, p, v, WriteMode::Set).map_err(|e| e.to_string())
}

fn with_field(r: &Record, k: &str, v: Value) -> Record {
    let mut m = r.fields().clone();
    m.insert(k.to_string(), v);
    Record::new(Value::Object(m)).expect("object")
}

fn without_fields(r: &Record, ks: &[&str]) -> Record {
    let mut m = r.fields().clone();
    for k in ks {
        m.remove(*k);
    }
    Record::new(Value::Object(m)).expect("object")
}

fn map_records(input: &Dataset, f: impl Fn(&Record) -> Result<Record, String>) -> Out {
    input.records.iter().map(f).collect::<Result<Vec<_>, _>>().map(Dataset::new)
}

fn int(i: usize) -> Value {
    Value::Int(i as i64)
}

fn num(f: f64) -> Value {
    if f.fract() == 0.0 && f.abs() < 9e15 {
        Value::Int(f as i64)
    } else {
        Value::decimal(&format!("{f}")).unwrap_or(Value::Null)
    }
}

fn schema_union(ins: &[SchemaDescriptor]) -> SchemaDescriptor {
    let mut out = SchemaDescriptor::default();
    for s in ins {
        out.attributes.extend(s.attributes.iter().cloned());
    }
    out
}

// ---- predicates ----

fn pred_paths(j: &Json, out: &mut Vec<AttributePath>) {
    let Some(o) = j.as_object() else { return };
    for key in ["path", "count"] {
        if let Some(p) = o.get(key).and_then(Json::as_str).and_then(path) {
            out.push(p);
        }
    }
    for key in ["and", "or"] {
        if let Some(a) = o.get(key).and_then(Json::as_array) {
            a.iter().for_each(|x| pred_paths(x, out));
        }
    }
    if let Some(x) = o.get("not") {
        pred_paths(x, out);
    }
}

fn compare(op: &str, l: &Value, r: &Value) -> Result<bool, String> {
    use std::cmp::Ordering;
    let ord: Option<Ordering> = match (l.as_f64(), r.as_f64()) {
        (Some(a), Some(b)) => a.partial_cmp(&b),
        _ => match (l, r) {
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            _ => None,
        },
    };
    Ok(match op {
        "==" => ord.map_or(l == r, |o| o == Ordering::Equal),
        "!=" => ord.map_or(l != r, |o| o != Ordering::Equal),
        ">" => ord == Some(Ordering::Greater),
        ">=" => matches!(ord, Some(Ordering::Greater | Ordering::Equal)),
        "<" => ord == Some(Ordering::Less),
        "<=" => matches!(ord, Some(Ordering::Less | Ordering::Equal)),
        other => return Err(format!("unknown comparison `{other}`")),
    })
}

fn count_at(r: &Record, p: &AttributePath) -> usize {
    read_path(r, p)
        .into_iter()
        .map(|v| match v {
            Value::Array(a) => a.len(),
            Value::Null => 0,
            _ => 1,
        })
        .sum()
}

pub(crate) fn eval_pred(j: &Json, r: &Record) -> Result<bool, String> {
    let o = j.as_object().ok_or("predicate must be an object")?;
    if let Some(a) = o.get("and").and_then(Json::as_array) {
        for x in a {
            if !eval_pred(x, r)? {
                return Ok(false);
            }
        }
        return Ok(true);
    }
    if let Some(a) = o.get("or").and_then(Json::as_array) {
        for x in a {
            if eval_pred(x, r)? {
                return Ok(true);
            }
        }
        return Ok(false);
    }
    if let Some(x) = o.get("not") {
        return Ok(!eval_pred(x, r)?);
    }
    let op = o.get("op").and_then(Json::as_str).ok_or("predicate without `op`")?;
    let rhs = Value::from_json(o.get("value").unwrap_or(&Json::Null));
    let lhs = if let Some(p) = o.get("count").and_then(Json::as_str) {
        int(count_at(r, &path(p).ok_or("bad count path")?))
    } else {
        let p = o.get("path").and_then(Json::as_str).ok_or("predicate without `path`")?;
        first(r, &path(p).ok_or("bad path")?).cloned().unwrap_or(Value::Null)
    };
    if lhs == Value::Null && op != "==" && op != "!=" {
        return Ok(false);
    }
    compare(op, &lhs, &rhs)
}

fn fltr_access(cfg: &Config) -> Access {
    let mut ps = Vec::new();
    if let Some(p) = cfg.get("pred") {
        pred_paths(p, &mut ps);
    }
    reads(ps)
}

fn fltr(cfg: &Config, ins: &[&Dataset]) -> Out {
    let pred = cfg.get("pred").ok_or("fltr needs `pred`")?;
    let mut out = Vec::new();
    for r in &ins[0].records {
        if eval_pred(pred, r)? {
            out.push(r.clone());
        }
    }
    Ok(Dataset::new(out))
}

// ---- projection, transformation, nesting ----

fn prjt_access(cfg: &Config) -> Access {
    reads(cfg_paths(cfg, "fields"))
}

fn prjt_schema(cfg: &Config, ins: &[SchemaDescriptor]) -> SchemaDescriptor {
    let keep = cfg_paths(cfg, "fields");
    let all = schema_union(ins);
    let mut out: BTreeSet<AttributePath> = all
        .attributes
        .iter()
        .filter(|a| keep.iter().any(|k| k.is_prefix_of(a)))
        .cloned()
        .collect();
    out.extend(keep.iter().filter(|k| all.contains_path(k)).cloned());
    SchemaDescriptor { attributes: out }
}

fn prjt(cfg: &Config, ins: &[&Dataset]) -> Out {
    let keep = cfg_paths(cfg, "fields");
    map_records(ins[0], |r| {
        let mut out = Record::empty();
        for p in &keep {
            if let Some(v) = first(r, p) {
                out = set(&out, p, v.clone())?;
            }
        }
        Ok(out)
    })
}

fn expr_paths(j: &Json, out: &mut Vec<AttributePath>) {
    match j {
        Json::Object(o) => {
            for (k, v) in o {
                match (k.as_str(), v) {
                    ("const", _) => {}
                    (_, Json::String(s)) => out.extend(path(s)),
                    (_, Json::Array(a)) => a.iter().for_each(|x| match x {
                        Json::String(s) => out.extend(path(s)),
                        other => expr_paths(other, out),
                    }),
                    (_, other) => expr_paths(other, out),
                }
            }
        }
        Json::String(s) => out.extend(path(s)),
        _ => {}
    }
}

fn eval_expr(j: &Json, r: &Record) -> Result<Value, String> {
    let get = |s: &Json| -> Result<Value, String> {
        match s {
            Json::String(p) => Ok(first(r, &path(p).ok_or("bad path")?).cloned().unwrap_or(Value::Null)),
            other => eval_expr(other, r),
        }
    };
    let o = match j {
        Json::String(_) => return get(j),
        Json::Object(o) => o,
        _ => return Err("expression must be a path or an object".into()),
    };
    let (k, arg) = o.iter().next().ok_or("empty expression")?;
    Ok(match k.as_str() {
        "const" => Value::from_json(arg),
        "copy" => get(arg)?,
        "lower" => match get(arg)? {
            Value::Text(s) => Value::Text(s.to_lowercase()),
            v => v,
        },
        "upper" => match get(arg)? {
            Value::Text(s) => Value::Text(s.to_uppercase()),
            v => v,
        },
        "len" => match get(arg)? {
            Value::Text(s) => int(s.chars().count()),
            Value::Array(a) => int(a.len()),
            _ => Value::Null,
        },
        "strip" => match get(arg)? {
            Value::Text(s) => Value::Text(text::strip_markup(&s)),
            v => v,
        },
        "mul" | "add" => {
            let a = arg.as_array().ok_or("arithmetic needs [lhs, rhs]")?;
            if a.len() != 2 {
                return Err("arithmetic needs [lhs, rhs]".into());
            }
            let x = get(&a[0])?;
            let y = match &a[1] {
                Json::Number(_) => Value::from_json(&a[1]),
                other => get(other)?,
            };
            match (x.as_f64(), y.as_f64()) {
                (Some(x), Some(y)) => num(if k == "mul" { x * y } else { x + y }),
                _ => Value::Null,
            }
        }
        "concat" => {
            let a = arg.as_array().ok_or("concat needs a list")?;
            let mut parts = Vec::new();
            for x in a {
                match get(x)? {
                    Value::Text(s) => parts.push(s),
                    Value::Null => {}
                    v => parts.push(v.to_json().to_string()),
                }
            }
            Value::Text(parts.join(" "))
        }
        other => return Err(format!("unknown expression `{other}`")),
    })
}

fn trnsf_access(cfg: &Config) -> Access {
    let mut rs = Vec::new();
    let mut ws = Vec::new();
    if let Some(o) = cfg.get("set").and_then(Json::as_object) {
        for (target, e) in o {
            ws.extend(path(target));
            expr_paths(e, &mut rs);
        }
    }
    with_writes(reads(rs), ws, WriteMode::Set)
}

fn trnsf(cfg: &Config, ins: &[&Dataset]) -> Out {
    let assigns: Vec<(AttributePath, &Json)> = cfg
        .get("set")
        .and_then(Json::as_object)
        .map(|o| o.iter().filter_map(|(k, v)| Some((path(k)?, v))).collect())
        .unwrap_or_default();
    map_records(ins[0], |r| {
        // all right-hand sides see the input record
        let vals: Vec<Value> = assigns.iter().map(|(_, e)| eval_expr(e, r)).collect::<Result<_, _>>()?;
        let mut out = r.clone();
        for ((p, _), v) in assigns.iter().zip(vals) {
            out = set(&out, p, v)?;
        }
        Ok(out)
    })
}

fn rename_access(cfg: &Config) -> Access {
    let from = cfg_path(cfg, "from", "from");
    let to = cfg_path(cfg, "to", "to");
    with_writes(reads([from.clone()]), [from, to], WriteMode::Set)
}

fn rename_removes(cfg: &Config) -> Vec<AttributePath> {
    vec![fp(cfg_str(cfg, "from", "from"))]
}

fn rename(cfg: &Config, ins: &[&Dataset]) -> Out {
    let from = cfg_str(cfg, "from", "from");
    let to = cfg_str(cfg, "to", "to");
    map_records(ins[0], |r| {
        Ok(match r.get(from) {
            Some(v) => with_field(&without_fields(r, &[from]), to, v.clone()),
            None => r.clone(),
        })
    })
}

fn nst_access(cfg: &Config) -> Access {
    let fields = cfg_paths(cfg, "fields");
    let into = cfg_path(cfg, "into", "nested");
    let mut ws = fields.clone();
    ws.push(into);
    with_writes(reads(fields), ws, WriteMode::Set)
}

fn nst_removes(cfg: &Config) -> Vec<AttributePath> {
    cfg_paths(cfg, "fields")
}

fn nst(cfg: &Config, ins: &[&Dataset]) -> Out {
    let fields: Vec<String> = cfg_paths(cfg, "fields").iter().filter_map(|p| p.head().map(String::from)).collect();
    let into = cfg_str(cfg, "into", "nested");
    map_records(ins[0], |r| {
        let mut inner = BTreeMap::new();
        let mut m = r.fields().clone();
        for f in &fields {
            if let Some(v) = m.remove(f) {
                inner.insert(f.clone(), v);
            }
        }
        m.insert(into.to_string(), Value::Object(inner));
        Ok(Record::new(Value::Object(m)).expect("object"))
    })
}

fn unnst_access(cfg: &Config) -> Access {
    let p = cfg_path(cfg, "path", "items");
    let as_ = cfg_path(cfg, "as", "item");
    with_writes(reads([p.clone()]), [p, as_], WriteMode::Set)
}

fn unnst_removes(cfg: &Config) -> Vec<AttributePath> {
    vec![cfg_path(cfg, "path", "items")]
}

/// One output record per element of the array at `path`, bound to `as`.
fn unnst(cfg: &Config, ins: &[&Dataset]) -> Out {
    let p = cfg_str(cfg, "path", "items");
    let as_ = cfg_str(cfg, "as", "item");
    let mut out = Vec::new();
    for r in &ins[0].records {
        let rest = without_fields(r, &[p]);
        match r.get(p) {
            Some(Value::Array(a)) => out.extend(a.iter().map(|v| with_field(&rest, as_, v.clone()))),
            Some(Value::Null) | None => {}
            Some(v) => out.push(with_field(&rest, as_, v.clone())),
        }
    }
    Ok(Dataset::new(out))
}

// ---- binary operators ----

fn join_access(cfg: &Config) -> Access {
    reads(cfg_paths(cfg, "left").into_iter().chain(cfg_paths(cfg, "right")))
}

fn join_ports(cfg: &Config, port: usize) -> SchemaDescriptor {
    SchemaDescriptor::new(cfg_paths(cfg, if port == 0 { "left" } else { "right" }))
}

fn key_of(r: &Record, ps: &[AttributePath]) -> Option<Vec<Value>> {
    ps.iter()
        .map(|p| match first(r, p) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.clone()),
        })
        .collect()
}

fn index<'a>(ds: &'a Dataset, ps: &[AttributePath]) -> BTreeMap<Vec<Value>, Vec<&'a Record>> {
    let mut m: BTreeMap<Vec<Value>, Vec<&Record>> = BTreeMap::new();
    for r in &ds.records {
        if let Some(k) = key_of(r, ps) {
            m.entry(k).or_default().push(r);
        }
    }
    m
}

/// Right fields overlaid by left fields.
fn concat_records(l: &Record, r: &Record) -> Record {
    let mut m = r.fields().clone();
    m.extend(l.fields().iter().map(|(k, v)| (k.clone(), v.clone())));
    Record::new(Value::Object(m)).expect("object")
}

fn join(cfg: &Config, ins: &[&Dataset]) -> Out {
    let (lk, rk) = (cfg_paths(cfg, "left"), cfg_paths(cfg, "right"));
    let idx = index(ins[1], &rk);
    let mut out = Vec::new();
    for l in &ins[0].records {
        if let Some(rs) = key_of(l, &lk).and_then(|k| idx.get(&k)) {
            out.extend(rs.iter().map(|r| concat_records(l, r)));
        }
    }
    Ok(Dataset::new(out))
}

fn semi(cfg: &Config, ins: &[&Dataset], keep_matched: bool) -> Out {
    let (lk, rk) = (cfg_paths(cfg, "left"), cfg_paths(cfg, "right"));
    let idx = index(ins[1], &rk);
    Ok(Dataset::new(
        ins[0]
            .records
            .iter()
            .filter(|l| key_of(l, &lk).is_some_and(|k| idx.contains_key(&k)) == keep_matched)
            .cloned()
            .collect(),
    ))
}

fn semi_join(cfg: &Config, ins: &[&Dataset]) -> Out {
    semi(cfg, ins, true)
}

fn anti_join(cfg: &Config, ins: &[&Dataset]) -> Out {
    semi(cfg, ins, false)
}

fn left_schema(_: &Config, ins: &[SchemaDescriptor]) -> SchemaDescriptor {
    ins.first().cloned().unwrap_or_default()
}

fn grp_specs(cfg: &Config) -> Vec<(String, String, Option<AttributePath>)> {
    let mut out = Vec::new();
    if let Some(o) = cfg.get("aggs").and_then(Json::as_object) {
        for (name, spec) in o {
            if let Some((f, arg)) = spec.as_object().and_then(|s| s.iter().next()) {
                out.push((name.clone(), f.clone(), arg.as_str().and_then(path)));
            }
        }
    }
    out
}

fn grp_access(cfg: &Config) -> Access {
    let specs = grp_specs(cfg);
    let rs = cfg_paths(cfg, "by").into_iter().chain(specs.iter().filter_map(|s| s.2.clone()));
    with_writes(reads(rs), specs.iter().map(|s| fp(&s.0)), WriteMode::Set)
}

fn grp_schema(cfg: &Config, _: &[SchemaDescriptor]) -> SchemaDescriptor {
    SchemaDescriptor::new(cfg_paths(cfg, "by").into_iter().chain(grp_specs(cfg).iter().map(|s| fp(&s.0))))
}

fn aggregate(f: &str, arg: Option<&AttributePath>, rs: &[&Record]) -> Result<Value, String> {
    let vals = || -> Vec<Value> {
        arg.map(|p| rs.iter().filter_map(|r| first(r, p).cloned()).filter(|v| *v != Value::Null).collect())
            .unwrap_or_default()
    };
    Ok(match f {
        "count" => int(rs.len()),
        "sum" => {
            let vs = vals();
            if vs.iter().all(|v| matches!(v, Value::Int(_))) {
                Value::Int(vs.iter().map(|v| if let Value::Int(i) = v { *i } else { 0 }).sum())
            } else {
                num(vs.iter().filter_map(Value::as_f64).sum())
            }
        }
        "min" => vals().into_iter().min().unwrap_or(Value::Null),
        "max" => vals().into_iter().max().unwrap_or(Value::Null),
        "collect" => {
            let mut vs = vals();
            vs.sort();
            Value::Array(vs)
        }
        other => return Err(format!("unknown aggregate `{other}`")),
    })
}

fn grp(cfg: &Config, ins: &[&Dataset]) -> Out {
    let by = cfg_paths(cfg, "by");
    let specs = grp_specs(cfg);
    let mut groups: BTreeMap<Vec<Value>, Vec<&Record>> = BTreeMap::new();
    for r in &ins[0].records {
        let k = by.iter().map(|p| first(r, p).cloned().unwrap_or(Value::Null)).collect();
        groups.entry(k).or_default().push(r);
    }
    let mut out = Vec::new();
    for (k, rs) in groups {
        let mut rec = Record::empty();
        for (p, v) in by.iter().zip(k) {
            rec = set(&rec, p, v)?;
        }
        for (name, f, arg) in &specs {
            rec = with_field(&rec, name, aggregate(f, arg.as_ref(), &rs)?);
        }
        out.push(rec);
    }
    Ok(Dataset::new(out))
}

fn cogroup_names(cfg: &Config) -> (String, String) {
    let a: Vec<String> = cfg
        .get("as")
        .and_then(Json::as_array)
        .map(|a| a.iter().filter_map(Json::as_str).map(String::from).collect())
        .unwrap_or_default();
    (
        a.first().cloned().unwrap_or_else(|| "left".into()),
        a.get(1).cloned().unwrap_or_else(|| "right".into()),
    )
}

fn cogroup_schema(cfg: &Config, _: &[SchemaDescriptor]) -> SchemaDescriptor {
    let (l, r) = cogroup_names(cfg);
    SchemaDescriptor::new([fp("key"), fp(&l), fp(&r)])
}

fn cogroup(cfg: &Config, ins: &[&Dataset]) -> Out {
    let (lk, rk) = (cfg_paths(cfg, "left"), cfg_paths(cfg, "right"));
    let (ln, rn) = cogroup_names(cfg);
    let li = index(ins[0], &lk);
    let ri = index(ins[1], &rk);
    let keys: BTreeSet<&Vec<Value>> = li.keys().chain(ri.keys()).collect();
    let side = |m: &BTreeMap<Vec<Value>, Vec<&Record>>, k: &Vec<Value>| {
        let mut v: Vec<Value> = m.get(k).into_iter().flatten().map(|r| r.root().clone()).collect();
        v.sort();
        Value::Array(v)
    };
    let out = keys
        .into_iter()
        .map(|k| {
            let mut m = BTreeMap::new();
            m.insert("key".to_string(), Value::Array(k.clone()));
            m.insert(ln.clone(), side(&li, k));
            m.insert(rn.clone(), side(&ri, k));
            Record::new(Value::Object(m)).expect("object")
        })
        .collect();
    Ok(Dataset::new(out))
}

fn union_all(_: &Config, ins: &[&Dataset]) -> Out {
    Ok(Dataset::new(ins.iter().flat_map(|d| d.records.iter().cloned()).collect()))
}

fn distinct(_: &Config, ins: &[&Dataset]) -> Out {
    let mut seen = BTreeSet::new();
    Ok(Dataset::new(
        ins[0].records.iter().filter(|r| seen.insert((*r).clone())).cloned().collect(),
    ))
}

fn cross(_: &Config, ins: &[&Dataset]) -> Out {
    let mut out = Vec::new();
    for l in &ins[0].records {
        for r in &ins[1].records {
            out.push(concat_records(l, r));
        }
    }
    Ok(Dataset::new(out))
}

// ---- data cleansing ----

fn scrb_rules(cfg: &Config) -> Vec<(AttributePath, &Json)> {
    cfg.get("rules")
        .and_then(Json::as_array)
        .map(|a| {
            a.iter()
                .filter_map(|r| Some((path(r.get("path")?.as_str()?)?, r)))
                .collect()
        })
        .unwrap_or_default()
}

fn scrb_access(cfg: &Config) -> Access {
    let rules = scrb_rules(cfg);
    let ws: Vec<AttributePath> = rules
        .iter()
        .filter(|(_, r)| r.get("action").and_then(Json::as_str) == Some("null"))
        .map(|(p, _)| p.clone())
        .collect();
    with_writes(reads(rules.into_iter().map(|(p, _)| p)), ws, WriteMode::Set)
}

fn violates(rule: &Json, v: &Value) -> bool {
    if *v == Value::Null {
        return false;
    }
    let bound = |k: &str| rule.get(k).map(Value::from_json);
    if let Some(min) = bound("min") {
        if compare("<", v, &min).unwrap_or(false) || v.as_f64().is_none() {
            return true;
        }
    }
    if let Some(max) = bound("max") {
        if compare(">", v, &max).unwrap_or(false) || v.as_f64().is_none() {
            return true;
        }
    }
    if let Some(Json::Array(allowed)) = rule.get("allowed") {
        if !allowed.iter().any(|a| Value::from_json(a) == *v) {
            return true;
        }
    }
    false
}

/// Drops or nulls values that violate the configured validity rules.
fn scrb(cfg: &Config, ins: &[&Dataset]) -> Out {
    let rules = scrb_rules(cfg);
    let mut out = Vec::new();
    'rec: for r in &ins[0].records {
        let mut cur = r.clone();
        for (p, rule) in &rules {
            let Some(v) = first(r, p) else { continue };
            if violates(rule, v) {
                if rule.get("action").and_then(Json::as_str) == Some("null") {
                    cur = set(&cur, p, Value::Null)?;
                } else {
                    continue 'rec;
                }
            }
        }
        out.push(cur);
    }
    Ok(Dataset::new(out))
}

fn ddup_access(cfg: &Config) -> Access {
    let rs = cfg_paths(cfg, "by")
        .into_iter()
        .chain([cfg_path(cfg, "path", "text"), cfg_path(cfg, "key", "id")]);
    with_writes(reads(rs), [cfg_path(cfg, "into", "cluster")], WriteMode::Set)
}

fn word_set(v: Option<&Value>) -> BTreeSet<String> {
    v.and_then(Value::as_str)
        .map(|s| tokens(s).into_iter().map(|t| bare(t).to_lowercase()).collect())
        .unwrap_or_default()
}

/// Jaccard similarity of two sorted, deduplicated id lists.
fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    common as f64 / (a.len() + b.len() - common) as f64
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage clustering by word-set Jaccard similarity within groups of
/// equal blocking key; each record gets the smallest key of its cluster.
fn ddup(cfg: &Config, ins: &[&Dataset]) -> Out {
    let by = cfg_paths(cfg, "by");
    let tp = cfg_path(cfg, "path", "text");
    let kp = cfg_path(cfg, "key", "id");
    let into = cfg_path(cfg, "into", "cluster");
    let th = cfg.get("threshold").and_then(Json::as_f64).unwrap_or(0.8);
    let recs = &ins[0].records;
    let mut vocab: BTreeMap<String, u32> = BTreeMap::new();
    let words: Vec<Vec<u32>> = recs
        .iter()
        .map(|r| {
            let mut ids: Vec<u32> = word_set(first(r, &tp))
                .into_iter()
                .map(|w| {
                    let next = vocab.len() as u32;
                    *vocab.entry(w).or_insert(next)
                })
                .collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    let mut blocks: BTreeMap<Vec<Value>, Vec<usize>> = BTreeMap::new();
    for (i, r) in recs.iter().enumerate() {
        let k = by.iter().map(|p| first(r, p).cloned().unwrap_or(Value::Null)).collect();
        blocks.entry(k).or_default().push(i);
    }
    let mut parent: Vec<usize> = (0..recs.len()).collect();
    for members in blocks.values() {
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                let (x, y) = (words[i].len(), words[j].len());
                // |A∩B|/|A∪B| <= min/max, so skip pairs that cannot reach th
                if (x.min(y) as f64) < th * x.max(y) as f64 {
                    continue;
                }
                if jaccard(&words[i], &words[j]) >= th {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
    }
    let mut label: BTreeMap<usize, Value> = BTreeMap::new();
    for i in 0..recs.len() {
        let root = find(&mut parent, i);
        let k = first(&recs[i], &kp).cloned().unwrap_or(Value::Null);
        let e = label.entry(root).or_insert_with(|| k.clone());
        if k < *e {
            *e = k;
        }
    }
    let out = (0..recs.len())
        .map(|i| {
            let root = find(&mut parent, i);
            set(&recs[i], &into, label[&root].clone())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(out))
}

fn fuse_access(cfg: &Config) -> Access {
    let c = cfg_path(cfg, "cluster", "cluster");
    with_writes(reads([c.clone(), cfg_path(cfg, "key", "id")]), [c], WriteMode::Set)
}

fn fuse_removes(cfg: &Config) -> Vec<AttributePath> {
    vec![cfg_path(cfg, "cluster", "cluster")]
}

/// Keeps the record with the smallest key per cluster and fills its missing
/// or null top-level fields from the others in key order.
fn fuse(cfg: &Config, ins: &[&Dataset]) -> Out {
    let c = cfg_str(cfg, "cluster", "cluster");
    let kp = cfg_path(cfg, "key", "id");
    let mut groups: BTreeMap<(Value, usize), Vec<&Record>> = BTreeMap::new();
    for (i, r) in ins[0].records.iter().enumerate() {
        let g = match r.get(c) {
            Some(v) if *v != Value::Null => (v.clone(), 0),
            _ => (Value::Null, i + 1),
        };
        groups.entry(g).or_default().push(r);
    }
    let mut out = Vec::new();
    for (_, mut rs) in groups {
        rs.sort_by(|a, b| (first(a, &kp), *a).cmp(&(first(b, &kp), *b)));
        let mut m = rs[0].fields().clone();
        for other in &rs[1..] {
            for (k, v) in other.fields() {
                let missing = matches!(m.get(k), None | Some(Value::Null));
                if missing && *v != Value::Null {
                    m.insert(k.clone(), v.clone());
                }
            }
        }
        m.remove(c);
        out.push(Record::new(Value::Object(m)).expect("object"));
    }
    Ok(Dataset::new(out))
}

fn lnkrc_access(cfg: &Config) -> Access {
    let mut acc = join_access(cfg);
    acc.reads.insert(cfg_path(cfg, "ref", "id"));
    with_writes(acc, [cfg_path(cfg, "as", "links")], WriteMode::Set)
}

fn lnkrc_schema(cfg: &Config, ins: &[SchemaDescriptor]) -> SchemaDescriptor {
    let mut s = left_schema(cfg, ins);
    s.attributes.insert(cfg_path(cfg, "as", "links"));
    s
}

/// Adds to each left record the sorted reference values of matching right records.
fn lnkrc(cfg: &Config, ins: &[&Dataset]) -> Out {
    let (lk, rk) = (cfg_paths(cfg, "left"), cfg_paths(cfg, "right"));
    let refp = cfg_path(cfg, "ref", "id");
    let as_ = cfg_path(cfg, "as", "links");
    let idx = index(ins[1], &rk);
    map_records(ins[0], |l| {
        let mut links: Vec<Value> = key_of(l, &lk)
            .and_then(|k| idx.get(&k))
            .into_iter()
            .flatten()
            .filter_map(|r| first(r, &refp).cloned())
            .collect();
        links.sort();
        set(l, &as_, Value::Array(links))
    })
}

// ---- information extraction ----

fn text_of(r: &Record) -> &str {
    r.get("text").and_then(Value::as_str).unwrap_or("")
}

/// Sentence spans stored on the record, or computed when absent.
fn spans_of(r: &Record) -> Vec<(usize, usize)> {
    match r.get("sentences").and_then(Value::as_array) {
        Some(a) => a
            .iter()
            .filter_map(|s| {
                let s = s.as_array()?;
                let b = s.first()?.as_f64()? as usize;
                let e = s.get(1)?.as_f64()? as usize;
                Some((b, e))
            })
            .collect(),
        None => text::sentence_spans(&tokens(text_of(r))),
    }
}

fn sentence_of(spans: &[(usize, usize)], i: usize) -> usize {
    spans.iter().position(|&(b, e)| b <= i && i < e).unwrap_or(0)
}

fn entry(pairs: &[(&str, Value)]) -> Value {
    Value::Object(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect())
}

fn ann_access(target: &str) -> Access {
    with_writes(reads([fp("text"), fp("sentences")]), [np(target)], WriteMode::Append)
}

fn tok_ann_access(target: &str) -> Access {
    with_writes(reads([fp("text")]), [np(target)], WriteMode::Append)
}

/// Adds `f(record)` to the array at `target`, keeping entries sorted.
fn annotate(ins: &[&Dataset], target: &str, f: impl Fn(&Record) -> Vec<Value>) -> Out {
    let p = np(target);
    map_records(ins[0], |r| {
        let mut entries: Vec<Value> = first(r, &p).and_then(Value::as_array).cloned().unwrap_or_default();
        entries.extend(f(r));
        entries.sort();
        set(r, &p, Value::Array(entries))
    })
}

fn sent_access(_: &Config) -> Access {
    with_writes(reads([fp("text")]), [fp("sentences")], WriteMode::Set)
}

fn anntt_sent(_: &Config, ins: &[&Dataset]) -> Out {
    map_records(ins[0], |r| {
        let spans = text::sentence_spans(&tokens(text_of(r)));
        let v = spans
            .into_iter()
            .map(|(b, e)| Value::Array(vec![int(b), int(e)]))
            .collect();
        Ok(with_field(r, "sentences", Value::Array(v)))
    })
}

fn anntt_tok(_: &Config, ins: &[&Dataset]) -> Out {
    annotate(ins, "tokens", |r| {
        let spans = spans_of(r);
        tokens(text_of(r))
            .iter()
            .enumerate()
            .map(|(i, t)| entry(&[("s", int(sentence_of(&spans, i))), ("i", int(i)), ("v", Value::text(bare(t)))]))
            .collect()
    })
}

fn anntt_pos(_: &Config, ins: &[&Dataset]) -> Out {
    annotate(ins, "pos", |r| {
        let spans = spans_of(r);
        tokens(text_of(r))
            .iter()
            .enumerate()
            .map(|(i, t)| {
                entry(&[
                    ("s", int(sentence_of(&spans, i))),
                    ("i", int(i)),
                    ("tag", Value::text(text::pos_tag(t))),
                ])
            })
            .collect()
    })
}

fn anntt_dict(_: &Config, ins: &[&Dataset], target: &str, dict: &[&str]) -> Out {
    annotate(ins, target, |r| {
        let spans = spans_of(r);
        tokens(text_of(r))
            .iter()
            .enumerate()
            .filter(|(_, t)| dict.contains(&bare(t)))
            .map(|(i, t)| entry(&[("s", int(sentence_of(&spans, i))), ("i", int(i)), ("v", Value::text(bare(t)))]))
            .collect()
    })
}

fn rel_access(_: &Config) -> Access {
    with_writes(
        reads([fp("text"), fp("sentences"), np("entities.PER"), np("entities.COMP"), fp("pos")]),
        [fp("relations")],
        WriteMode::Append,
    )
}

fn entries_in<'a>(r: &'a Record, p: &str, s: usize) -> Vec<&'a Value> {
    first(r, &np(p))
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter(|e| e.get("s").and_then(Value::as_f64) == Some(s as f64))
        .collect()
}

/// A person and a company in one sentence together with a relation verb
/// (tagged VB) yield one relation per pair, using the first such verb.
fn anntt_rel(_: &Config, ins: &[&Dataset]) -> Out {
    annotate(ins, "relations", |r| {
        let toks = tokens(text_of(r));
        let mut out = BTreeSet::new();
        for s in 0..spans_of(r).len() {
            let pers = entries_in(r, "entities.PER", s);
            let comps = entries_in(r, "entities.COMP", s);
            if pers.is_empty() || comps.is_empty() {
                continue;
            }
            let verb = entries_in(r, "pos", s)
                .into_iter()
                .filter(|e| e.get("tag").and_then(Value::as_str) == Some("VB"))
                .filter_map(|e| e.get("i").and_then(Value::as_f64).map(|i| i as usize))
                .filter_map(|i| toks.get(i).map(|t| bare(t).to_lowercase()))
                .find(|w| text::RELATION_VERBS.contains(&w.as_str()));
            let Some(verb) = verb else { continue };
            for p in &pers {
                for c in &comps {
                    out.insert(entry(&[
                        ("s", int(s)),
                        ("p", p.get("v").cloned().unwrap_or(Value::Null)),
                        ("c", c.get("v").cloned().unwrap_or(Value::Null)),
                        ("verb", Value::text(verb.clone())),
                    ]));
                }
            }
        }
        out.into_iter().collect()
    })
}

fn anntt_stem(_: &Config, ins: &[&Dataset]) -> Out {
    annotate(ins, "stems", |r| {
        tokens(text_of(r))
            .iter()
            .enumerate()
            .filter_map(|(i, t)| text::stem(t).map(|s| entry(&[("i", int(i)), ("v", Value::text(s))])))
            .collect()
    })
}

fn anntt_stop(_: &Config, ins: &[&Dataset]) -> Out {
    annotate(ins, "stops", |r| {
        tokens(text_of(r))
            .iter()
            .enumerate()
            .filter(|(_, t)| text::is_stopword(t))
            .map(|(i, _)| entry(&[("i", int(i))]))
            .collect()
    })
}

fn lang_access(_: &Config) -> Access {
    with_writes(reads([fp("text")]), [fp("lang")], WriteMode::Set)
}

fn anntt_lang(_: &Config, ins: &[&Dataset]) -> Out {
    map_records(ins[0], |r| {
        let en = tokens(text_of(r)).iter().any(|t| text::is_stopword(t));
        Ok(with_field(r, "lang", Value::text(if en { "en" } else { "und" })))
    })
}

const ANNOTATION_FIELDS: &[&str] = &["entities", "pos", "relations", "tokens", "stems", "stops"];

fn split_access(_: &Config) -> Access {
    let ws = ["text", "sentences", "sid"].iter().chain(ANNOTATION_FIELDS).map(|f| fp(f));
    with_writes(reads([fp("text"), fp("sentences")]), ws, WriteMode::Set)
}

fn split_schema(_: &Config, ins: &[SchemaDescriptor]) -> SchemaDescriptor {
    let mut s = schema_union(ins);
    s.attributes.extend([fp("text"), fp("sentences"), fp("sid")]);
    s
}

fn is_annotation(v: &Value) -> bool {
    matches!(v, Value::Object(o) if o.contains_key("s") || o.contains_key("i"))
}

/// Keeps the annotation entries of sentence `k` (span `b..e`) and rebases
/// their sentence and token indices.
fn reindex(v: &Value, k: usize, b: usize, e: usize) -> Value {
    match v {
        Value::Array(a) if a.iter().any(is_annotation) => Value::Array(
            a.iter()
                .filter_map(|x| {
                    if !is_annotation(x) {
                        return Some(x.clone());
                    }
                    let s = x.get("s").and_then(Value::as_f64).map(|s| s as usize);
                    let i = x.get("i").and_then(Value::as_f64).map(|i| i as usize);
                    let keep = match (s, i) {
                        (Some(s), _) => s == k,
                        (None, Some(i)) => b <= i && i < e,
                        _ => true,
                    };
                    if !keep {
                        return None;
                    }
                    let mut o = x.as_object().cloned().unwrap_or_default();
                    if s.is_some() {
                        o.insert("s".into(), int(0));
                    }
                    if let Some(i) = i {
                        o.insert("i".into(), int(i - b));
                    }
                    Some(Value::Object(o))
                })
                .collect(),
        ),
        Value::Object(o) => Value::Object(o.iter().map(|(f, x)| (f.clone(), reindex(x, k, b, e))).collect()),
        other => other.clone(),
    }
}

/// One output record per sentence.
fn split_udf(_: &Config, ins: &[&Dataset]) -> Out {
    let mut out = Vec::new();
    for r in &ins[0].records {
        let toks = tokens(text_of(r));
        for (k, (b, e)) in spans_of(r).into_iter().enumerate() {
            let e = e.min(toks.len());
            let b = b.min(e);
            let mut m = BTreeMap::new();
            for (f, v) in r.fields() {
                let v = if ANNOTATION_FIELDS.contains(&f.as_str()) {
                    reindex(v, k, b, e)
                } else {
                    v.clone()
                };
                m.insert(f.clone(), v);
            }
            m.insert("text".into(), Value::text(toks[b..e].join(" ")));
            m.insert("sentences".into(), Value::Array(vec![Value::Array(vec![int(0), int(e - b)])]));
            m.insert("sid".into(), int(k));
            out.push(Record::new(Value::Object(m)).expect("object"));
        }
    }
    Ok(Dataset::new(out))
}

fn edit_access(cfg: &Config) -> Access {
    let f = cfg_path(cfg, "field", "stems");
    with_writes(reads([fp("text"), f.clone()]), [fp("text"), fp("sentences"), f], WriteMode::Set)
}

fn edit_removes(cfg: &Config) -> Vec<AttributePath> {
    vec![cfg_path(cfg, "field", "stems")]
}

fn edit_schema(cfg: &Config, ins: &[SchemaDescriptor]) -> SchemaDescriptor {
    let mut s = schema_union(ins);
    let f = cfg_path(cfg, "field", "stems");
    s.attributes.retain(|a| !f.is_prefix_of(a));
    s
}

fn edit_ports(cfg: &Config) -> SchemaDescriptor {
    SchemaDescriptor::new([fp("text"), cfg_path(cfg, "field", "stems")])
}

/// Applies token edits collected in `field` (`replace` with `v`, or `drop`)
/// and removes the field.
fn edit_udf(cfg: &Config, ins: &[&Dataset]) -> Out {
    let field = cfg_str(cfg, "field", "stems");
    let drop = cfg_str(cfg, "action", "replace") == "drop";
    map_records(ins[0], |r| {
        let mut toks: Vec<Option<String>> = tokens(text_of(r)).iter().map(|t| Some(t.to_string())).collect();
        for e in r.get(field).and_then(Value::as_array).into_iter().flatten() {
            let Some(i) = e.get("i").and_then(Value::as_f64).map(|i| i as usize) else { continue };
            if i >= toks.len() {
                continue;
            }
            if drop {
                toks[i] = None;
            } else if let Some(v) = e.get("v").and_then(Value::as_str) {
                toks[i] = Some(v.to_string());
            }
        }
        let mut out = without_fields(r, &[field]);
        if drop {
            if let Some(Value::Array(spans)) = r.get("sentences") {
                let dropped_before = |i: usize| toks[..i.min(toks.len())].iter().filter(|t| t.is_none()).count();
                let new: Vec<Value> = spans
                    .iter()
                    .filter_map(|s| {
                        let b = s.as_array()?.first()?.as_f64()? as usize;
                        let e = s.as_array()?.get(1)?.as_f64()? as usize;
                        Some(Value::Array(vec![int(b - dropped_before(b)), int(e - dropped_before(e))]))
                    })
                    .collect();
                out = with_field(&out, "sentences", Value::Array(new));
            }
        }
        let kept: Vec<String> = toks.into_iter().flatten().collect();
        Ok(with_field(&out, "text", Value::text(kept.join(" "))))
    })
}

const TOKEN_KEEP: &[&str] = &["id", "year", "sid"];

fn splt_tok_access(_: &Config) -> Access {
    with_writes(reads([fp("text")]), [fp("text")], WriteMode::Set)
}

fn splt_tok_schema(_: &Config, ins: &[SchemaDescriptor]) -> SchemaDescriptor {
    let mut s = schema_union(ins);
    s.attributes
        .retain(|a| a.head().is_some_and(|h| h == "text" || TOKEN_KEEP.contains(&h)));
    s.attributes.insert(fp("text"));
    s
}

/// One record per token, carrying the document key fields.
fn splt_tok(_: &Config, ins: &[&Dataset]) -> Out {
    let mut out = Vec::new();
    for r in &ins[0].records {
        let mut base = BTreeMap::new();
        for k in TOKEN_KEEP {
            if let Some(v) = r.get(k) {
                base.insert(k.to_string(), v.clone());
            }
        }
        for t in tokens(text_of(r)) {
            let mut m = base.clone();
            m.insert("text".into(), Value::text(t));
            out.push(Record::new(Value::Object(m)).expect("object"));
        }
    }
    Ok(Dataset::new(out))
}

fn mrg_access(cfg: &Config) -> Access {
    reads(cfg_paths(cfg, "on"))
}

fn mrg_ports(cfg: &Config, _: usize) -> SchemaDescriptor {
    SchemaDescriptor::new(cfg_paths(cfg, "on"))
}

fn deep_merge(a: &Value, b: &Value) -> Value {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut m = x.clone();
            for (k, v) in y {
                let merged = match x.get(k) {
                    Some(w) => deep_merge(w, v),
                    None => v.clone(),
                };
                m.insert(k.clone(), merged);
            }
            Value::Object(m)
        }
        (Value::Array(x), Value::Array(y)) if x != y => {
            let mut v = x.clone();
            let mut pool: Vec<&Value> = x.iter().collect();
            for e in y {
                match pool.iter().position(|p| *p == e) {
                    Some(i) => {
                        pool.swap_remove(i);
                    }
                    None => v.push(e.clone()),
                }
            }
            v.sort();
            Value::Array(v)
        }
        (Value::Null, other) => other.clone(),
        _ => a.clone(),
    }
}

/// Inner merge on equal `on` values; matching records are deep-merged.
fn mrg(cfg: &Config, ins: &[&Dataset]) -> Out {
    let on = cfg_paths(cfg, "on");
    let idx = index(ins[1], &on);
    let mut out = Vec::new();
    for l in &ins[0].records {
        if let Some(rs) = key_of(l, &on).and_then(|k| idx.get(&k)) {
            for r in rs {
                out.push(Record::new(deep_merge(l.root(), r.root())).expect("object"));
            }
        }
    }
    Ok(Dataset::new(out))
}

// ---- web ----

fn rmark_access(cfg: &Config) -> Access {
    let mut fs = cfg_paths(cfg, "fields");
    if fs.is_empty() {
        fs.push(fp("text"));
    }
    with_writes(reads(fs.clone()), fs, WriteMode::Set)
}

fn rmark(cfg: &Config, ins: &[&Dataset]) -> Out {
    let fs: Vec<AttributePath> = rmark_access(cfg).reads.into_iter().collect();
    map_records(ins[0], |r| {
        let mut out = r.clone();
        for p in &fs {
            if let Some(Value::Text(s)) = first(r, p) {
                out = set(&out, p, Value::text(text::strip_markup(s)))?;
            }
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(lines: &[&str]) -> Dataset {
        Dataset::new(lines.iter().map(|l| Record::from_json_str(l).unwrap()).collect())
    }

    fn cfg(j: &str) -> Config {
        serde_json::from_str(j).unwrap()
    }

    #[test]
    fn split_rebases_annotations() {
        let d = ds(&[r#"{"text":"Smith joined Acme. Chen met Weber.","sentences":[[0,3],[3,6]],
            "entities":{"PER":[{"s":0,"i":0,"v":"Smith"},{"s":1,"i":3,"v":"Chen"},{"s":1,"i":5,"v":"Weber"}]}}"#]);
        let out = split_udf(&Config::new(), &[&d]).unwrap();
        assert_eq!(out.len(), 2);
        let second = &out.records[1];
        assert_eq!(second.get("text").unwrap().as_str(), Some("Chen met Weber."));
        let per = first(second, &np("entities.PER")).unwrap().as_array().unwrap();
        assert_eq!(per.len(), 2);
        assert_eq!(per[0].get("i"), Some(&Value::Int(0)));
    }

    #[test]
    fn edit_drop_fixes_spans() {
        let d = ds(&[r#"{"text":"the cat sat. a dog","sentences":[[0,3],[3,5]],"stops":[{"i":0},{"i":3}]}"#]);
        let out = edit_udf(&cfg(r#"{"field":"stops","action":"drop"}"#), &[&d]).unwrap();
        let r = &out.records[0];
        assert_eq!(r.get("text").unwrap().as_str(), Some("cat sat. dog"));
        assert_eq!(r.get("sentences").unwrap().to_json().to_string(), "[[0,2],[2,3]]");
        assert!(r.get("stops").is_none());
    }

    #[test]
    fn predicate_on_count_and_path() {
        let r = Record::from_json_str(r#"{"year":2012,"entities":{"PER":[{"v":"x"}]}}"#).unwrap();
        let p: Json = serde_json::from_str(r#"{"and":[{"path":"year","op":">","value":2010},{"count":"entities.PER","op":">","value":0}]}"#).unwrap();
        assert!(eval_pred(&p, &r).unwrap());
        let q: Json = serde_json::from_str(r#"{"count":"entities.COMP","op":">","value":0}"#).unwrap();
        assert!(!eval_pred(&q, &r).unwrap());
    }

    #[test]
    fn ddup_then_fuse_fills_nulls() {
        let d = ds(&[
            r#"{"id":1,"year":2011,"text":"Smith joined Acme today.","src":null}"#,
            r#"{"id":2,"year":2011,"text":"Smith joined Acme today!","src":"wire"}"#,
            r#"{"id":3,"year":2011,"text":"Something else entirely.","src":"web"}"#,
        ]);
        let c = cfg(r#"{"by":["year"],"threshold":0.6}"#);
        let clustered = ddup(&c, &[&d]).unwrap();
        let fused = fuse(&Config::new(), &[&clustered]).unwrap();
        assert_eq!(fused.len(), 2);
        let one = fused.records.iter().find(|r| r.get("id") == Some(&Value::Int(1))).unwrap();
        assert_eq!(one.get("src").unwrap().as_str(), Some("wire"));
    }

    #[test]
    fn relation_needs_verb_and_pair() {
        let d = ds(&[r#"{"text":"Smith joined Acme. Chen met Hooli."}"#]);
        let s = anntt_sent(&Config::new(), &[&d]).unwrap();
        let p = anntt_dict(&Config::new(), &[&s], "entities.PER", text::PERSONS).unwrap();
        let c = anntt_dict(&Config::new(), &[&p], "entities.COMP", text::COMPANIES).unwrap();
        let t = anntt_pos(&Config::new(), &[&c]).unwrap();
        let r = anntt_rel(&Config::new(), &[&t]).unwrap();
        let rels = r.records[0].get("relations").unwrap().as_array().unwrap();
        assert_eq!(rels.len(), 1);
        assert_eq!(rels[0].get("verb").unwrap().as_str(), Some("joined"));
    }
}
