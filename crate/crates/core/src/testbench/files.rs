//! Stimuli and response files.
//!
//! Both are plain text: a header block of `# key=value` lines followed by
//! comma-separated records whose first field is a tag.
//!
//! Stimuli (`# kind=stimuli`): `H,i,<S values>` for each measurement row,
//! one `R,<D values>` and one `Q,<S values>` record, optionally `X0,<S values>`
//! and `P0,<S values>` (initial state and covariance diagonal, otherwise a
//! flat start with `P₀ = Q`), then per step
//! `T,k,<S values>` (true state) and `Z,k,<D values>` (measurements).
//!
//! Responses (`# kind=responses`): `X,k,<S values>` per step, the estimated
//! a-posteriori state.
//!
//! Numbers are written in shortest round-trip form, so reading a file back
//! reproduces every value bit-exactly and identical runs give identical
//! bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::BusId;

pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StimuliSet {
    pub buses: Vec<BusId>,
    pub phases: usize,
    pub pmu: Vec<BusId>,
    pub h: DMatrix<f64>,
    pub r: DVector<f64>,
    pub q: DVector<f64>,
    pub x0: Option<DVector<f64>>,
    pub p0: Option<DVector<f64>>,
    /// True state per step, `[Re V; Im V]`.
    pub truth: Vec<DVector<f64>>,
    /// Measurement vector per step, `[Re ΓṼ; Im ΓṼ; Re ΓĨ; Im ΓĨ]`.
    pub z: Vec<DVector<f64>>,
    /// Largest load-flow power mismatch over all steps, pu.
    pub max_power_residual: f64,
}

impl StimuliSet {
    pub fn states(&self) -> usize {
        self.h.ncols()
    }

    pub fn measurements(&self) -> usize {
        self.h.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.z.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (s, d) = (self.states(), self.measurements());
        if self.z.is_empty() {
            return Err(Error::InvalidInput("stimuli contain no time steps".into()));
        }
        if self.r.len() != d || self.q.len() != s {
            return Err(Error::DimensionMismatch(format!(
                "R has {}, Q has {} entries",
                self.r.len(),
                self.q.len()
            )));
        }
        if self.truth.len() != self.z.len() {
            return Err(Error::DimensionMismatch(
                "truth and measurement horizons differ".into(),
            ));
        }
        if self.z.iter().any(|z| z.len() != d) || self.truth.iter().any(|t| t.len() != s) {
            return Err(Error::DimensionMismatch(
                "step record length does not match S or D".into(),
            ));
        }
        if self.x0.as_ref().is_some_and(|x| x.len() != s)
            || self.p0.as_ref().is_some_and(|p| p.len() != s)
        {
            return Err(Error::DimensionMismatch(
                "initial state does not match S".into(),
            ));
        }
        if self.x0.is_none() && (self.phases == 0 || s != 2 * self.buses.len() * self.phases) {
            return Err(Error::DimensionMismatch(format!(
                "S = {s} does not match {} buses × {} phases",
                self.buses.len(),
                self.phases
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        header(&mut out, "stimuli");
        let _ = writeln!(out, "# S={}", self.states());
        let _ = writeln!(out, "# D={}", self.measurements());
        let _ = writeln!(out, "# K={}", self.horizon());
        let _ = writeln!(out, "# phases={}", self.phases);
        let _ = writeln!(out, "# buses={}", join_ids(&self.buses));
        let _ = writeln!(out, "# pmu={}", join_ids(&self.pmu));
        let _ = writeln!(out, "# max_power_residual={:e}", self.max_power_residual);
        for i in 0..self.measurements() {
            record(&mut out, &format!("H,{i}"), self.h.row(i).iter());
        }
        record(&mut out, "R", self.r.iter());
        record(&mut out, "Q", self.q.iter());
        if let Some(x0) = &self.x0 {
            record(&mut out, "X0", x0.iter());
        }
        if let Some(p0) = &self.p0 {
            record(&mut out, "P0", p0.iter());
        }
        for (k, (t, z)) in self.truth.iter().zip(&self.z).enumerate() {
            record(&mut out, &format!("T,{k}"), t.iter());
            record(&mut out, &format!("Z,{k}"), z.iter());
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let doc = Document::parse(text, origin, "stimuli")?;
        let s: usize = doc.key("S")?;
        let d: usize = doc.key("D")?;
        let k: usize = doc.key("K")?;
        let phases: usize = doc.key("phases")?;
        let buses = parse_ids(doc.raw("buses")?, &doc, "buses")?;
        let pmu = parse_ids(doc.raw("pmu")?, &doc, "pmu")?;
        let max_power_residual: f64 = doc.key("max_power_residual")?;

        let mut h = DMatrix::zeros(d, s);
        let mut h_seen = vec![false; d];
        let mut r = None;
        let mut q = None;
        let mut x0 = None;
        let mut p0 = None;
        let mut truth = vec![None; k];
        let mut z = vec![None; k];
        for rec in &doc.records {
            match rec.tag.as_str() {
                "H" => {
                    let i = rec.index(&doc)?;
                    let v = rec.values(&doc, s)?;
                    if i >= d || h_seen[i] {
                        return Err(doc.err(rec.line, format!("bad or repeated H row {i}")));
                    }
                    h.row_mut(i).copy_from_slice(&v);
                    h_seen[i] = true;
                }
                "R" => r = Some(DVector::from_vec(rec.values_unindexed(&doc, d)?)),
                "Q" => q = Some(DVector::from_vec(rec.values_unindexed(&doc, s)?)),
                "X0" => x0 = Some(DVector::from_vec(rec.values_unindexed(&doc, s)?)),
                "P0" => p0 = Some(DVector::from_vec(rec.values_unindexed(&doc, s)?)),
                "T" | "Z" => {
                    let step = rec.index(&doc)?;
                    if step >= k {
                        return Err(doc.err(rec.line, format!("step {step} beyond K = {k}")));
                    }
                    if rec.tag == "T" {
                        truth[step] = Some(DVector::from_vec(rec.values(&doc, s)?));
                    } else {
                        z[step] = Some(DVector::from_vec(rec.values(&doc, d)?));
                    }
                }
                other => return Err(doc.err(rec.line, format!("unknown record tag {other:?}"))),
            }
        }
        if h_seen.iter().any(|s| !s) {
            return Err(doc.err(0, "missing H rows".into()));
        }
        let missing = |what: &str| doc.err(0, format!("missing {what} record"));
        let set = StimuliSet {
            buses,
            phases,
            pmu,
            h,
            r: r.ok_or_else(|| missing("R"))?,
            q: q.ok_or_else(|| missing("Q"))?,
            x0,
            p0,
            truth: truth
                .into_iter()
                .collect::<Option<_>>()
                .ok_or_else(|| missing("T"))?,
            z: z.into_iter()
                .collect::<Option<_>>()
                .ok_or_else(|| missing("Z"))?,
            max_power_residual,
        };
        set.validate()?;
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Producer {
    Gm,
    Mut,
}

impl Producer {
    fn as_str(self) -> &'static str {
        match self {
            Producer::Gm => "GM",
            Producer::Mut => "MUT",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSet {
    pub producer: Producer,
    /// Extra `key=value` pairs written into the header (precision, P, cycle
    /// and operation counts).
    pub meta: BTreeMap<String, String>,
    pub states: Vec<DVector<f64>>,
}

impl ResponseSet {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        header(&mut out, "responses");
        let _ = writeln!(out, "# producer={}", self.producer.as_str());
        let _ = writeln!(out, "# S={}", self.states.first().map_or(0, |x| x.len()));
        let _ = writeln!(out, "# K={}", self.states.len());
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        for (k, x) in self.states.iter().enumerate() {
            record(&mut out, &format!("X,{k}"), x.iter());
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let doc = Document::parse(text, origin, "responses")?;
        let producer = match doc.raw("producer")? {
            "GM" => Producer::Gm,
            "MUT" => Producer::Mut,
            other => return Err(doc.err(0, format!("unknown producer {other:?}"))),
        };
        let s: usize = doc.key("S")?;
        let k: usize = doc.key("K")?;
        let mut states = vec![None; k];
        for rec in &doc.records {
            if rec.tag != "X" {
                return Err(doc.err(rec.line, format!("unknown record tag {:?}", rec.tag)));
            }
            let step = rec.index(&doc)?;
            if step >= k {
                return Err(doc.err(rec.line, format!("step {step} beyond K = {k}")));
            }
            states[step] = Some(DVector::from_vec(rec.values(&doc, s)?));
        }
        let states = states
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| doc.err(0, "missing X records".into()))?;
        let meta = doc
            .header
            .iter()
            .filter(|(key, _)| !["kind", "layout", "producer", "S", "K"].contains(&key.as_str()))
            .map(|(a, b)| (a.clone(), b.clone()))
            .collect();
        Ok(ResponseSet {
            producer,
            meta,
            states,
        })
    }
}

fn header(out: &mut String, kind: &str) {
    let _ = writeln!(out, "# kind={kind}");
    let _ = writeln!(out, "# layout={LAYOUT_VERSION}");
}

fn record<'a>(out: &mut String, tag: &str, values: impl Iterator<Item = &'a f64>) {
    out.push_str(tag);
    for v in values {
        let _ = write!(out, ",{v:e}");
    }
    out.push('\n');
}

fn join_ids(ids: &[BusId]) -> String {
    ids.iter()
        .map(|b| b.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_ids(raw: &str, doc: &Document, key: &str) -> Result<Vec<BusId>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(';')
        .map(|s| s.parse().map_err(|e| doc.err(0, format!("{key}: {e}"))))
        .collect()
}

struct Record {
    line: usize,
    tag: String,
    fields: Vec<String>,
}

impl Record {
    fn index(&self, doc: &Document) -> Result<usize> {
        self.fields
            .first()
            .ok_or_else(|| doc.err(self.line, "missing index".into()))?
            .parse()
            .map_err(|e| doc.err(self.line, format!("index: {e}")))
    }

    fn floats(&self, doc: &Document, fields: &[String], n: usize) -> Result<Vec<f64>> {
        if fields.len() != n {
            return Err(doc.err(
                self.line,
                format!("expected {n} values, found {}", fields.len()),
            ));
        }
        fields
            .iter()
            .map(|f| {
                f.parse()
                    .map_err(|e| doc.err(self.line, format!("{f:?}: {e}")))
            })
            .collect()
    }

    fn values(&self, doc: &Document, n: usize) -> Result<Vec<f64>> {
        self.floats(doc, self.fields.get(1..).unwrap_or(&[]), n)
    }

    fn values_unindexed(&self, doc: &Document, n: usize) -> Result<Vec<f64>> {
        self.floats(doc, &self.fields, n)
    }
}

struct Document {
    origin: String,
    header: BTreeMap<String, String>,
    records: Vec<Record>,
}

impl Document {
    fn parse(text: &str, origin: &str, kind: &str) -> Result<Self> {
        let mut doc = Document {
            origin: origin.to_string(),
            header: BTreeMap::new(),
            records: Vec::new(),
        };
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let (k, v) = h
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| doc.err(ln + 1, "header line without '='".into()))?;
                doc.header
                    .insert(k.trim().to_string(), v.trim().to_string());
                continue;
            }
            let mut parts = line.split(',');
            let tag = parts.next().unwrap_or_default().to_string();
            doc.records.push(Record {
                line: ln + 1,
                tag,
                fields: parts.map(str::to_string).collect(),
            });
        }
        if doc.raw("kind")? != kind {
            return Err(doc.err(1, format!("not a {kind} file")));
        }
        let layout: u32 = doc.key("layout")?;
        if layout != LAYOUT_VERSION {
            return Err(doc.err(1, format!("unsupported layout version {layout}")));
        }
        Ok(doc)
    }

    fn err(&self, line: usize, msg: String) -> Error {
        Error::Parse {
            path: self.origin.clone(),
            line,
            msg,
        }
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| self.err(0, format!("missing header key {key}")))
    }

    fn key<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)?
            .parse()
            .map_err(|e| self.err(0, format!("header {key}: {e}")))
    }
}
