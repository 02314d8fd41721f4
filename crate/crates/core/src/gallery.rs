//! The embedding gallery: open-set threshold queries, per-class capping,
//! MAD outlier pruning, adaptive thresholds and log-structured persistence.
//!
//! On disk a gallery is a line-delimited JSON log. Line 1 is a header with
//! the configuration; every following line is either an insert
//! (`{"op":"ins",...}`) or a tombstone (`{"op":"del","id":..}`). Deleting a
//! record appends a tombstone; [`Gallery::compact_file`] rewrites the log
//! without deleted records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize, Serializer};

use crate::conditioning::AuxSchema;
use crate::error::{Error, Result};
use crate::jsonl::{self, push_array_field, push_f64_field, push_field, Lines};
use crate::metrics::{distance_slices, Embedding, Metric};

pub const GALLERY_FORMAT: &str = "emgal";
pub const GALLERY_VERSION: u32 = 1;

/// Consistency constant relating MAD to the standard deviation of a normal.
const MAD_CONSISTENCY: f64 = 0.6745;
/// Same role for the mean absolute deviation (sqrt(2/pi)).
const MEAN_AD_CONSISTENCY: f64 = 0.7979;
const MIN_PRUNE_SIZE: usize = 4;

fn tau_or_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

fn default_mad_cutoff() -> f64 {
    3.5
}

fn default_alpha() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryConfig {
    pub dim: usize,
    pub metric: Metric,
    /// Distance threshold for accepting a match. Stored as `null` on disk
    /// when infinite.
    #[serde(deserialize_with = "tau_or_infinity")]
    pub tau: f64,
    /// Maximum number of records kept per class.
    pub cap_n: usize,
    #[serde(default = "default_mad_cutoff")]
    pub mad_cutoff: f64,
    #[serde(default = "default_alpha")]
    pub adaptive_alpha: f64,
}

impl GalleryConfig {
    pub fn new(dim: usize, metric: Metric, tau: f64, cap_n: usize) -> Result<Self> {
        let c = Self { dim, metric, tau, cap_n, mad_cutoff: default_mad_cutoff(), adaptive_alpha: default_alpha() };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGalleryConfig(m));
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if self.cap_n == 0 {
            return bad("cap_n must be >= 1".into());
        }
        if !(self.mad_cutoff.is_finite() && self.mad_cutoff > 0.0) {
            return bad(format!("mad_cutoff must be > 0, got {}", self.mad_cutoff));
        }
        if !(self.adaptive_alpha.is_finite() && self.adaptive_alpha > 0.0) {
            return bad(format!("adaptive_alpha must be > 0, got {}", self.adaptive_alpha));
        }
        self.metric.validate()?;
        if let Metric::Mahalanobis { inv_cov } = &self.metric {
            if inv_cov.dim() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, found: inv_cov.dim() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryRecord {
    pub id: u64,
    pub class_label: String,
    pub aux: BTreeMap<String, String>,
    pub timestamp: u64,
    pub embedding: Embedding,
}

/// Record fields supplied by the caller; id and timestamp are assigned on insert.
#[derive(Debug, Clone, PartialEq)]
pub struct NewRecord {
    pub class_label: String,
    pub aux: BTreeMap<String, String>,
    pub embedding: Embedding,
}

impl NewRecord {
    pub fn new(class_label: impl Into<String>, embedding: Embedding) -> Self {
        Self { class_label: class_label.into(), aux: BTreeMap::new(), embedding }
    }

    pub fn with_aux(mut self, variable: impl Into<String>, state: impl Into<String>) -> Self {
        self.aux.insert(variable.into(), state.into());
        self
    }
}

/// Outcome label of an open-set query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    Known(String),
    Unknown,
}

impl Label {
    pub fn as_known(&self) -> Option<&str> {
        match self {
            Label::Known(s) => Some(s),
            Label::Unknown => None,
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Label::Unknown)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Known(s) => f.write_str(s),
            Label::Unknown => f.write_str("UNKNOWN"),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_known().serialize(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub label: Label,
    /// Distance to the best match; infinite when there was nothing to match.
    pub distance: f64,
    pub nearest_id: Option<u64>,
    /// Best distance per class, ascending (ties by class label).
    pub per_class: Vec<(String, f64)>,
    pub conditioned: bool,
    /// Threshold the decision was made against.
    pub threshold: f64,
}

impl QueryResult {
    pub(crate) fn empty(threshold: f64, conditioned: bool) -> Self {
        Self {
            label: Label::Unknown,
            distance: f64::INFINITY,
            nearest_id: None,
            per_class: Vec::new(),
            conditioned,
            threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum JournalEntry {
    Insert(GalleryRecord),
    Delete(u64),
}

/// In-memory gallery plus the operation journal since the last compaction.
///
/// Equality compares configuration, schema, live records and the id and
/// timestamp counters; the journal is not part of the state.
#[derive(Debug, Clone)]
pub struct Gallery {
    config: GalleryConfig,
    schema: Option<AuxSchema>,
    records: BTreeMap<u64, GalleryRecord>,
    next_id: u64,
    next_ts: u64,
    journal: Vec<JournalEntry>,
}

/// Reader-writer shared handle: many concurrent queries or one mutation.
pub type SharedGallery = Arc<RwLock<Gallery>>;

impl PartialEq for Gallery {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.schema == other.schema
            && self.records == other.records
            && self.next_id == other.next_id
            && self.next_ts == other.next_ts
    }
}

impl Gallery {
    pub fn new(config: GalleryConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, schema: None, records: BTreeMap::new(), next_id: 0, next_ts: 0, journal: Vec::new() })
    }

    /// Enables strict mode: aux variables and states must appear in `schema`.
    pub fn with_schema(mut self, schema: AuxSchema) -> Result<Self> {
        for r in self.records.values() {
            schema.check(&r.aux)?;
        }
        self.schema = Some(schema);
        Ok(self)
    }

    pub fn config(&self) -> &GalleryConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut GalleryConfig {
        &mut self.config
    }

    pub fn schema(&self) -> Option<&AuxSchema> {
        self.schema.as_ref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn get(&self, id: u64) -> Option<&GalleryRecord> {
        self.records.get(&id)
    }

    /// Live records in id order.
    pub fn records(&self) -> impl Iterator<Item = &GalleryRecord> {
        self.records.values()
    }

    pub fn class_records<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a GalleryRecord> + 'a {
        self.records.values().filter(move |r| r.class_label == class)
    }

    pub fn classes(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.values().map(|r| r.class_label.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn journal_len(&self) -> usize {
        self.journal.len()
    }

    pub fn insert(&mut self, record: NewRecord) -> Result<u64> {
        let id = self.next_id;
        self.insert_with_id(id, record)
    }

    /// Inserts under a caller-chosen id; fails if that id is live.
    pub fn insert_with_id(&mut self, id: u64, record: NewRecord) -> Result<u64> {
        if record.embedding.dim() != self.config.dim {
            return Err(Error::DimensionMismatch { expected: self.config.dim, found: record.embedding.dim() });
        }
        if self.records.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        if let Some(schema) = &self.schema {
            schema.check(&record.aux)?;
        }
        let rec = GalleryRecord {
            id,
            class_label: record.class_label,
            aux: record.aux,
            timestamp: self.next_ts,
            embedding: record.embedding,
        };
        self.next_ts += 1;
        self.next_id = self.next_id.max(id + 1);
        self.journal.push(JournalEntry::Insert(rec.clone()));
        self.records.insert(id, rec);
        Ok(id)
    }

    /// Deletes a record, leaving a tombstone in the journal.
    pub fn remove(&mut self, id: u64) -> Result<GalleryRecord> {
        let rec = self.records.remove(&id).ok_or(Error::UnknownId(id))?;
        self.journal.push(JournalEntry::Delete(id));
        Ok(rec)
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        distance_slices(&self.config.metric, a, b)
    }

    /// Nearest-record open-set query.
    ///
    /// For each class the minimum distance to any of its records is taken;
    /// the closest class wins (ties: smallest label, then smallest id). The
    /// winner is returned only if its distance is within the global `tau`
    /// (or the class's adaptive threshold when `use_adaptive` is set).
    pub fn query_open_set(&self, q: &Embedding, use_adaptive: bool) -> Result<QueryResult> {
        if q.dim() != self.config.dim {
            return Err(Error::DimensionMismatch { expected: self.config.dim, found: q.dim() });
        }
        // class -> (distance, id); records iterate in id order so the first
        // minimum seen has the smallest id.
        let mut best: BTreeMap<&str, (f64, u64)> = BTreeMap::new();
        for r in self.records.values() {
            let d = self.distance(q, &r.embedding)?;
            match best.get(r.class_label.as_str()) {
                Some((bd, _)) if *bd <= d => {}
                _ => {
                    best.insert(&r.class_label, (d, r.id));
                }
            }
        }
        let mut ranked: Vec<(&str, f64, u64)> = best.into_iter().map(|(c, (d, id))| (c, d, id)).collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));

        let Some(&(class, d, id)) = ranked.first() else {
            return Ok(QueryResult::empty(self.config.tau, false));
        };
        let threshold = if use_adaptive { self.adaptive_tau(class)? } else { self.config.tau };
        let label = if d <= threshold { Label::Known(class.to_string()) } else { Label::Unknown };
        Ok(QueryResult {
            label,
            distance: d,
            nearest_id: Some(id),
            per_class: ranked.iter().map(|(c, d, _)| (c.to_string(), *d)).collect(),
            conditioned: false,
            threshold,
        })
    }

    /// Drops the oldest records of `class` until at most `cap_n` remain.
    pub fn evict_to_cap(&mut self, class: &str) -> usize {
        let mut members: Vec<(u64, u64)> = self.class_records(class).map(|r| (r.timestamp, r.id)).collect();
        let cap = self.config.cap_n;
        if members.len() <= cap {
            return 0;
        }
        members.sort_unstable();
        let excess = members.len() - cap;
        for &(_, id) in &members[..excess] {
            self.remove(id).expect("member is live");
        }
        excess
    }

    /// Per-record distances of `class` members to a reference point.
    fn member_distances(&self, class: &str, center: &[f64]) -> Result<Vec<(u64, f64)>> {
        self.class_records(class).map(|r| Ok((r.id, self.distance(&r.embedding, center)?))).collect()
    }

    /// Removes far outliers of `class` by modified z-score of the distance
    /// to the component-wise median embedding. Classes with fewer than four
    /// members are left alone.
    ///
    /// Removing outliers shifts the median, so passes repeat until one
    /// removes nothing; the result is a fixed point and a second call is a
    /// no-op.
    pub fn prune_mad(&mut self, class: &str) -> Result<Vec<u64>> {
        if self.class_records(class).next().is_none() {
            return Err(Error::UnknownClass(class.to_string()));
        }
        let mut removed = Vec::new();
        loop {
            let pass = self.prune_mad_pass(class)?;
            if pass.is_empty() {
                break;
            }
            for id in &pass {
                self.remove(*id)?;
            }
            removed.extend(pass);
        }
        Ok(removed)
    }

    fn prune_mad_pass(&self, class: &str) -> Result<Vec<u64>> {
        let members: Vec<&GalleryRecord> = self.class_records(class).collect();
        if members.len() < MIN_PRUNE_SIZE {
            return Ok(Vec::new());
        }
        let center: Vec<f64> =
            (0..self.config.dim).map(|k| median(&members.iter().map(|r| r.embedding[k]).collect::<Vec<_>>())).collect();
        let dists = self.member_distances(class, &center)?;
        Ok(mad_outliers(&dists, self.config.mad_cutoff))
    }

    /// Per-class threshold `mean + alpha * std` of member distances to the
    /// class centroid. Falls back to the global `tau` below two members.
    pub fn adaptive_tau(&self, class: &str) -> Result<f64> {
        let members: Vec<&GalleryRecord> = self.class_records(class).collect();
        if members.is_empty() {
            return Err(Error::UnknownClass(class.to_string()));
        }
        if members.len() < 2 {
            return Ok(self.config.tau);
        }
        let n = members.len() as f64;
        let mut centroid = vec![0.0; self.config.dim];
        for r in &members {
            for (c, v) in centroid.iter_mut().zip(r.embedding.iter()) {
                *c += v;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= n);
        let d: Vec<f64> = self.member_distances(class, &centroid)?.into_iter().map(|(_, d)| d).collect();
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Ok(mean + self.config.adaptive_alpha * var.sqrt())
    }

    // --- persistence -------------------------------------------------------

    fn header_line(&self) -> String {
        let c = &self.config;
        let mut s = String::from("{");
        push_field(&mut s, "format", GALLERY_FORMAT);
        push_field(&mut s, "version", &GALLERY_VERSION);
        push_field(&mut s, "dim", &c.dim);
        push_field(&mut s, "metric", &c.metric);
        if c.tau.is_finite() {
            push_f64_field(&mut s, "tau", c.tau);
        } else {
            push_field(&mut s, "tau", &());
        }
        push_field(&mut s, "cap_n", &c.cap_n);
        push_f64_field(&mut s, "mad_cutoff", c.mad_cutoff);
        push_f64_field(&mut s, "adaptive_alpha", c.adaptive_alpha);
        push_field(&mut s, "next_id", &self.next_id);
        push_field(&mut s, "next_ts", &self.next_ts);
        if let Some(schema) = &self.schema {
            push_field(&mut s, "schema", schema);
        }
        s.push('}');
        s
    }

    fn insert_line(r: &GalleryRecord) -> String {
        let mut s = String::from("{");
        push_field(&mut s, "op", "ins");
        push_field(&mut s, "id", &r.id);
        push_field(&mut s, "class", &r.class_label);
        push_field(&mut s, "aux", &r.aux);
        push_field(&mut s, "ts", &r.timestamp);
        push_array_field(&mut s, "vec", &r.embedding);
        s.push('}');
        s
    }

    /// The full log document (header plus journal).
    pub fn to_log(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        for entry in &self.journal {
            match entry {
                JournalEntry::Insert(r) => out.push_str(&Self::insert_line(r)),
                JournalEntry::Delete(id) => {
                    out.push_str(&format!("{{\"op\":\"del\",\"id\":{id}}}"));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Writes the log atomically (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_atomic(path, &self.to_log())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_lines(&Lines::read(path)?)
    }

    pub fn from_log(text: &str) -> Result<Self> {
        Self::from_lines(&Lines::from_text(Path::new("<gallery>"), text))
    }

    fn from_lines(lines: &Lines) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
            #[serde(flatten)]
            config: GalleryConfig,
            #[serde(default)]
            next_id: u64,
            #[serde(default)]
            next_ts: u64,
            #[serde(default)]
            schema: Option<AuxSchema>,
        }
        #[derive(Deserialize)]
        #[serde(tag = "op", deny_unknown_fields)]
        enum Op {
            #[serde(rename = "ins")]
            Ins {
                id: u64,
                class: String,
                #[serde(default)]
                aux: BTreeMap<String, String>,
                ts: u64,
                vec: Vec<f64>,
            },
            #[serde(rename = "del")]
            Del { id: u64 },
        }

        let mut iter = lines.lines.iter();
        let (hline, htext) = iter.next().ok_or_else(|| lines.corrupt(1, "missing header"))?;
        let raw: serde_json::Value = lines.parse(*hline, htext)?;
        if raw.get("format").and_then(|f| f.as_str()) != Some(GALLERY_FORMAT) {
            return Err(lines.corrupt(*hline, "header is not an emgal gallery header"));
        }
        if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
            if v != u64::from(GALLERY_VERSION) {
                return Err(Error::VersionMismatch { expected: GALLERY_VERSION, found: v as u32 });
            }
        }
        let header: Header = lines.parse(*hline, htext)?;
        debug_assert_eq!(header.format, GALLERY_FORMAT);
        debug_assert_eq!(header.version, GALLERY_VERSION);
        header.config.validate().map_err(|e| lines.corrupt(*hline, e.to_string()))?;

        let mut g = Gallery::new(header.config)?;
        g.schema = header.schema;
        let mut last_ts: Option<u64> = None;
        for (line, text) in iter {
            match lines.parse::<Op>(*line, text)? {
                Op::Ins { id, class, aux, ts, vec } => {
                    if vec.len() != g.config.dim {
                        return Err(Error::DimensionMismatch { expected: g.config.dim, found: vec.len() });
                    }
                    let embedding = Embedding::new(vec).map_err(|e| lines.corrupt(*line, e.to_string()))?;
                    if g.records.contains_key(&id) {
                        return Err(lines.corrupt(*line, format!("duplicate live id {id}")));
                    }
                    if last_ts.is_some_and(|t| ts <= t) {
                        return Err(lines.corrupt(*line, format!("timestamp {ts} does not increase")));
                    }
                    if let Some(schema) = &g.schema {
                        schema.check(&aux).map_err(|e| lines.corrupt(*line, e.to_string()))?;
                    }
                    last_ts = Some(ts);
                    let rec = GalleryRecord { id, class_label: class, aux, timestamp: ts, embedding };
                    g.next_id = g.next_id.max(id + 1);
                    g.next_ts = g.next_ts.max(ts + 1);
                    g.journal.push(JournalEntry::Insert(rec.clone()));
                    g.records.insert(id, rec);
                }
                Op::Del { id } => {
                    if g.records.remove(&id).is_none() {
                        return Err(lines.corrupt(*line, format!("tombstone for unknown id {id}")));
                    }
                    g.journal.push(JournalEntry::Delete(id));
                }
            }
        }
        g.next_id = g.next_id.max(header.next_id);
        g.next_ts = g.next_ts.max(header.next_ts);
        Ok(g)
    }

    /// Drops tombstones and deleted inserts from the in-memory journal.
    pub fn compact(&mut self) {
        self.journal = self.records.values().map(|r| JournalEntry::Insert(r.clone())).collect();
        // Replay requires increasing timestamps; id order need not match.
        self.journal.sort_by_key(|e| match e {
            JournalEntry::Insert(r) => r.timestamp,
            JournalEntry::Delete(_) => unreachable!(),
        });
    }

    /// Rewrites the log at `path` with deleted records physically removed.
    pub fn compact_file(path: &Path) -> Result<Self> {
        let mut g = Self::load(path)?;
        g.compact();
        g.save(path)?;
        Ok(g)
    }
}

/// Ids whose modified z-score exceeds `cutoff` (one-sided: only far records).
fn mad_outliers(dists: &[(u64, f64)], cutoff: f64) -> Vec<u64> {
    let values: Vec<f64> = dists.iter().map(|(_, d)| *d).collect();
    let m = median(&values);
    let abs_dev: Vec<f64> = values.iter().map(|d| (d - m).abs()).collect();
    let mad = median(&abs_dev);
    let scale = if mad > 0.0 {
        MAD_CONSISTENCY / mad
    } else {
        let mean_ad = abs_dev.iter().sum::<f64>() / abs_dev.len() as f64;
        if mean_ad == 0.0 {
            return Vec::new();
        }
        MEAN_AD_CONSISTENCY / mean_ad
    };
    dists.iter().filter(|(_, d)| scale * (d - m) > cutoff).map(|(id, _)| *id).collect()
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
