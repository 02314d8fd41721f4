//! Auxiliary-variable conditioning.
//!
//! Background variables (season, time of day, ...) shift embeddings in a
//! systematic way. When the state of such a variable is known at query time,
//! matching can be restricted to per-(class, state) centroids instead of the
//! whole class, which removes the variable's contribution to intra-class
//! spread.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::{Gallery, Label, QueryResult};
use crate::jsonl::{self, push_array_field, push_field, Lines};
use crate::metrics::{distance_slices, squared_euclidean, Embedding};

pub const CLUSTERS_FORMAT: &str = "emgal-clusters";
pub const CLUSTERS_VERSION: u32 = 1;

/// Admissible discrete states per auxiliary variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, Vec<String>>", into = "BTreeMap<String, Vec<String>>")]
pub struct AuxSchema {
    variables: BTreeMap<String, Vec<String>>,
}

impl AuxSchema {
    pub fn new<I, K, S>(variables: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, Vec<S>)>,
        K: Into<String>,
        S: Into<String>,
    {
        let map: BTreeMap<String, Vec<String>> =
            variables.into_iter().map(|(k, states)| (k.into(), states.into_iter().map(Into::into).collect())).collect();
        Self::try_from(map)
    }

    pub fn variables(&self) -> &BTreeMap<String, Vec<String>> {
        &self.variables
    }

    pub fn states(&self, variable: &str) -> Option<&[String]> {
        self.variables.get(variable).map(Vec::as_slice)
    }

    pub(crate) fn check(&self, aux: &BTreeMap<String, String>) -> Result<()> {
        for (var, state) in aux {
            let states = self.variables.get(var).ok_or_else(|| Error::UnknownAuxVariable(var.clone()))?;
            if !states.contains(state) {
                return Err(Error::InvalidAuxState { variable: var.clone(), state: state.clone() });
            }
        }
        Ok(())
    }
}

impl TryFrom<BTreeMap<String, Vec<String>>> for AuxSchema {
    type Error = Error;

    fn try_from(variables: BTreeMap<String, Vec<String>>) -> Result<Self> {
        for (name, states) in &variables {
            if states.is_empty() {
                return Err(Error::InvalidSchema(format!("variable '{name}' has no states")));
            }
            let unique: BTreeSet<&String> = states.iter().collect();
            if unique.len() != states.len() {
                return Err(Error::InvalidSchema(format!("variable '{name}' lists a state twice")));
            }
        }
        Ok(Self { variables })
    }
}

impl From<AuxSchema> for BTreeMap<String, Vec<String>> {
    fn from(s: AuxSchema) -> Self {
        s.variables
    }
}

pub(crate) fn check_variable(gallery: &Gallery, variable: &str) -> Result<()> {
    let in_schema = gallery.schema().is_some_and(|s| s.states(variable).is_some());
    let observed = gallery.records().any(|r| r.aux.contains_key(variable));
    if in_schema || observed {
        Ok(())
    } else {
        Err(Error::UnknownVariable(variable.to_string()))
    }
}

/// class -> state -> member embeddings, restricted to records that carry `variable`.
fn group_by_state<'a>(gallery: &'a Gallery, variable: &str) -> BTreeMap<&'a str, BTreeMap<&'a str, Vec<&'a [f64]>>> {
    let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<&[f64]>>> = BTreeMap::new();
    for r in gallery.records() {
        if let Some(state) = r.aux.get(variable) {
            groups.entry(r.class_label.as_str()).or_default().entry(state.as_str()).or_default().push(&r.embedding);
        }
    }
    groups
}

fn mean_of(points: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for p in points {
        for (a, v) in m.iter_mut().zip(p.iter()) {
            *a += v;
        }
    }
    let n = points.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaliencyReport {
    pub variable: String,
    pub score: f64,
    /// class -> (between-state scatter, within-state scatter), for classes
    /// that observe at least two states.
    pub per_class: BTreeMap<String, (f64, f64)>,
}

/// Fisher-style saliency of an auxiliary variable: the mean over classes of
/// between-state scatter divided by within-state scatter.
pub fn saliency(gallery: &Gallery, variable: &str) -> Result<SaliencyReport> {
    check_variable(gallery, variable)?;
    let dim = gallery.config().dim;
    let mut per_class = BTreeMap::new();
    let mut ratios = Vec::new();
    for (class, states) in group_by_state(gallery, variable) {
        if states.len() < 2 {
            continue;
        }
        let all: Vec<&[f64]> = states.values().flatten().copied().collect();
        let n_c = all.len() as f64;
        let mu_c = mean_of(&all, dim);
        let mut between = 0.0;
        let mut within = 0.0;
        for members in states.values() {
            let mu_s = mean_of(members, dim);
            between += members.len() as f64 / n_c * squared_euclidean(&mu_s, &mu_c);
            within += members.iter().map(|x| squared_euclidean(x, &mu_s)).sum::<f64>() / n_c;
        }
        ratios.push(if between == 0.0 { 0.0 } else { between / (within + 1e-12) });
        per_class.insert(class.to_string(), (between, within));
    }
    if ratios.is_empty() {
        return Err(Error::InsufficientStates(variable.to_string()));
    }
    let score = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(SaliencyReport { variable: variable.to_string(), score, per_class })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub n_init: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self { seed: 0, max_iter: 100, tol: 1e-6, n_init: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each point to its centroid.
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

/// Lloyd's algorithm from k-means++ seeds; best of `n_init` restarts.
pub fn kmeans<P: AsRef<[f64]>>(points: &[P], k: usize, params: &KMeansParams) -> Result<KMeansResult> {
    let first = points.first().ok_or(Error::EmptyInput)?;
    let dim = first.as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: p.as_ref().len() });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::KTooLarge { k, n: points.len() });
    }
    let pts: Vec<&[f64]> = points.iter().map(AsRef::as_ref).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..params.n_init.max(1) {
        let run = lloyd(&pts, k, params, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus_init<R: Rng>(pts: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![pts[rng.random_range(0..pts.len())].to_vec()];
    let mut d2: Vec<f64> = pts.iter().map(|p| squared_euclidean(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = pts.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && r < *w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..pts.len())
        };
        let c = pts[idx].to_vec();
        for (d, p) in d2.iter_mut().zip(pts) {
            *d = d.min(squared_euclidean(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(pts: &[&[f64]], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    pts.iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = squared_euclidean(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

fn lloyd<R: Rng>(pts: &[&[f64]], k: usize, params: &KMeansParams, rng: &mut R) -> KMeansResult {
    let dim = pts[0].len();
    let mut centroids = plus_plus_init(pts, k, rng);
    let mut history = Vec::new();
    for _ in 0..params.max_iter {
        let (mut assignments, mut d2) = assign(pts, &centroids);
        repair_empty(pts, &mut centroids, &mut assignments, &mut d2);
        history.push(d2.iter().sum());

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in pts.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for ((c, s), n) in centroids.iter_mut().zip(sums).zip(counts) {
            let updated: Vec<f64> = s.into_iter().map(|v| v / n as f64).collect();
            shift = shift.max(squared_euclidean(c, &updated).sqrt());
            *c = updated;
        }
        if shift <= params.tol {
            break;
        }
    }
    let (mut assignments, mut d2) = assign(pts, &centroids);
    repair_empty(pts, &mut centroids, &mut assignments, &mut d2);
    let inertia = d2.iter().sum();
    history.push(inertia);
    KMeansResult { centroids, assignments, inertia, inertia_history: history }
}

/// Gives every empty cluster the point farthest from its current centroid
/// (taken from a cluster with more than one member).
fn repair_empty(pts: &[&[f64]], centroids: &mut [Vec<f64>], assignments: &mut [usize], d2: &mut [f64]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let donor = (0..pts.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .max_by(|&i, &j| d2[i].total_cmp(&d2[j]).then(j.cmp(&i)));
        let Some(i) = donor else { return };
        centroids[empty] = pts[i].to_vec();
        assignments[i] = empty;
        d2[i] = 0.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    /// One centroid per observed (class, state) group.
    Supervised,
    /// Per-class k-means with k = number of observed states; clusters are
    /// named by the majority state of their members.
    Kmeans,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidEntry {
    pub centroid: Embedding,
    pub count: usize,
}

/// Conditioned centroids for one auxiliary variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub variable: String,
    pub mode: ConditionMode,
    pub dim: usize,
    /// (class, state) -> centroid
    pub centroids: BTreeMap<(String, String), CentroidEntry>,
}

impl ClusterModel {
    pub fn centroid(&self, class: &str, state: &str) -> Option<&Embedding> {
        self.centroids.get(&(class.to_string(), state.to_string())).map(|e| &e.centroid)
    }

    pub fn to_document(&self) -> String {
        let mut out = String::from("{");
        push_field(&mut out, "format", CLUSTERS_FORMAT);
        push_field(&mut out, "version", &CLUSTERS_VERSION);
        push_field(&mut out, "variable", &self.variable);
        push_field(&mut out, "mode", &self.mode);
        push_field(&mut out, "dim", &self.dim);
        out.push_str("}\n");
        for ((class, state), entry) in &self.centroids {
            out.push('{');
            push_field(&mut out, "class", class);
            push_field(&mut out, "state", state);
            push_field(&mut out, "count", &entry.count);
            push_array_field(&mut out, "vec", &entry.centroid);
            out.push_str("}\n");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_atomic(path, &self.to_document())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_lines(&Lines::read(path)?)
    }

    pub fn from_document(text: &str) -> Result<Self> {
        Self::from_lines(&Lines::from_text(Path::new("<clusters>"), text))
    }

    fn from_lines(lines: &Lines) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
            variable: String,
            mode: ConditionMode,
            dim: usize,
        }
        #[derive(Deserialize)]
        struct Row {
            class: String,
            state: String,
            count: usize,
            vec: Vec<f64>,
        }
        let mut iter = lines.lines.iter();
        let (hl, ht) = iter.next().ok_or_else(|| lines.corrupt(1, "missing header"))?;
        let h: Header = lines.parse(*hl, ht)?;
        if h.format != CLUSTERS_FORMAT {
            return Err(lines.corrupt(*hl, format!("unexpected format '{}'", h.format)));
        }
        if h.version != CLUSTERS_VERSION {
            return Err(Error::VersionMismatch { expected: CLUSTERS_VERSION, found: h.version });
        }
        let mut centroids = BTreeMap::new();
        for (line, text) in iter {
            let row: Row = lines.parse(*line, text)?;
            if row.vec.len() != h.dim {
                return Err(Error::DimensionMismatch { expected: h.dim, found: row.vec.len() });
            }
            if row.count == 0 {
                return Err(lines.corrupt(*line, "centroid count must be >= 1"));
            }
            let centroid = Embedding::new(row.vec).map_err(|e| lines.corrupt(*line, e.to_string()))?;
            if centroids.insert((row.class, row.state), CentroidEntry { centroid, count: row.count }).is_some() {
                return Err(lines.corrupt(*line, "duplicate (class, state) centroid"));
            }
        }
        Ok(Self { variable: h.variable, mode: h.mode, dim: h.dim, centroids })
    }
}

pub fn fit_condition_model(gallery: &Gallery, variable: &str, mode: ConditionMode) -> Result<ClusterModel> {
    fit_condition_model_with(gallery, variable, mode, &KMeansParams::default())
}

pub fn fit_condition_model_with(
    gallery: &Gallery,
    variable: &str,
    mode: ConditionMode,
    params: &KMeansParams,
) -> Result<ClusterModel> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    check_variable(gallery, variable)?;
    let dim = gallery.config().dim;
    let mut centroids = BTreeMap::new();
    for (class, states) in group_by_state(gallery, variable) {
        match mode {
            ConditionMode::Supervised => {
                for (state, members) in &states {
                    let centroid = Embedding::new(mean_of(members, dim))?;
                    centroids.insert(
                        (class.to_string(), state.to_string()),
                        CentroidEntry { centroid, count: members.len() },
                    );
                }
            }
            ConditionMode::Kmeans => {
                let mut points: Vec<&[f64]> = Vec::new();
                let mut truth: Vec<&str> = Vec::new();
                for (state, members) in &states {
                    points.extend(members);
                    truth.extend(std::iter::repeat_n(*state, members.len()));
                }
                let result = kmeans(&points, states.len(), params)?;
                // Majority state per cluster; ties go to the smallest state.
                let mut votes: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); states.len()];
                for (&a, s) in result.assignments.iter().zip(&truth) {
                    *votes[a].entry(s).or_default() += 1;
                }
                // Clusters that land on the same state are merged.
                let mut merged: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
                for (cluster, tally) in votes.iter().enumerate() {
                    let Some(max) = tally.values().max() else { continue };
                    let state = tally.iter().find(|(_, c)| *c == max).map(|(s, _)| *s).expect("non-empty");
                    let members =
                        points.iter().zip(&result.assignments).filter(|(_, a)| **a == cluster).map(|(p, _)| *p);
                    merged.entry(state).or_default().extend(members);
                }
                for (state, members) in merged {
                    let centroid = Embedding::new(mean_of(&members, dim))?;
                    centroids.insert(
                        (class.to_string(), state.to_string()),
                        CentroidEntry { centroid, count: members.len() },
                    );
                }
            }
        }
    }
    Ok(ClusterModel { variable: variable.to_string(), mode, dim, centroids })
}

/// Matches `q` against the centroids whose state equals the declared state
/// of the model's variable. Falls back to the unconditioned gallery query
/// (with `conditioned = false`) when no class has a centroid for that state.
pub fn conditioned_query(
    gallery: &Gallery,
    model: &ClusterModel,
    q: &Embedding,
    declared: &BTreeMap<String, String>,
    tau: f64,
) -> Result<QueryResult> {
    let state = declared.get(&model.variable).ok_or_else(|| Error::UndeclaredVariable(model.variable.clone()))?;
    if q.dim() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, found: q.dim() });
    }
    let metric = &gallery.config().metric;
    let mut ranked: Vec<(&str, f64)> = Vec::new();
    for ((class, s), entry) in &model.centroids {
        if s == state {
            ranked.push((class, distance_slices(metric, q, &entry.centroid)?));
        }
    }
    if ranked.is_empty() {
        let mut r = gallery.query_open_set(q, false)?;
        r.conditioned = false;
        return Ok(r);
    }
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let (class, d) = ranked[0];
    Ok(QueryResult {
        label: if d <= tau { Label::Known(class.to_string()) } else { Label::Unknown },
        distance: d,
        nearest_id: None,
        per_class: ranked.iter().map(|(c, d)| (c.to_string(), *d)).collect(),
        conditioned: true,
        threshold: tau,
    })
}
