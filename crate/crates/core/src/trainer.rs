//! Linear toy embedder trained with metric-learning losses.
//!
//! The model is `f(x) = W x`, optionally projected onto the unit sphere.
//! Training is plain SGD over shuffled mini-batches; tuples are mined from
//! each batch with the current embeddings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{self, push_array_field, push_field};
use crate::losses::{loss_grad, LossTuple, Margin, PairLabel};
use crate::metrics::{distance_slices, l2_norm, Embedding, Metric};

pub const EMBEDDER_FORMAT: &str = "emgal-embedder";
pub const EMBEDDER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEmbedder {
    d_in: usize,
    d_emb: usize,
    /// Row-major `d_emb x d_in`.
    weights: Vec<f64>,
    normalize_output: bool,
}

struct Forward {
    z: Vec<f64>,
    norm: f64,
    out: Vec<f64>,
}

impl ToyEmbedder {
    pub fn new(d_in: usize, d_emb: usize, weights: Vec<f64>, normalize_output: bool) -> Result<Self> {
        if d_in == 0 || d_emb == 0 {
            return Err(Error::InvalidConfig("embedder dimensions must be >= 1".into()));
        }
        if weights.len() != d_in * d_emb {
            return Err(Error::DimensionMismatch { expected: d_in * d_emb, found: weights.len() });
        }
        if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { d_in, d_emb, weights, normalize_output })
    }

    pub fn identity(dim: usize, normalize_output: bool) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self { d_in: dim, d_emb: dim, weights, normalize_output }
    }

    /// Uniform initialisation in `[-1/sqrt(d_in), 1/sqrt(d_in)]`.
    pub fn random<R: Rng + ?Sized>(d_in: usize, d_emb: usize, normalize_output: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weights = (0..d_in * d_emb).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { d_in, d_emb, weights, normalize_output }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn normalize_output(&self) -> bool {
        self.normalize_output
    }

    pub fn embed(&self, features: &[f64]) -> Result<Embedding> {
        let f = self.forward(features)?;
        let e = Embedding::new(f.out)?;
        if self.normalize_output {
            crate::metrics::normalize(&e)
        } else {
            Ok(e)
        }
    }

    fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.d_in {
            return Err(Error::DimensionMismatch { expected: self.d_in, found: x.len() });
        }
        let z: Vec<f64> =
            self.weights.chunks_exact(self.d_in).map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum()).collect();
        let norm = l2_norm(&z);
        let out = if self.normalize_output {
            if norm <= 1e-12 {
                return Err(Error::ZeroVector);
            }
            z.iter().map(|v| v / norm).collect()
        } else {
            z.clone()
        };
        Ok(Forward { z, norm, out })
    }

    /// Accumulates `dL/dW` given `dL/d(output)` for input `x`.
    fn backward(&self, x: &[f64], f: &Forward, g_out: &[f64], grad_w: &mut [f64]) {
        let g_z: Vec<f64> = if self.normalize_output {
            // Jacobian of z / |z| is (I - e e^T) / |z|.
            let dot: f64 = f.out.iter().zip(g_out).map(|(e, g)| e * g).sum();
            f.out.iter().zip(g_out).map(|(e, g)| (g - e * dot) / f.norm).collect()
        } else {
            g_out.to_vec()
        };
        debug_assert_eq!(g_z.len(), f.z.len());
        for (r, gz) in g_z.iter().enumerate() {
            let row = &mut grad_w[r * self.d_in..(r + 1) * self.d_in];
            for (w, xv) in row.iter_mut().zip(x) {
                *w += gz * xv;
            }
        }
    }

    pub fn to_document(&self) -> String {
        let mut s = String::from("{");
        push_field(&mut s, "format", EMBEDDER_FORMAT);
        push_field(&mut s, "version", &EMBEDDER_VERSION);
        push_field(&mut s, "d_in", &self.d_in);
        push_field(&mut s, "d_emb", &self.d_emb);
        push_field(&mut s, "normalize_output", &self.normalize_output);
        push_array_field(&mut s, "weights", &self.weights);
        s.push_str("}\n");
        s
    }

    pub fn from_document(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            format: String,
            version: u32,
            d_in: usize,
            d_emb: usize,
            normalize_output: bool,
            weights: Vec<f64>,
        }
        let lines = jsonl::Lines::from_text(Path::new("<embedder>"), text);
        let (line, body) = lines.lines.first().ok_or_else(|| lines.corrupt(1, "empty document"))?;
        let doc: Doc = lines.parse(*line, body)?;
        if doc.format != EMBEDDER_FORMAT {
            return Err(lines.corrupt(*line, format!("unexpected format '{}'", doc.format)));
        }
        if doc.version != EMBEDDER_VERSION {
            return Err(Error::VersionMismatch { expected: EMBEDDER_VERSION, found: doc.version });
        }
        Self::new(doc.d_in, doc.d_emb, doc.weights, doc.normalize_output)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_atomic(path, &self.to_document())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_document(&std::fs::read_to_string(path)?).map_err(|e| match e {
            Error::CorruptFile { line, reason, .. } => Error::CorruptFile { path: path.to_path_buf(), line, reason },
            other => other,
        })
    }
}

/// Component-wise mean of embeddings, optionally rescaled to unit norm.
pub fn aggregate_embeddings(embs: &[Embedding], renormalize: bool) -> Result<Embedding> {
    let first = embs.first().ok_or(Error::EmptyInput)?;
    let dim = first.dim();
    let mut mean = vec![0.0; dim];
    for e in embs {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: e.dim() });
        }
        for (m, v) in mean.iter_mut().zip(e.iter()) {
            *m += v;
        }
    }
    let n = embs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let mean = Embedding::new(mean)?;
    if renormalize {
        crate::metrics::normalize(&mean)
    } else {
        Ok(mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Miner {
    AllValid,
    SemiHard,
    /// Group-sensitive sampling: every valid triplet, plus the hardest
    /// cross-group triplet for each ordered pair of groups within a class.
    GsTrs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Contrastive,
    Triplet,
    Quadruplet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: Margin,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub miner: Miner,
    pub loss: LossKind,
    pub metric: Metric,
    pub embed_dim: usize,
    pub normalize_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: Margin { primary: 0.5, secondary: None },
            learning_rate: 0.05,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            miner: Miner::AllValid,
            loss: LossKind::Triplet,
            metric: Metric::Euclidean,
            embed_dim: 2,
            normalize_output: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.margin.validate()?;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::InvalidConfig("embed_dim must be >= 1".into()));
        }
        let min_batch = match self.loss {
            LossKind::Contrastive => 2,
            LossKind::Triplet | LossKind::Quadruplet => 4,
        };
        if self.batch_size < min_batch {
            return Err(Error::InvalidConfig(format!("batch_size must be >= {min_batch} for {:?} loss", self.loss)));
        }
        if self.loss == LossKind::Quadruplet && self.margin.secondary.is_none() {
            return Err(Error::InvalidMargins("quadruplet loss needs a secondary margin".into()));
        }
        match self.metric {
            Metric::Euclidean | Metric::SquaredEuclidean => Ok(()),
            ref other => Err(Error::UnsupportedMetric(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub features: Vec<f64>,
    #[serde(alias = "class")]
    pub class_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl TrainSample {
    pub fn new(features: Vec<f64>, class_label: impl Into<String>) -> Self {
        Self { features, class_label: class_label.into(), group: None }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

/// A batch member seen by the miner.
#[derive(Debug, Clone, Copy)]
pub struct MiningItem<'a> {
    pub embedding: &'a [f64],
    pub class: &'a str,
    pub group: Option<&'a str>,
}

/// `(anchor, positive, negative)` indices into the batch.
pub type Triple = (usize, usize, usize);

/// Mines triplets from a batch.
///
/// `semi_hard` keeps triplets with `d_ap < d_an < d_ap + m`; `gs_trs` appends
/// one extra copy of the hardest triplet for each ordered pair of distinct
/// groups within a class, so cross-group positives carry more weight.
pub fn mine_triplets(batch: &[MiningItem<'_>], miner: Miner, margin: &Margin, metric: &Metric) -> Result<Vec<Triple>> {
    let mut per_class: BTreeMap<&str, usize> = BTreeMap::new();
    for item in batch {
        *per_class.entry(item.class).or_default() += 1;
    }
    if per_class.len() < 2 || per_class.values().all(|&c| c < 2) {
        return Err(Error::InsufficientClasses);
    }
    if miner == Miner::GsTrs {
        if let Some(index) = batch.iter().position(|i| i.group.is_none()) {
            return Err(Error::MissingGroups { index });
        }
    }

    let mut all = Vec::new();
    for (a, anchor) in batch.iter().enumerate() {
        for (p, positive) in batch.iter().enumerate() {
            if p == a || positive.class != anchor.class {
                continue;
            }
            for (n, negative) in batch.iter().enumerate() {
                if negative.class != anchor.class {
                    all.push((a, p, n));
                }
            }
        }
    }

    match miner {
        Miner::AllValid => Ok(all),
        Miner::SemiHard => {
            let mut kept = Vec::new();
            for &(a, p, n) in &all {
                let d_ap = distance_slices(metric, batch[a].embedding, batch[p].embedding)?;
                let d_an = distance_slices(metric, batch[a].embedding, batch[n].embedding)?;
                if d_ap < d_an && d_an < d_ap + margin.primary {
                    kept.push((a, p, n));
                }
            }
            Ok(kept)
        }
        Miner::GsTrs => {
            // (class, anchor group, positive group) -> (violation, triple)
            let mut hardest: BTreeMap<(&str, &str, &str), (f64, Triple)> = BTreeMap::new();
            for &(a, p, n) in &all {
                let ga = batch[a].group.expect("checked");
                let gp = batch[p].group.expect("checked");
                if ga == gp {
                    continue;
                }
                let d_ap = distance_slices(metric, batch[a].embedding, batch[p].embedding)?;
                let d_an = distance_slices(metric, batch[a].embedding, batch[n].embedding)?;
                let violation = margin.primary + d_ap - d_an;
                let key = (batch[a].class, ga, gp);
                match hardest.get(&key) {
                    Some((best, _)) if *best >= violation => {}
                    _ => {
                        hardest.insert(key, (violation, (a, p, n)));
                    }
                }
            }
            let mut out = all;
            out.extend(hardest.into_values().map(|(_, t)| t));
            Ok(out)
        }
    }
}

enum Tuples {
    Pairs(Vec<(usize, usize, PairLabel)>),
    Triples(Vec<Triple>),
    Quads(Vec<(usize, usize, usize, usize)>),
}

impl Tuples {
    fn len(&self) -> usize {
        match self {
            Tuples::Pairs(v) => v.len(),
            Tuples::Triples(v) => v.len(),
            Tuples::Quads(v) => v.len(),
        }
    }
}

fn build_tuples(outputs: &[Vec<f64>], samples: &[&TrainSample], config: &TrainConfig) -> Result<Tuples> {
    if config.loss == LossKind::Contrastive {
        let mut pairs = Vec::new();
        for i in 0..samples.len() {
            for j in (i + 1)..samples.len() {
                let label = if samples[i].class_label == samples[j].class_label {
                    PairLabel::Similar
                } else {
                    PairLabel::Dissimilar
                };
                pairs.push((i, j, label));
            }
        }
        return Ok(Tuples::Pairs(pairs));
    }

    let items: Vec<MiningItem<'_>> = outputs
        .iter()
        .zip(samples)
        .map(|(e, s)| MiningItem { embedding: e, class: &s.class_label, group: s.group.as_deref() })
        .collect();
    let triples = match mine_triplets(&items, config.miner, &config.margin, &config.metric) {
        Ok(t) => t,
        Err(Error::InsufficientClasses) => Vec::new(),
        Err(e) => return Err(e),
    };
    if config.loss == LossKind::Triplet {
        return Ok(Tuples::Triples(triples));
    }

    // Second negative: nearest sample to the first negative whose class
    // differs from both the anchor's and the first negative's.
    let mut quads = Vec::new();
    for (a, p, n1) in triples {
        let mut best: Option<(f64, usize)> = None;
        for (k, s) in samples.iter().enumerate() {
            if s.class_label == samples[a].class_label || s.class_label == samples[n1].class_label {
                continue;
            }
            let d = distance_slices(&config.metric, &outputs[n1], &outputs[k])?;
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, k));
            }
        }
        if let Some((_, n2)) = best {
            quads.push((a, p, n1, n2));
        }
    }
    Ok(Tuples::Quads(quads))
}

/// Mean loss over the tuples mined from `samples`, the gradient with respect
/// to the weights, and the number of tuples. Batches that yield no tuples
/// give zero loss and a zero gradient.
pub fn batch_loss_and_grad(
    model: &ToyEmbedder,
    samples: &[&TrainSample],
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>, usize)> {
    let forwards = samples.iter().map(|s| model.forward(&s.features)).collect::<Result<Vec<_>>>()?;
    let outputs: Vec<Vec<f64>> = forwards.iter().map(|f| f.out.clone()).collect();
    let tuples = build_tuples(&outputs, samples, config)?;
    let count = tuples.len();
    let mut grad_w = vec![0.0; model.weights.len()];
    if count == 0 {
        return Ok((0.0, grad_w, 0));
    }

    let dim = model.d_emb;
    let mut g_out = vec![vec![0.0; dim]; samples.len()];
    let mut total = 0.0;
    let mut accumulate = |tuple: LossTuple<'_>, idx: &[usize]| -> Result<()> {
        total += tuple.value(&config.metric)?;
        for (g, &i) in loss_grad(&tuple, &config.metric)?.iter().zip(idx) {
            for (acc, v) in g_out[i].iter_mut().zip(g) {
                *acc += v;
            }
        }
        Ok(())
    };
    let margin = config.margin;
    match &tuples {
        Tuples::Pairs(v) => {
            for &(i, j, label) in v {
                accumulate(LossTuple::Contrastive { x_i: &outputs[i], x_j: &outputs[j], label, margin }, &[i, j])?;
            }
        }
        Tuples::Triples(v) => {
            for &(a, p, n) in v {
                let t =
                    LossTuple::Triplet { anchor: &outputs[a], positive: &outputs[p], negative: &outputs[n], margin };
                accumulate(t, &[a, p, n])?;
            }
        }
        Tuples::Quads(v) => {
            for &(a, p, n1, n2) in v {
                let t = LossTuple::Quadruplet {
                    anchor: &outputs[a],
                    positive: &outputs[p],
                    negative1: &outputs[n1],
                    negative2: &outputs[n2],
                    margin,
                };
                accumulate(t, &[a, p, n1, n2])?;
            }
        }
    }

    let scale = 1.0 / count as f64;
    for ((s, f), g) in samples.iter().zip(&forwards).zip(&mut g_out) {
        g.iter_mut().for_each(|v| *v *= scale);
        model.backward(&s.features, f, g, &mut grad_w);
    }
    Ok((total * scale, grad_w, count))
}

/// Mean loss over the mined tuples, forward pass only.
pub fn batch_loss(model: &ToyEmbedder, samples: &[&TrainSample], config: &TrainConfig) -> Result<f64> {
    let outputs = samples.iter().map(|s| model.forward(&s.features).map(|f| f.out)).collect::<Result<Vec<_>>>()?;
    let tuples = build_tuples(&outputs, samples, config)?;
    let margin = config.margin;
    let m = &config.metric;
    let values: Vec<f64> = match tuples {
        Tuples::Pairs(v) => v
            .iter()
            .map(|&(i, j, label)| LossTuple::Contrastive { x_i: &outputs[i], x_j: &outputs[j], label, margin }.value(m))
            .collect::<Result<_>>()?,
        Tuples::Triples(v) => v
            .iter()
            .map(|&(a, p, n)| {
                LossTuple::Triplet { anchor: &outputs[a], positive: &outputs[p], negative: &outputs[n], margin }
                    .value(m)
            })
            .collect::<Result<_>>()?,
        Tuples::Quads(v) => v
            .iter()
            .map(|&(a, p, n1, n2)| {
                LossTuple::Quadruplet {
                    anchor: &outputs[a],
                    positive: &outputs[p],
                    negative1: &outputs[n1],
                    negative2: &outputs[n2],
                    margin,
                }
                .value(m)
            })
            .collect::<Result<_>>()?,
    };
    if values.is_empty() {
        return Ok(0.0);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ToyEmbedder,
    /// Mean tuple loss per epoch, measured before each batch's update.
    pub loss_history: Vec<f64>,
    /// Number of gradient passes taken.
    pub steps: usize,
}

/// Trains a fresh embedder on `data`. Deterministic for a fixed config.
pub fn train(config: &TrainConfig, data: &[TrainSample]) -> Result<TrainOutcome> {
    config.validate()?;
    let first = data.first().ok_or(Error::EmptyInput)?;
    let d_in = first.features.len();
    for s in data {
        if s.features.len() != d_in {
            return Err(Error::DimensionMismatch { expected: d_in, found: s.features.len() });
        }
    }
    let classes: BTreeSet<&str> = data.iter().map(|s| s.class_label.as_str()).collect();
    if classes.len() < 2 {
        return Err(Error::InsufficientClasses);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = ToyEmbedder::random(d_in, config.embed_dim, config.normalize_output, &mut rng);
    train_from(model, config, data, &mut rng)
}

/// Continues training `model`; used by [`train`] after initialisation.
pub fn train_from<R: Rng>(
    mut model: ToyEmbedder,
    config: &TrainConfig,
    data: &[TrainSample],
    rng: &mut R,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut steps = 0;

    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut weighted = 0.0;
        let mut tuples = 0usize;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grad, count) = batch_loss_and_grad(&model, &batch, config)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_no });
            }
            if count == 0 {
                continue;
            }
            steps += 1;
            weighted += loss * count as f64;
            tuples += count;
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= config.learning_rate * g;
            }
        }
        loss_history.push(if tuples == 0 { 0.0 } else { weighted / tuples as f64 });
    }
    Ok(TrainOutcome { model, loss_history, steps })
}
