//! Synthetic world with one background variable, and a harness comparing
//! unconditioned and conditioned matching on it.
//!
//! Class `i` sits at `class_separation * e_i`. The background variable
//! moves every sample along a reserved axis `e_{n_classes}`: with `S`
//! states, state `s` is offset by
//! `aux_shift * 2 * (s - (S-1)/2) / max(1, S-1)`, so the offsets span
//! `[-aux_shift, +aux_shift]`. Isotropic Gaussian noise is added on top.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{conditioned_query, fit_condition_model, ConditionMode};
use crate::error::{Error, Result};
use crate::gallery::{Gallery, GalleryConfig, Label, NewRecord};
use crate::metrics::{squared_euclidean, Embedding, Metric};

pub const STATE_VARIABLE: &str = "state";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub n_classes: usize,
    pub n_states: usize,
    pub class_separation: f64,
    pub aux_shift: f64,
    pub noise_sigma: f64,
    pub samples_per_cell: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_classes == 0 || self.n_states == 0 {
            return bad("n_classes and n_states must be >= 1".into());
        }
        let needed = self.n_classes + usize::from(self.n_states >= 2);
        if self.dim < needed {
            return bad(format!("dim {} cannot host {} orthogonal axes", self.dim, needed));
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return bad(format!("class_separation must be > 0, got {}", self.class_separation));
        }
        if !(self.aux_shift.is_finite() && self.aux_shift >= 0.0) {
            return bad(format!("aux_shift must be >= 0, got {}", self.aux_shift));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if self.samples_per_cell < 2 {
            return bad("samples_per_cell must be >= 2".into());
        }
        Ok(())
    }

    pub fn class_label(i: usize) -> String {
        format!("c{i}")
    }

    pub fn state_label(s: usize) -> String {
        format!("s{s}")
    }

    /// Offset of state `s` along the reserved axis.
    pub fn state_offset(&self, s: usize) -> f64 {
        let span = (self.n_states.max(2) - 1) as f64;
        let centre = (self.n_states as f64 - 1.0) / 2.0;
        self.aux_shift * ((s as f64 - centre) / span) * 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecord {
    pub embedding: Embedding,
    pub class: String,
    pub state: String,
}

/// Standard normal draws by the Box-Muller transform.
struct BoxMuller<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: Rng> BoxMuller<R> {
    fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - U maps [0, 1) onto (0, 1], keeping ln finite.
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        self.spare = Some(r * (TAU * u2).sin());
        r * (TAU * u2).cos()
    }
}

/// `samples_per_cell` samples for every (class, state) cell, in class-major order.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SyntheticRecord>> {
    spec.validate()?;
    let mut normal = BoxMuller::new(ChaCha8Rng::seed_from_u64(spec.seed));
    let mut out = Vec::with_capacity(spec.n_classes * spec.n_states * spec.samples_per_cell);
    for c in 0..spec.n_classes {
        for s in 0..spec.n_states {
            for _ in 0..spec.samples_per_cell {
                let mut v = vec![0.0; spec.dim];
                v[c] = spec.class_separation;
                if spec.n_states >= 2 {
                    v[spec.n_classes] += spec.state_offset(s);
                }
                for x in v.iter_mut() {
                    *x += spec.noise_sigma * normal.next();
                }
                out.push(SyntheticRecord {
                    embedding: Embedding::new(v)?,
                    class: SyntheticSpec::class_label(c),
                    state: SyntheticSpec::state_label(s),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Nearest per-class centroid of the gallery half.
    #[default]
    ClassCentroid,
    /// Nearest gallery record (the plain gallery query).
    NearestRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub tau: f64,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub baseline: Baseline,
}

fn default_split() -> f64 {
    0.5
}

impl EvalConfig {
    pub fn new(tau: f64) -> Self {
        Self { tau, split_fraction: 0.5, seed: 0, baseline: Baseline::ClassCentroid }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCounts {
    pub class: String,
    pub state: String,
    pub gallery: usize,
    pub queries: usize,
    pub correct_unconditioned: usize,
    pub correct_conditioned: usize,
    pub unknown_unconditioned: usize,
    pub unknown_conditioned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub acc_unconditioned: f64,
    pub acc_conditioned: f64,
    pub unknown_rate_unconditioned: f64,
    pub unknown_rate_conditioned: f64,
    pub queries: usize,
    pub per_cell: Vec<CellCounts>,
}

/// Per-query detail behind a [`BenchReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub class: String,
    pub state: String,
    pub unconditioned: Label,
    pub unconditioned_distance: f64,
    pub conditioned: Label,
    pub conditioned_distance: f64,
}

pub fn evaluate(dataset: &[SyntheticRecord], config: &EvalConfig) -> Result<BenchReport> {
    evaluate_detailed(dataset, config).map(|(r, _)| r)
}

/// Splits every cell into gallery and query halves and scores both
/// protocols. The conditioned protocol fits supervised per-(class, state)
/// centroids and declares each query's true state.
pub fn evaluate_detailed(dataset: &[SyntheticRecord], config: &EvalConfig) -> Result<(BenchReport, Vec<QueryOutcome>)> {
    let first = dataset.first().ok_or(Error::EmptyInput)?;
    let dim = first.embedding.dim();
    if !(config.split_fraction > 0.0 && config.split_fraction < 1.0) {
        return Err(Error::InvalidSpec(format!("split_fraction must be in (0, 1), got {}", config.split_fraction)));
    }

    let mut cells: BTreeMap<(&str, &str), Vec<&SyntheticRecord>> = BTreeMap::new();
    for r in dataset {
        if r.embedding.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: r.embedding.dim() });
        }
        cells.entry((r.class.as_str(), r.state.as_str())).or_default().push(r);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut splits = Vec::new();
    for ((class, state), members) in &cells {
        if members.len() < 2 {
            return Err(Error::CellTooSmall {
                class: class.to_string(),
                state: state.to_string(),
                count: members.len(),
            });
        }
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let n_gallery = ((members.len() as f64 * config.split_fraction).round() as usize).clamp(1, members.len() - 1);
        let queries = shuffled.split_off(n_gallery);
        splits.push(((*class, *state), shuffled, queries));
    }

    // The gallery threshold only matters for the fallback path; the
    // conditioned decision uses `config.tau` directly.
    let gallery_tau = if config.tau > 0.0 { config.tau } else { f64::MIN_POSITIVE };
    let mut gallery = Gallery::new(GalleryConfig::new(dim, Metric::Euclidean, gallery_tau, usize::MAX)?)?;
    for (_, members, _) in &splits {
        for r in members {
            gallery.insert(
                NewRecord::new(r.class.clone(), r.embedding.clone()).with_aux(STATE_VARIABLE, r.state.clone()),
            )?;
        }
    }
    let model = fit_condition_model(&gallery, STATE_VARIABLE, ConditionMode::Supervised)?;

    let mut class_sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for ((class, _), members, _) in &splits {
        let entry = class_sums.entry(class).or_insert_with(|| (vec![0.0; dim], 0));
        for r in members {
            for (s, v) in entry.0.iter_mut().zip(r.embedding.iter()) {
                *s += v;
            }
            entry.1 += 1;
        }
    }
    let class_centroids: Vec<(&str, Vec<f64>)> =
        class_sums.into_iter().map(|(c, (sum, n))| (c, sum.into_iter().map(|v| v / n as f64).collect())).collect();

    let mut outcomes = Vec::new();
    let mut per_cell = Vec::new();
    for ((class, state), members, queries) in &splits {
        let mut cell = CellCounts {
            class: class.to_string(),
            state: state.to_string(),
            gallery: members.len(),
            queries: queries.len(),
            correct_unconditioned: 0,
            correct_conditioned: 0,
            unknown_unconditioned: 0,
            unknown_conditioned: 0,
        };
        for q in queries {
            let (unconditioned, unconditioned_distance) = match config.baseline {
                Baseline::ClassCentroid => {
                    let (best, d) = class_centroids
                        .iter()
                        .map(|(c, mu)| (*c, squared_euclidean(&q.embedding, mu).sqrt()))
                        .fold(None::<(&str, f64)>, |acc, (c, d)| match acc {
                            Some((_, bd)) if bd <= d => acc,
                            _ => Some((c, d)),
                        })
                        .expect("at least one class");
                    (if d <= config.tau { Label::Known(best.to_string()) } else { Label::Unknown }, d)
                }
                Baseline::NearestRecord => {
                    let r = gallery.query_open_set(&q.embedding, false)?;
                    let label = if r.distance <= config.tau { r.label } else { Label::Unknown };
                    (label, r.distance)
                }
            };
            let declared = BTreeMap::from([(STATE_VARIABLE.to_string(), q.state.clone())]);
            let cr = conditioned_query(&gallery, &model, &q.embedding, &declared, config.tau)?;

            if unconditioned.as_known() == Some(*class) {
                cell.correct_unconditioned += 1;
            }
            if unconditioned.is_unknown() {
                cell.unknown_unconditioned += 1;
            }
            if cr.label.as_known() == Some(*class) {
                cell.correct_conditioned += 1;
            }
            if cr.label.is_unknown() {
                cell.unknown_conditioned += 1;
            }
            outcomes.push(QueryOutcome {
                class: q.class.clone(),
                state: q.state.clone(),
                unconditioned,
                unconditioned_distance,
                conditioned: cr.label,
                conditioned_distance: cr.distance,
            });
        }
        per_cell.push(cell);
    }

    let total: usize = per_cell.iter().map(|c| c.queries).sum();
    let rate = |f: fn(&CellCounts) -> usize| per_cell.iter().map(f).sum::<usize>() as f64 / total as f64;
    let report = BenchReport {
        acc_unconditioned: rate(|c| c.correct_unconditioned),
        acc_conditioned: rate(|c| c.correct_conditioned),
        unknown_rate_unconditioned: rate(|c| c.unknown_unconditioned),
        unknown_rate_conditioned: rate(|c| c.unknown_conditioned),
        queries: total,
        per_cell,
    };
    Ok((report, outcomes))
}
