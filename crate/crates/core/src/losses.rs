//! Pair, triplet and quadruplet hinge losses on embeddings.
//!
//! Label convention for the contrastive loss: [`PairLabel::Similar`] is
//! `y = 1`, so `L = y d^2 + (1 - y) max(0, m - d)^2` pulls similar pairs
//! together and pushes dissimilar pairs out to the margin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{distance_slices, Embedding, Metric};

/// Hinge margin(s). `secondary` is only used by the quadruplet loss and must
/// not exceed `primary`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub primary: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<f64>,
}

impl Margin {
    pub fn new(m: f64) -> Result<Self> {
        let margin = Self { primary: m, secondary: None };
        margin.validate()?;
        Ok(margin)
    }

    pub fn quadruplet(m: f64, m2: f64) -> Result<Self> {
        let margin = Self { primary: m, secondary: Some(m2) };
        margin.validate()?;
        Ok(margin)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.primary.is_finite() && self.primary >= 0.0) {
            return Err(Error::InvalidMargins(format!("margin must be >= 0, got {}", self.primary)));
        }
        if let Some(m2) = self.secondary {
            if !(m2.is_finite() && m2 >= 0.0) {
                return Err(Error::InvalidMargins(format!("secondary margin must be >= 0, got {m2}")));
            }
            if m2 > self.primary {
                return Err(Error::InvalidMargins(format!(
                    "secondary margin {m2} exceeds primary margin {}",
                    self.primary
                )));
            }
        }
        Ok(())
    }

    fn secondary_required(&self) -> Result<f64> {
        self.validate()?;
        self.secondary.ok_or_else(|| Error::InvalidMargins("quadruplet loss needs a secondary margin".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    /// `y = 1`
    Similar,
    /// `y = 0`
    Dissimilar,
}

impl PairLabel {
    pub fn from_binary(y: u8) -> Option<Self> {
        match y {
            1 => Some(PairLabel::Similar),
            0 => Some(PairLabel::Dissimilar),
            _ => None,
        }
    }

    pub fn y(self) -> f64 {
        match self {
            PairLabel::Similar => 1.0,
            PairLabel::Dissimilar => 0.0,
        }
    }
}

fn check_distance(d: f64) -> Result<()> {
    if d >= 0.0 {
        Ok(())
    } else {
        Err(Error::NegativeDistance(d))
    }
}

/// Contrastive loss for a pair at distance `d`.
pub fn contrastive_from_distance(d: f64, label: PairLabel, margin: &Margin) -> Result<f64> {
    check_distance(d)?;
    margin.validate()?;
    Ok(match label {
        PairLabel::Similar => d * d,
        PairLabel::Dissimilar => (margin.primary - d).max(0.0).powi(2),
    })
}

pub fn contrastive_loss(
    x_i: &Embedding,
    x_j: &Embedding,
    label: PairLabel,
    margin: &Margin,
    metric: &Metric,
) -> Result<f64> {
    let d = distance_slices(metric, x_i, x_j)?;
    contrastive_from_distance(d, label, margin)
}

/// `max(0, m + d_ap - d_an)`
pub fn triplet_loss(d_ap: f64, d_an: f64, margin: &Margin) -> Result<f64> {
    check_distance(d_ap)?;
    check_distance(d_an)?;
    margin.validate()?;
    Ok((margin.primary + d_ap - d_an).max(0.0))
}

/// Sum of [`triplet_loss`] over `(d_ap, d_an)` pairs.
pub fn triplet_loss_batch(distances: &[(f64, f64)], margin: &Margin) -> Result<f64> {
    distances.iter().map(|&(ap, an)| triplet_loss(ap, an, margin)).sum()
}

/// `max(0, m + d_ap - d_an) + max(0, m2 + d_ap - d_n1n2)`, where `d_n1n2` is
/// the distance between two negatives of different classes.
pub fn quadruplet_loss(d_ap: f64, d_an: f64, d_n1n2: f64, margin: &Margin) -> Result<f64> {
    let m2 = margin.secondary_required()?;
    check_distance(d_ap)?;
    check_distance(d_an)?;
    check_distance(d_n1n2)?;
    Ok((margin.primary + d_ap - d_an).max(0.0) + (m2 + d_ap - d_n1n2).max(0.0))
}

/// One loss term together with the embeddings it depends on.
#[derive(Debug, Clone, Copy)]
pub enum LossTuple<'a> {
    Contrastive { x_i: &'a [f64], x_j: &'a [f64], label: PairLabel, margin: Margin },
    Triplet { anchor: &'a [f64], positive: &'a [f64], negative: &'a [f64], margin: Margin },
    Quadruplet { anchor: &'a [f64], positive: &'a [f64], negative1: &'a [f64], negative2: &'a [f64], margin: Margin },
}

impl LossTuple<'_> {
    /// The embeddings in argument order; gradients come back in the same order.
    pub fn inputs(&self) -> Vec<&[f64]> {
        match *self {
            LossTuple::Contrastive { x_i, x_j, .. } => vec![x_i, x_j],
            LossTuple::Triplet { anchor, positive, negative, .. } => vec![anchor, positive, negative],
            LossTuple::Quadruplet { anchor, positive, negative1, negative2, .. } => {
                vec![anchor, positive, negative1, negative2]
            }
        }
    }

    pub fn value(&self, metric: &Metric) -> Result<f64> {
        self.check_dims()?;
        match *self {
            LossTuple::Contrastive { x_i, x_j, label, margin } => {
                contrastive_from_distance(distance_slices(metric, x_i, x_j)?, label, &margin)
            }
            LossTuple::Triplet { anchor, positive, negative, margin } => triplet_loss(
                distance_slices(metric, anchor, positive)?,
                distance_slices(metric, anchor, negative)?,
                &margin,
            ),
            LossTuple::Quadruplet { anchor, positive, negative1, negative2, margin } => quadruplet_loss(
                distance_slices(metric, anchor, positive)?,
                distance_slices(metric, anchor, negative1)?,
                distance_slices(metric, negative1, negative2)?,
                &margin,
            ),
        }
    }

    fn check_dims(&self) -> Result<()> {
        let inputs = self.inputs();
        let dim = inputs[0].len();
        for x in &inputs[1..] {
            if x.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: x.len() });
            }
        }
        Ok(())
    }
}

/// Distance and its gradient with respect to the first argument. The
/// gradient with respect to the second argument is the negation.
fn distance_with_grad(metric: &Metric, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    match metric {
        Metric::SquaredEuclidean => {
            let d = diff.iter().map(|v| v * v).sum();
            Ok((d, diff.iter().map(|v| 2.0 * v).collect()))
        }
        Metric::Euclidean => {
            let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            // Subgradient zero at coincident points.
            let g = if d == 0.0 { vec![0.0; diff.len()] } else { diff.iter().map(|v| v / d).collect() };
            Ok((d, g))
        }
        other => Err(Error::UnsupportedMetric(other.to_string())),
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Analytic gradient of the loss with respect to each input embedding, for
/// the euclidean and squared-euclidean metrics. Inactive hinges give zero
/// vectors.
pub fn loss_grad(tuple: &LossTuple<'_>, metric: &Metric) -> Result<Vec<Vec<f64>>> {
    tuple.check_dims()?;
    let dim = tuple.inputs()[0].len();
    let mut grads = vec![vec![0.0; dim]; tuple.inputs().len()];
    match *tuple {
        LossTuple::Contrastive { x_i, x_j, label, margin } => {
            margin.validate()?;
            let (d, g) = distance_with_grad(metric, x_i, x_j)?;
            let dl_dd = match label {
                PairLabel::Similar => 2.0 * d,
                PairLabel::Dissimilar if d < margin.primary => -2.0 * (margin.primary - d),
                PairLabel::Dissimilar => 0.0,
            };
            axpy(&mut grads[0], dl_dd, &g);
            axpy(&mut grads[1], -dl_dd, &g);
        }
        LossTuple::Triplet { anchor, positive, negative, margin } => {
            margin.validate()?;
            let (d_ap, g_ap) = distance_with_grad(metric, anchor, positive)?;
            let (d_an, g_an) = distance_with_grad(metric, anchor, negative)?;
            if margin.primary + d_ap - d_an > 0.0 {
                axpy(&mut grads[0], 1.0, &g_ap);
                axpy(&mut grads[1], -1.0, &g_ap);
                axpy(&mut grads[0], -1.0, &g_an);
                axpy(&mut grads[2], 1.0, &g_an);
            }
        }
        LossTuple::Quadruplet { anchor, positive, negative1, negative2, margin } => {
            let m2 = margin.secondary_required()?;
            let (d_ap, g_ap) = distance_with_grad(metric, anchor, positive)?;
            let (d_an, g_an) = distance_with_grad(metric, anchor, negative1)?;
            let (d_nn, g_nn) = distance_with_grad(metric, negative1, negative2)?;
            if margin.primary + d_ap - d_an > 0.0 {
                axpy(&mut grads[0], 1.0, &g_ap);
                axpy(&mut grads[1], -1.0, &g_ap);
                axpy(&mut grads[0], -1.0, &g_an);
                axpy(&mut grads[2], 1.0, &g_an);
            }
            if m2 + d_ap - d_nn > 0.0 {
                axpy(&mut grads[0], 1.0, &g_ap);
                axpy(&mut grads[1], -1.0, &g_ap);
                axpy(&mut grads[2], -1.0, &g_nn);
                axpy(&mut grads[3], 1.0, &g_nn);
            }
        }
    }
    Ok(grads)
}
