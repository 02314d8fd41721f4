//! PCA projection of the latent space for inspection and plotting.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditioning::check_variable;
use crate::error::{Error, Result};
use crate::gallery::Gallery;
use crate::linalg::{symmetric_eigen, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub mean: Vec<f64>,
    /// Orthonormal principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the sample covariance for each component.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

impl ProjectionModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }
}

/// Fits PCA with covariance divisor `n - 1`. Each component's largest
/// magnitude entry is made positive (first such entry on ties).
pub fn fit_pca<P: AsRef<[f64]>>(points: &[P], n_components: usize) -> Result<ProjectionModel> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: points.len() });
    }
    let dim = points[0].as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: p.as_ref().len() });
    }
    let max = dim.min(points.len() - 1);
    if n_components == 0 || n_components > max {
        return Err(Error::TooManyComponents { requested: n_components, max });
    }

    let n = points.len() as f64;
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = SymMatrix::zeros(dim);
    for p in points {
        let c: Vec<f64> = p.as_ref().iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..dim {
            for j in i..dim {
                cov.set(i, j, cov.get(i, j) + c[i] * c[j]);
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov.get(i, j) / (n - 1.0);
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }

    let eig = symmetric_eigen(&cov);
    let components = eig.vectors.into_iter().take(n_components).map(fix_sign).collect();
    let explained_variance = eig.values.iter().take(n_components).map(|v| v.max(0.0)).collect();
    Ok(ProjectionModel { mean, components, explained_variance, total_variance: cov.trace() })
}

fn fix_sign(mut u: Vec<f64>) -> Vec<f64> {
    let mut pivot = 0;
    for (i, v) in u.iter().enumerate() {
        if v.abs() > u[pivot].abs() {
            pivot = i;
        }
    }
    if u[pivot] < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    u
}

pub fn project<P: AsRef<[f64]>>(model: &ProjectionModel, points: &[P]) -> Result<Vec<Vec<f64>>> {
    points
        .iter()
        .map(|p| {
            let p = p.as_ref();
            if p.len() != model.dim() {
                return Err(Error::DimensionMismatch { expected: model.dim(), found: p.len() });
            }
            Ok(model
                .components
                .iter()
                .map(|u| u.iter().zip(p).zip(&model.mean).map(|((u, x), m)| u * (x - m)).sum())
                .collect())
        })
        .collect()
}

/// Maps projected coordinates back into the original space.
pub fn reconstruct(model: &ProjectionModel, coords: &[f64]) -> Result<Vec<f64>> {
    if coords.len() != model.n_components() {
        return Err(Error::DimensionMismatch { expected: model.n_components(), found: coords.len() });
    }
    let mut x = model.mean.clone();
    for (c, u) in coords.iter().zip(&model.components) {
        for (xi, ui) in x.iter_mut().zip(u) {
            *xi += c * ui;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColorBy {
    Class,
    Variable(String),
}

impl ColorBy {
    pub fn parse(s: &str) -> Self {
        if s == "class" {
            ColorBy::Class
        } else {
            ColorBy::Variable(s.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub coords: Vec<f64>,
    pub class: String,
    pub state: String,
    pub id: u64,
}

/// One row per live record: coordinates, class, colouring state and id.
/// Records lacking the colouring variable get state `NA`.
pub fn export_projection(gallery: &Gallery, model: &ProjectionModel, color_by: &ColorBy) -> Result<Vec<ProjectionRow>> {
    if model.dim() != gallery.config().dim {
        return Err(Error::DimensionMismatch { expected: gallery.config().dim, found: model.dim() });
    }
    if let ColorBy::Variable(v) = color_by {
        check_variable(gallery, v)?;
    }
    gallery
        .records()
        .map(|r| {
            let coords = project(model, &[&r.embedding])?.remove(0);
            let state = match color_by {
                ColorBy::Class => r.class_label.clone(),
                ColorBy::Variable(v) => r.aux.get(v).cloned().unwrap_or_else(|| "NA".to_string()),
            };
            Ok(ProjectionRow { coords, class: r.class_label.clone(), state, id: r.id })
        })
        .collect()
}

/// CSV with header `c1,...,cn,class,state,id`.
pub fn write_projection_csv<W: Write>(rows: &[ProjectionRow], n_components: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=n_components).map(|i| format!("c{i}")).collect();
    header.extend(["class", "state", "id"].map(String::from));
    w.write_record(&header)?;
    for row in rows {
        let mut rec: Vec<String> = row.coords.iter().map(|c| format!("{c}")).collect();
        rec.push(row.class.clone());
        rec.push(row.state.clone());
        rec.push(row.id.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_projection_csv(rows: &[ProjectionRow], n_components: usize, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_projection_csv(rows, n_components, &mut buf)?;
    crate::jsonl::write_atomic(path, &String::from_utf8(buf).expect("csv output is utf-8"))
}
