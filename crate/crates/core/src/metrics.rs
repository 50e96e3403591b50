//! Angular compactness and separation of learned features.
//!
//! All statistics are angles on the hypersphere, so they are unchanged by
//! rescaling individual features. Zero-norm features carry no direction;
//! they are counted in [`GeometryReport::degenerate`] and skipped.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::polytope::{angle_between, ClassifierWeights};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGeometry {
    pub class: usize,
    /// Samples of this class with a usable (non-zero) feature.
    pub count: usize,
    /// Mean angle between the class's features and its classifier row.
    /// `None` when the class has no samples.
    pub mean_angle_to_weight: Option<f64>,
    pub angle_std: Option<f64>,
    /// Normalized mean of the unit features.
    pub mean_direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub per_class: Vec<ClassGeometry>,
    /// Smallest angle between the mean directions of two classes; `pi`
    /// when fewer than two classes have a mean direction.
    pub min_pairwise_mean_angle: f64,
    pub min_pairwise_defined: bool,
    pub accuracy: f64,
    pub phi: Option<f64>,
    pub degenerate: usize,
}

impl GeometryReport {
    /// Largest per-class mean angle to the class weight, over present classes.
    pub fn max_mean_angle_to_weight(&self) -> Option<f64> {
        self.per_class
            .iter()
            .filter_map(|c| c.mean_angle_to_weight)
            .reduce(f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Fraction of positions where `predictions` and `labels` agree.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn geometry_report(
    w: &ClassifierWeights,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    predictions: &[usize],
) -> Result<GeometryReport> {
    geometry_report_rows(w.rows().view(), Some(w.phi()), features, labels, predictions)
}

/// [`geometry_report`] for arbitrary classifier rows (e.g. a trainable head).
pub fn geometry_report_rows(
    rows: ArrayView2<'_, f64>,
    phi: Option<f64>,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    predictions: &[usize],
) -> Result<GeometryReport> {
    let (k, d) = rows.dim();
    if features.ncols() != d {
        return Err(Error::Dimension(format!(
            "features have {} columns, classifier has {d}",
            features.ncols()
        )));
    }
    if features.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Label { label, classes: k });
    }
    let accuracy = accuracy(predictions, labels)?;

    let mut angles: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut sums: Vec<Array1<f64>> = vec![Array1::zeros(d); k];
    let mut degenerate = 0;
    for (f, &y) in features.outer_iter().zip(labels) {
        let norm = f.dot(&f).sqrt();
        if norm.is_nan() || norm <= 0.0 {
            degenerate += 1;
            continue;
        }
        angles[y].push(angle_between(f, rows.row(y)));
        sums[y].scaled_add(1.0 / norm, &f);
    }

    let per_class: Vec<ClassGeometry> = (0..k)
        .map(|c| {
            let a = &angles[c];
            if a.is_empty() {
                return ClassGeometry {
                    class: c,
                    count: 0,
                    mean_angle_to_weight: None,
                    angle_std: None,
                    mean_direction: None,
                };
            }
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let s = &sums[c];
            let len = s.dot(s).sqrt();
            ClassGeometry {
                class: c,
                count: a.len(),
                mean_angle_to_weight: Some(mean),
                angle_std: Some(var.sqrt()),
                mean_direction: (len > 0.0).then(|| (s / len).to_vec()),
            }
        })
        .collect();

    let dirs: Vec<ArrayView1<'_, f64>> = per_class
        .iter()
        .filter_map(|c| c.mean_direction.as_deref().map(ArrayView1::from))
        .collect();
    let mut min_angle = f64::INFINITY;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            min_angle = min_angle.min(angle_between(dirs[i], dirs[j]));
        }
    }
    let defined = min_angle.is_finite();

    Ok(GeometryReport {
        per_class,
        min_pairwise_mean_angle: if defined { min_angle } else { std::f64::consts::PI },
        min_pairwise_defined: defined,
        accuracy,
        phi,
        degenerate,
    })
}

/// Writes features as `label,f0,...,f{d-1}` for scatter-plot matrices.
/// With `normalized`, each non-zero row is scaled to unit length first.
pub fn export_scatter(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    normalized: bool,
    path: impl AsRef<Path>,
) -> Result<()> {
    if features.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if features.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        write!(out, "label")?;
        for i in 0..features.ncols() {
            write!(out, ",f{i}")?;
        }
        writeln!(out)?;
        for (f, y) in features.outer_iter().zip(labels) {
            let scale = if normalized {
                let n = f.dot(&f).sqrt();
                if n > 0.0 {
                    1.0 / n
                } else {
                    1.0
                }
            } else {
                1.0
            };
            write!(out, "{y}")?;
            for v in f {
                write!(out, ",{:?}", v * scale)?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}
