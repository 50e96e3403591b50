//! Datasets: IDX files, synthetic Gaussian blobs, and seeded mini-batching.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::polytope::make_simplex;
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

// ChaCha stream ids; every random draw in the crate comes from
// (seed, stream) so independent consumers never share a sequence.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_BLOBS: u64 = 2;
const STREAM_EPOCH_BASE: u64 = 1 << 32;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inputs and their class labels, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledBatch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Label {
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let inputs = self.inputs.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(inputs, labels, self.num_classes)
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Writes `label,x0,x1,...` rows with a header line.
    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain((0..self.input_dim()).map(|i| format!("x{i}")))
            .collect();
        let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
            writeln!(out, "{}", header.join(","))?;
            for (row, y) in self.inputs.outer_iter().zip(&self.labels) {
                write!(out, "{y}")?;
                for v in row {
                    write!(out, ",{v:?}")?;
                }
                writeln!(out)?;
            }
            out.flush()
        };
        write(&mut out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdxOptions {
    /// EMNIST stores each image transposed relative to MNIST.
    pub emnist: bool,
    /// Keep only the first `limit` samples.
    pub limit: Option<usize>,
}

/// Loads an MNIST-style image/label IDX pair. Pixels are scaled to `[0, 1]`;
/// `num_classes` is one more than the largest label.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledBatch> {
    load_idx_with(images, labels, IdxOptions::default())
}

pub fn load_idx_with(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    opts: IdxOptions,
) -> Result<LabeledBatch> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let image_bytes = fs::read(images).map_err(|e| Error::io(images, e))?;
    let label_bytes = fs::read(labels).map_err(|e| Error::io(labels, e))?;

    let img = IdxHeader::parse(images, &image_bytes, IMAGE_MAGIC, 3)?;
    let lab = IdxHeader::parse(labels, &label_bytes, LABEL_MAGIC, 1)?;
    if img.dims[0] != lab.dims[0] {
        return Err(Error::CountMismatch {
            images: img.dims[0],
            labels: lab.dims[0],
        });
    }
    let (rows, cols) = (img.dims[1], img.dims[2]);
    let pixels = rows * cols;
    let count = opts.limit.map_or(img.dims[0], |l| l.min(img.dims[0]));
    if count == 0 {
        return Err(Error::EmptyDataset);
    }

    let payload = &image_bytes[img.offset..];
    let mut inputs = Array2::<f64>::zeros((count, pixels));
    for (n, mut row) in inputs.outer_iter_mut().enumerate() {
        let raw = &payload[n * pixels..(n + 1) * pixels];
        if opts.emnist {
            for r in 0..rows {
                for c in 0..cols {
                    row[c * rows + r] = f64::from(raw[r * cols + c]) / 255.0;
                }
            }
        } else {
            for (x, &b) in row.iter_mut().zip(raw) {
                *x = f64::from(b) / 255.0;
            }
        }
    }
    let label_vec: Vec<usize> = label_bytes[lab.offset..lab.offset + count]
        .iter()
        .map(|&b| usize::from(b))
        .collect();
    let num_classes = label_vec.iter().max().map_or(0, |&m| m + 1);
    LabeledBatch::new(inputs, label_vec, num_classes)
}

struct IdxHeader {
    dims: Vec<usize>,
    offset: usize,
}

impl IdxHeader {
    fn parse(path: &Path, bytes: &[u8], magic: u32, ndims: usize) -> Result<Self> {
        let truncated = |detail: String| Error::Truncated {
            path: path.to_path_buf(),
            detail,
        };
        let word = |i: usize| -> Result<u32> {
            bytes
                .get(4 * i..4 * i + 4)
                .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| truncated(format!("header ends before word {i}")))
        };
        let found = word(0)?;
        if found != magic {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: magic,
                found,
            });
        }
        let dims = (1..=ndims)
            .map(|i| word(i).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = 4 * (ndims + 1);
        let need = dims.iter().product::<usize>();
        let have = bytes.len() - offset;
        if have < need {
            return Err(truncated(format!("payload has {have} bytes, header promises {need}")));
        }
        Ok(Self { dims, offset })
    }
}

/// Writes `data` as an IDX pair with `rows x cols` images. Inputs are
/// quantized to bytes with `round(x * 255)` after clamping to `[0, 1]`.
pub fn write_idx(
    data: &LabeledBatch,
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if rows * cols != data.input_dim() {
        return Err(Error::Dimension(format!(
            "{rows}x{cols} images do not match input_dim {}",
            data.input_dim()
        )));
    }
    if let Some(&label) = data.labels.iter().find(|&&y| y > 255) {
        return Err(Error::Label { label, classes: 256 });
    }
    let n = data.len() as u32;
    let mut img = Vec::with_capacity(16 + data.inputs.len());
    for w in [IMAGE_MAGIC, n, rows as u32, cols as u32] {
        img.extend_from_slice(&w.to_be_bytes());
    }
    img.extend(data.inputs.iter().map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + data.len());
    for w in [LABEL_MAGIC, n] {
        lab.extend_from_slice(&w.to_be_bytes());
    }
    lab.extend(data.labels.iter().map(|&y| y as u8));

    let (images, labels) = (images.as_ref(), labels.as_ref());
    fs::write(images, img).map_err(|e| Error::io(images, e))?;
    fs::write(labels, lab).map_err(|e| Error::io(labels, e))
}

/// `K` isotropic Gaussian clusters centred at `separation * v_c`, where `v_c`
/// are regular-simplex directions zero-padded or truncated to `dim`.
pub fn make_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    separation: f64,
    seed: u64,
) -> Result<LabeledBatch> {
    if dim < 1 {
        return Err(Error::Dimension("blob dimension must be at least 1".into()));
    }
    if per_class == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(spread > 0.0 && separation > 0.0) {
        return Err(Error::Config(format!(
            "spread ({spread}) and separation ({separation}) must be positive"
        )));
    }
    let dirs = make_simplex(classes)?;
    let noise = Normal::new(0.0, spread).expect("positive spread");
    let mut rng = rng_for(seed, STREAM_BLOBS);

    let n = classes * per_class;
    let mut inputs = Array2::<f64>::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let dir = dirs.row(c);
        for i in 0..per_class {
            let mut row = inputs.row_mut(c * per_class + i);
            for (j, x) in row.iter_mut().enumerate() {
                let mean = if j < dir.len() { separation * dir[j] } else { 0.0 };
                *x = mean + noise.sample(&mut rng);
            }
            labels.push(c);
        }
    }
    LabeledBatch::new(inputs, labels, classes)
}

/// Deterministic permutation of `0..n` for a given seed and epoch.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, STREAM_EPOCH_BASE + epoch));
    idx
}

/// Shuffled mini-batches for one epoch. The last batch may be short.
pub fn batches(data: &LabeledBatch, batch_size: usize, seed: u64, epoch: u64) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    Ok(Batches {
        data,
        order: epoch_permutation(data.len(), seed, epoch),
        batch_size,
        pos: 0,
    })
}

pub struct Batches<'a> {
    data: &'a LabeledBatch,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = LabeledBatch;

    fn next(&mut self) -> Option<LabeledBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self
            .data
            .select(&self.order[self.pos..end])
            .expect("indices come from the dataset");
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn tiny(n: usize) -> LabeledBatch {
        let inputs = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        LabeledBatch::new(inputs, (0..n).map(|i| i % 3).collect(), 3).unwrap()
    }

    #[test]
    fn batch_sizes_keep_short_tail() {
        let data = tiny(10);
        let sizes: Vec<usize> = batches(&data, 4, 0, 0).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn batches_cover_every_index_once() {
        let data = tiny(37);
        let mut seen: Vec<f64> = batches(&data, 5, 9, 3)
            .unwrap()
            .flat_map(|b| b.inputs.column(0).to_vec())
            .collect();
        seen.sort_by(f64::total_cmp);
        let want: Vec<f64> = (0..37).map(|i| (2 * i) as f64).collect();
        assert_eq!(seen, want);

        let mut labels: Vec<usize> = batches(&data, 5, 9, 3).unwrap().flat_map(|b| b.labels).collect();
        let mut orig = data.labels.clone();
        labels.sort();
        orig.sort();
        assert_eq!(labels, orig);
    }

    #[test]
    fn epochs_shuffle_differently() {
        let a = epoch_permutation(100, 42, 0);
        let b = epoch_permutation(100, 42, 1);
        assert_ne!(a, b);
        assert_eq!(a, epoch_permutation(100, 42, 0));
        assert!(batches(&tiny(3), 0, 0, 0).is_err());
    }

    #[test]
    fn blobs_are_deterministic_and_separable() {
        let a = make_blobs(2, 5, 500, 1.0, 6.0, 7).unwrap();
        assert_eq!(a, make_blobs(2, 5, 500, 1.0, 6.0, 7).unwrap());
        assert_ne!(a, make_blobs(2, 5, 500, 1.0, 6.0, 8).unwrap());

        // Nearest class mean (LDA with isotropic covariance).
        let mean = |c: usize| -> Array1<f64> {
            let idx: Vec<usize> = (0..a.len()).filter(|&i| a.labels[i] == c).collect();
            a.inputs.select(Axis(0), &idx).mean_axis(Axis(0)).unwrap()
        };
        let (m0, m1) = (mean(0), mean(1));
        let w = &m1 - &m0;
        let b = -w.dot(&((&m0 + &m1) / 2.0));
        let correct = a
            .inputs
            .outer_iter()
            .zip(&a.labels)
            .filter(|(x, &y)| ((w.dot(x) + b) > 0.0) == (y == 1))
            .count();
        assert!(correct as f64 / a.len() as f64 >= 0.99);
    }

    #[test]
    fn blob_errors() {
        assert!(matches!(make_blobs(3, 2, 0, 1.0, 6.0, 0), Err(Error::EmptyDataset)));
        assert!(matches!(make_blobs(3, 0, 5, 1.0, 6.0, 0), Err(Error::Dimension(_))));
        assert!(matches!(make_blobs(1, 2, 5, 1.0, 6.0, 0), Err(Error::InvalidClassCount(1))));
    }

    #[test]
    fn idx_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        fs::write(&img, [0u8; 16]).unwrap();
        fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 0]).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::BadMagic { found: 0, .. })));

        let mut bytes = Vec::new();
        for w in [IMAGE_MAGIC, 2, 2, 2] {
            bytes.extend_from_slice(&w.to_be_bytes());
        }
        bytes.extend_from_slice(&[1, 2, 3]);
        fs::write(&img, &bytes).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::Truncated { .. })));
        fs::write(&img, &bytes[..10]).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::Truncated { .. })));
    }

    #[test]
    fn idx_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let data = LabeledBatch::new(Array2::zeros((3, 4)), vec![0, 1, 2], 3).unwrap();
        let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&data, &img, &lab, 2, 2).unwrap();
        let short = data.take(2).unwrap();
        write_idx(&short, dir.path().join("i2"), &lab, 2, 2).unwrap();
        assert!(matches!(
            load_idx(&img, &lab),
            Err(Error::CountMismatch { images: 3, labels: 2 })
        ));
    }

    #[test]
    fn emnist_transpose() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = Array2::from_shape_vec((1, 6), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap() / 255.0;
        let data = LabeledBatch::new(inputs, vec![0], 1).unwrap();
        let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&data, &img, &lab, 2, 3).unwrap();
        let plain = load_idx(&img, &lab).unwrap();
        assert_eq!(plain.inputs, data.inputs);
        let t = load_idx_with(&img, &lab, IdxOptions { emnist: true, limit: None }).unwrap();
        // raw 2x3 [[0,1,2],[3,4,5]] read as its 3x2 transpose
        let want: Vec<f64> = [0.0, 3.0, 1.0, 4.0, 2.0, 5.0].iter().map(|v| v / 255.0).collect();
        assert_eq!(t.inputs.row(0).to_vec(), want);
    }

    #[test]
    fn csv_export_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blobs.csv");
        let data = make_blobs(3, 4, 5, 1.0, 6.0, 1).unwrap();
        data.export_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "label,x0,x1,x2,x3");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 15);
        let first: Vec<f64> = rows[0].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(first, data.inputs.row(0).to_vec());
    }
}
