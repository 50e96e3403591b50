//! PReLU multilayer perceptron with a fixed (or, for baselines, trainable)
//! classifier head, trained by Adam with hand-written backpropagation.
//!
//! Layer weights are stored row-major as `out x in`. Every hidden layer,
//! including the last one that produces the embedding, is affine followed by
//! a per-unit PReLU.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{batches, rng_for, LabeledBatch, STREAM_INIT};
use crate::losses::{evaluate_rows, LossKind, LossResult};
use crate::polytope::ClassifierWeights;
use crate::{Error, Result};

pub const DEFAULT_LR: f64 = 0.0005;
pub const DEFAULT_BATCH_SIZE: usize = 512;
pub const PRELU_INIT: f64 = 0.25;
/// Initial slope of the embedding layer's PReLU; the layer starts out linear so
/// features can reach vertices with negative coordinates.
pub const EMBED_PRELU_INIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub prelu: Array1<f64>,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    /// Polytope vertices; never touched by the optimizer.
    Fixed(ClassifierWeights),
    /// Learnable `K x d` rows, the baseline configuration.
    Trainable(Array2<f64>),
}

impl Classifier {
    pub fn rows(&self) -> ArrayView2<'_, f64> {
        match self {
            Classifier::Fixed(w) => w.rows().view(),
            Classifier::Trainable(w) => w.view(),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Classifier::Fixed(_))
    }
}

#[derive(Debug, Clone)]
pub enum ClassifierSpec {
    Fixed(ClassifierWeights),
    Trainable { classes: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input_dim: usize,
    layers: Vec<Layer>,
    classifier: Classifier,
    // bumped by every optimizer step; lets backward reject stale caches
    generation: u64,
}

/// He-initialized model: weights `N(0, 2 / fan_in)`, zero biases, PReLU
/// slopes 0.25 ([`EMBED_PRELU_INIT`] on the embedding layer). The last hidden
/// width must equal the classifier dimension.
pub fn init_model(
    input_dim: usize,
    hidden_widths: &[usize],
    classifier: ClassifierSpec,
    seed: u64,
) -> Result<MlpModel> {
    if input_dim == 0 || hidden_widths.is_empty() || hidden_widths.contains(&0) {
        return Err(Error::Dimension(format!(
            "input_dim {input_dim} and hidden widths {hidden_widths:?} must be non-empty and positive"
        )));
    }
    let embed = *hidden_widths.last().unwrap();
    let cls_dim = match &classifier {
        ClassifierSpec::Fixed(w) => w.dim(),
        ClassifierSpec::Trainable { dim, classes } => {
            if *classes < 2 {
                return Err(Error::InvalidClassCount(*classes));
            }
            *dim
        }
    };
    if embed != cls_dim {
        return Err(Error::Dimension(format!(
            "last hidden width {embed} differs from classifier dimension {cls_dim}"
        )));
    }

    let mut rng = rng_for(seed, STREAM_INIT);
    let mut he = |rows: usize, cols: usize| {
        let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("finite std");
        Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
    };

    let mut layers = Vec::with_capacity(hidden_widths.len());
    let mut fan_in = input_dim;
    for (i, &width) in hidden_widths.iter().enumerate() {
        let slope = if i + 1 == hidden_widths.len() { EMBED_PRELU_INIT } else { PRELU_INIT };
        layers.push(Layer {
            weights: he(width, fan_in),
            bias: Array1::zeros(width),
            prelu: Array1::from_elem(width, slope),
        });
        fan_in = width;
    }
    let classifier = match classifier {
        ClassifierSpec::Fixed(w) => Classifier::Fixed(w),
        ClassifierSpec::Trainable { classes, dim } => Classifier::Trainable(he(classes, dim)),
    };
    Ok(MlpModel {
        input_dim,
        layers,
        classifier,
        generation: 0,
    })
}

/// Layer inputs and pre-activations saved by [`MlpModel::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    generation: u64,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub features: Array2<f64>,
    /// Raw inner products `features . rows^T`.
    pub logits: Array2<f64>,
    pub cache: ForwardCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub prelu: Array1<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &Layer) -> Self {
        Self {
            weights: Array2::zeros(layer.weights.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
            prelu: Array1::zeros(layer.prelu.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// Present only for a trainable head.
    pub classifier: Option<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model.layers.iter().map(LayerGrad::zeros_like).collect(),
            classifier: match &model.classifier {
                Classifier::Trainable(w) => Some(Array2::zeros(w.raw_dim())),
                Classifier::Fixed(_) => None,
            },
        }
    }

    /// All entries in the same order as [`MlpModel::param_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend(g.weights.iter());
            out.extend(g.bias.iter());
            out.extend(g.prelu.iter());
        }
        if let Some(c) = &self.classifier {
            out.extend(c.iter());
        }
        out
    }
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.rows().nrows()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Forward> {
        if x.ncols() != self.input_dim {
            return Err(Error::Dimension(format!(
                "batch has {} columns, model expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = x.to_owned();
        for layer in &self.layers {
            let z = act.dot(&layer.weights.t()) + &layer.bias;
            let mut a = z.clone();
            for mut row in a.outer_iter_mut() {
                for (v, &s) in row.iter_mut().zip(&layer.prelu) {
                    if *v <= 0.0 {
                        *v *= s;
                    }
                }
            }
            inputs.push(act);
            pre.push(z);
            act = a;
        }
        let logits = act.dot(&self.classifier.rows().t());
        Ok(Forward {
            features: act,
            logits,
            cache: ForwardCache {
                inputs,
                pre,
                generation: self.generation,
            },
        })
    }

    /// Backpropagates `dL/dfeatures` through the hidden layers. The returned
    /// classifier gradient is zero for a trainable head; the loss supplies it.
    pub fn backward(&self, cache: &ForwardCache, grad_features: ArrayView2<'_, f64>) -> Result<Gradients> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache {
                cache: cache.generation,
                model: self.generation,
            });
        }
        let n = cache.inputs.first().map_or(0, |x| x.nrows());
        if grad_features.dim() != (n, self.embed_dim()) {
            return Err(Error::Dimension(format!(
                "feature gradient is {:?}, expected ({n}, {})",
                grad_features.dim(),
                self.embed_dim()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = grad_features.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[l];
            let g = &mut grads.layers[l];
            for (mut d, z) in delta.outer_iter_mut().zip(pre.outer_iter()) {
                for (j, (dv, &zv)) in d.iter_mut().zip(z.iter()).enumerate() {
                    if zv <= 0.0 {
                        g.prelu[j] += *dv * zv;
                        *dv *= layer.prelu[j];
                    }
                }
            }
            g.weights = delta.t().dot(&cache.inputs[l]);
            g.bias = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&layer.weights);
            }
        }
        Ok(grads)
    }

    /// Forward, loss, and backward for one batch.
    pub fn loss_and_grads(&self, loss: LossKind, batch: &LabeledBatch) -> Result<(LossResult, Gradients, Forward)> {
        let fwd = self.forward(batch.inputs.view())?;
        let trainable = !self.classifier.is_fixed();
        let mut res = evaluate_rows(loss, self.classifier.rows(), fwd.features.view(), &batch.labels, trainable)?;
        let mut grads = self.backward(&fwd.cache, res.grad_features.view())?;
        grads.classifier = res.grad_weights.take();
        Ok((res, grads, fwd))
    }

    /// Argmax cosine similarity to the classifier rows; ties go to the lowest
    /// class index.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let fwd = self.forward(x)?;
        Ok(predict_features(self.classifier.rows(), fwd.features.view()))
    }

    pub fn param_count(&self) -> usize {
        let hidden: usize = self
            .layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len() + l.prelu.len())
            .sum();
        hidden
            + match &self.classifier {
                Classifier::Trainable(w) => w.len(),
                Classifier::Fixed(_) => 0,
            }
    }

    /// Mutable access to the `index`-th trainable scalar, ordered layer by
    /// layer (weights, bias, prelu), then the trainable head.
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for layer in &mut self.layers {
            for part in [
                layer.weights.as_slice_mut(),
                layer.bias.as_slice_mut(),
                layer.prelu.as_slice_mut(),
            ] {
                let part = part.expect("parameters are contiguous");
                if index < part.len() {
                    return Some(&mut part[index]);
                }
                index -= part.len();
            }
        }
        match &mut self.classifier {
            Classifier::Trainable(w) => w.as_slice_mut().and_then(|s| s.get_mut(index)),
            Classifier::Fixed(_) => None,
        }
    }

    /// Applies one Adam update. A fixed head is never modified.
    pub fn adam_step(&mut self, grads: &Gradients, state: &mut AdamState) -> Result<()> {
        state.check_shapes(self, grads)?;
        state.t += 1;
        let t = state.t as i32;
        let (b1, b2) = (state.beta1, state.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (state.lr, state.eps);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        };

        for ((layer, g), (m, v)) in self
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(state.m.layers.iter_mut().zip(state.v.layers.iter_mut()))
        {
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.prelu)
                .and(&g.prelu)
                .and(&mut m.prelu)
                .and(&mut v.prelu)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        if let (Classifier::Trainable(w), Some(g), Some(m), Some(v)) = (
            &mut self.classifier,
            &grads.classifier,
            &mut state.m.classifier,
            &mut state.v.classifier,
        ) {
            ndarray::Zip::from(w)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        self.generation += 1;
        Ok(())
    }
}

/// Index of the row with the largest cosine to each feature.
pub fn predict_features(rows: ArrayView2<'_, f64>, features: ArrayView2<'_, f64>) -> Vec<usize> {
    let norms: Vec<f64> = rows.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    features
        .outer_iter()
        .map(|f| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (j, (r, &nrm)) in rows.outer_iter().zip(&norms).enumerate() {
                let v = r.dot(&f) / nrm;
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &MlpModel, lr: f64) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn check_shapes(&self, model: &MlpModel, grads: &Gradients) -> Result<()> {
        let expect = Gradients::zeros_like(model);
        let same = |a: &Gradients| {
            a.layers.len() == expect.layers.len()
                && a.layers.iter().zip(&expect.layers).all(|(x, y)| {
                    x.weights.dim() == y.weights.dim()
                        && x.bias.dim() == y.bias.dim()
                        && x.prelu.dim() == y.prelu.dim()
                })
                && a.classifier.as_ref().map(|c| c.dim()) == expect.classifier.as_ref().map(|c| c.dim())
        };
        if same(grads) && same(&self.m) && same(&self.v) {
            Ok(())
        } else {
            Err(Error::Dimension("gradient or optimizer state shape differs from model".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub seed: u64,
    pub hidden_widths: Vec<usize>,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_lr() -> f64 {
    DEFAULT_LR
}

impl TrainConfig {
    pub fn new(loss: LossKind, epochs: usize, seed: u64, hidden_widths: Vec<usize>) -> Self {
        Self {
            loss,
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            seed,
            hidden_widths,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub mean_loss: f64,
    /// Accuracy of the pre-update predictions on each batch.
    pub train_accuracy: f64,
}

/// Mini-batch Adam training. Deterministic for a given seed, config and data.
pub fn train(mut model: MlpModel, data: &LabeledBatch, config: &TrainConfig) -> Result<(MlpModel, Vec<EpochLog>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.input_dim() != model.input_dim {
        return Err(Error::Dimension(format!(
            "dataset input_dim {} differs from model input_dim {}",
            data.input_dim(),
            model.input_dim
        )));
    }
    if let Some(&label) = data.labels.iter().find(|&&y| y >= model.num_classes()) {
        return Err(Error::Label {
            label,
            classes: model.num_classes(),
        });
    }

    let mut state = AdamState::new(&model, config.lr);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in batches(data, config.batch_size, config.seed, epoch as u64)? {
            let (res, grads, fwd) = model.loss_and_grads(config.loss, &batch)?;
            loss_sum += res.per_sample.iter().sum::<f64>();
            let pred = predict_features(model.classifier.rows(), fwd.features.view());
            correct += pred.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
            model.adam_step(&grads, &mut state)?;
        }
        log.push(EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok((model, log))
}

/// Central-difference check over every trainable parameter of the model.
/// Returns the worst `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn model_grad_check(model: &MlpModel, loss: LossKind, batch: &LabeledBatch, step: f64) -> Result<f64> {
    let (_, grads, _) = model.loss_and_grads(loss, batch)?;
    let analytic = grads.flatten();
    let mut probe = model.clone();
    let value = |m: &MlpModel| -> Result<f64> {
        let fwd = m.forward(batch.inputs.view())?;
        Ok(evaluate_rows(loss, m.classifier.rows(), fwd.features.view(), &batch.labels, false)?.value)
    };
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let p = probe.param_mut(i).expect("index within param_count");
        let orig = *p;
        *p = orig + step;
        let plus = value(&probe)?;
        *probe.param_mut(i).unwrap() = orig - step;
        let minus = value(&probe)?;
        *probe.param_mut(i).unwrap() = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8));
    }
    Ok(worst)
}

// Checkpoint layout.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    prelu: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum ClassifierFile {
    Fixed(ClassifierWeights),
    Trainable { rows: Vec<Vec<f64>> },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    input_dim: usize,
    layers: Vec<LayerFile>,
    classifier: ClassifierFile,
}

pub(crate) fn matrix_to_rows(m: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

pub(crate) fn rows_to_matrix(rows: Vec<Vec<f64>>, what: &str) -> Result<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Config(format!("{what}: ragged rows")));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| Error::Config(format!("{what}: {e}")))
}

impl Serialize for MlpModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelFile {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: matrix_to_rows(l.weights.view()),
                    bias: l.bias.to_vec(),
                    prelu: l.prelu.to_vec(),
                })
                .collect(),
            classifier: match &self.classifier {
                Classifier::Fixed(w) => ClassifierFile::Fixed(w.clone()),
                Classifier::Trainable(w) => ClassifierFile::Trainable {
                    rows: matrix_to_rows(w.view()),
                },
            },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = ModelFile::deserialize(d)?;
        MlpModel::from_file(file).map_err(serde::de::Error::custom)
    }
}

impl MlpModel {
    fn from_file(file: ModelFile) -> Result<Self> {
        let mut layers = Vec::with_capacity(file.layers.len());
        let mut fan_in = file.input_dim;
        for (i, l) in file.layers.into_iter().enumerate() {
            let weights = rows_to_matrix(l.weights, "layer weights")?;
            if weights.ncols() != fan_in || l.bias.len() != weights.nrows() || l.prelu.len() != weights.nrows() {
                return Err(Error::Dimension(format!("layer {i} has inconsistent shapes")));
            }
            fan_in = weights.nrows();
            layers.push(Layer {
                weights,
                bias: Array1::from(l.bias),
                prelu: Array1::from(l.prelu),
            });
        }
        if layers.is_empty() {
            return Err(Error::Dimension("checkpoint has no layers".into()));
        }
        let classifier = match file.classifier {
            ClassifierFile::Fixed(w) => Classifier::Fixed(w),
            ClassifierFile::Trainable { rows } => Classifier::Trainable(rows_to_matrix(rows, "classifier")?),
        };
        if classifier.rows().ncols() != fan_in {
            return Err(Error::Dimension(format!(
                "classifier dimension {} differs from embedding width {fan_in}",
                classifier.rows().ncols()
            )));
        }
        Ok(MlpModel {
            input_dim: file.input_dim,
            layers,
            classifier,
            generation: 0,
        })
    }
}
