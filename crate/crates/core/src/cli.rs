//! Commands behind the `reponet` binary.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage/config/data error,
//! 3 I/O error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_idx_with, make_blobs, IdxOptions, LabeledBatch};
use crate::losses::{LossKind, DEFAULT_KAPPA};
use crate::metrics::{export_scatter, geometry_report_rows, GeometryReport};
use crate::network::{init_model, train, Classifier, ClassifierSpec, EpochLog, MlpModel, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LR};
use crate::polytope::{embedding_dim, expected_angle, make_weights, verify_geometry, ClassifierWeights, PolytopeKind, DEFAULT_TOL};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "reponet", version, about = "Regular polytope fixed classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the fixed classifier weights for K classes as JSON.
    GenWeights {
        #[arg(long)]
        kind: PolytopeKind,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify the geometry of a weights file.
    Check {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Train from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on an IDX pair or on synthetic blobs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, requires = "labels", conflicts_with = "blobs")]
        images: Option<PathBuf>,
        #[arg(long, requires = "images")]
        labels: Option<PathBuf>,
        #[arg(long)]
        emnist: bool,
        #[arg(long)]
        limit: Option<usize>,
        /// e.g. `classes=4,dim=8,per_class=100,spread=1,separation=6,seed=1`
        #[arg(long, required_unless_present = "images")]
        blobs: Option<String>,
        /// Report path; defaults to `eval_report.json` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::GenWeights { kind, classes, out: path } => {
            cmd_gen_weights(kind, classes, &path, out)?;
            Ok(EXIT_OK)
        }
        Command::Check { weights, tol } => {
            let ok = cmd_check(&weights, tol, out)?;
            Ok(if ok { EXIT_OK } else { EXIT_VERIFY })
        }
        Command::Train { config, seed } => {
            cmd_train(&config, seed, out)?;
            Ok(EXIT_OK)
        }
        Command::Eval {
            checkpoint,
            images,
            labels,
            emnist,
            limit,
            blobs,
            out: report,
        } => {
            let dataset = match (images, labels, blobs) {
                (Some(images), Some(labels), _) => DatasetSpec::Idx {
                    images,
                    labels,
                    emnist,
                    limit,
                },
                (_, _, Some(spec)) => parse_blob_spec(&spec)?,
                _ => return Err(Error::Config("eval needs --images/--labels or --blobs".into())),
            };
            cmd_eval(&checkpoint, &dataset, report.as_deref(), out)?;
            Ok(EXIT_OK)
        }
    }
}

fn emit(out: &mut dyn Write, line: std::fmt::Arguments<'_>) {
    let _ = out.write_fmt(line);
    let _ = out.write_all(b"\n");
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen_weights(kind: PolytopeKind, classes: usize, path: &Path, out: &mut dyn Write) -> Result<ClassifierWeights> {
    let w = make_weights(kind, classes)?;
    write_file(path, w.to_json()?)?;
    emit(out, format_args!("kind = {kind}"));
    emit(out, format_args!("K = {}", w.num_classes()));
    emit(out, format_args!("d = {}", w.dim()));
    emit(out, format_args!("phi = {} rad ({} deg)", w.phi(), w.phi().to_degrees()));
    Ok(w)
}

/// Returns whether the file passes [`verify_geometry`] at `tol`.
pub fn cmd_check(path: &Path, tol: f64, out: &mut dyn Write) -> Result<bool> {
    let text = read_file(path)?;
    let w = ClassifierWeights::from_json(&text).map_err(|e| match e {
        Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
        other => other,
    })?;
    let report = verify_geometry(&w, tol)?;
    emit(out, format_args!("{} K={} d={} phi={}", w.kind(), w.num_classes(), w.dim(), w.phi()));
    emit(out, format_args!("min angle = {}", report.min_angle));
    emit(out, format_args!("worst deviation = {:e}", report.worst_deviation));
    for f in &report.failures {
        emit(out, format_args!("FAIL {f}"));
    }
    emit(out, format_args!("{}", if report.passed { "PASS" } else { "FAIL" }));
    Ok(report.passed)
}

// Run configuration.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
        separation: f64,
        /// Defaults to the run seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        emnist: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
}

impl DatasetSpec {
    pub fn load(&self, default_seed: u64) -> Result<LabeledBatch> {
        match self {
            DatasetSpec::Blobs {
                classes,
                dim,
                per_class,
                spread,
                separation,
                seed,
            } => make_blobs(*classes, *dim, *per_class, *spread, *separation, seed.unwrap_or(default_seed)),
            DatasetSpec::Idx {
                images,
                labels,
                emnist,
                limit,
            } => load_idx_with(
                images,
                labels,
                IdxOptions {
                    emnist: *emnist,
                    limit: *limit,
                },
            ),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSpec::Idx { images, labels, .. } = self {
            *images = base.join(&*images);
            *labels = base.join(&*labels);
        }
    }
}

/// `classes=4,dim=8,per_class=100,spread=1,separation=6,seed=1`
pub fn parse_blob_spec(spec: &str) -> Result<DatasetSpec> {
    let mut map = serde_json::Map::new();
    map.insert("type".into(), "blobs".into());
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("blob spec entry {part:?} is not key=value")))?;
        let value: serde_json::Value = serde_json::from_str(value.trim())
            .map_err(|_| Error::Config(format!("blob spec value for {key:?} is not a number")))?;
        map.insert(key.trim().to_string(), value);
    }
    serde_json::from_value(map.into()).map_err(|e| Error::Config(format!("blob spec: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub kind: PolytopeKind,
    pub classes: usize,
    /// Learn the classifier rows instead of freezing them (baseline).
    #[serde(default)]
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MarginSpec {
    Value(f64),
    Named(MarginName),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginName {
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    PlainCe,
    FixedSoftmax,
    NormScaled,
    AngularMargin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossName,
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Radians, or `"max"` for the polytope angle. Defaults to `"max"`.
    #[serde(default)]
    pub m: Option<MarginSpec>,
}

impl LossSpec {
    pub fn resolve(&self, phi: f64) -> Result<LossKind> {
        let kappa = self.kappa.unwrap_or(DEFAULT_KAPPA);
        let stray = |what: &str| Error::Config(format!("{what} does not apply to loss {:?}", self.kind));
        let kind = match self.kind {
            LossName::PlainCe | LossName::FixedSoftmax => {
                if self.kappa.is_some() {
                    return Err(stray("kappa"));
                }
                if self.m.is_some() {
                    return Err(stray("m"));
                }
                if self.kind == LossName::PlainCe {
                    LossKind::PlainCe
                } else {
                    LossKind::FixedSoftmax
                }
            }
            LossName::NormScaled => {
                if self.m.is_some() {
                    return Err(stray("m"));
                }
                LossKind::NormScaled { kappa }
            }
            LossName::AngularMargin => {
                let m = match self.m.unwrap_or(MarginSpec::Named(MarginName::Max)) {
                    MarginSpec::Value(m) => m,
                    MarginSpec::Named(MarginName::Max) => phi,
                };
                LossKind::AngularMargin { kappa, m }
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Hidden layer widths; the last one is the embedding and must equal
    /// the classifier dimension.
    pub hidden_widths: Vec<usize>,
    pub dataset: DatasetSpec,
    pub classifier: ClassifierConfig,
    pub loss: LossSpec,
    pub output_dir: PathBuf,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_lr() -> f64 {
    DEFAULT_LR
}

impl RunConfig {
    /// Parses a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve_paths(base);
        cfg.output_dir = base.join(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<ResolvedRun> {
        let kind = self.classifier.kind;
        let d = embedding_dim(kind, self.classifier.classes)?;
        let phi = expected_angle(kind, d);
        let loss = self.loss.resolve(phi)?;
        let train = TrainConfig {
            loss,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            hidden_widths: self.hidden_widths.clone(),
        };
        train.validate()?;
        let mut dataset = self.dataset.clone();
        if let DatasetSpec::Blobs { seed, .. } = &mut dataset {
            seed.get_or_insert(self.seed);
        }
        Ok(ResolvedRun {
            train,
            dataset,
            classifier: ResolvedClassifier {
                kind,
                classes: self.classifier.classes,
                trainable: self.classifier.trainable,
                d,
                phi,
            },
            margin_from_max: matches!(
                (self.loss.kind, self.loss.m),
                (LossName::AngularMargin, None | Some(MarginSpec::Named(MarginName::Max)))
            ),
            output_dir: self.output_dir.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedClassifier {
    pub kind: PolytopeKind,
    pub classes: usize,
    pub trainable: bool,
    pub d: usize,
    pub phi: f64,
}

/// Every value a run used, written next to its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedRun {
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub classifier: ResolvedClassifier,
    /// Whether `m` came from `"max"`.
    pub margin_from_max: bool,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: ResolvedRun,
    pub model: MlpModel,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run: ResolvedRun,
    pub model: MlpModel,
    pub log: Vec<EpochLog>,
    pub report: GeometryReport,
}

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EPOCH_LOG_FILE: &str = "epochs.csv";
pub const REPORT_FILE: &str = "report.json";
pub const FEATURES_FILE: &str = "features.csv";
pub const FEATURES_NORMALIZED_FILE: &str = "features_normalized.csv";

/// Trains per the config and writes config snapshot, checkpoint, epoch log,
/// geometry report and feature exports into the output directory.
pub fn cmd_train(config_path: &Path, seed: Option<u64>, out: &mut dyn Write) -> Result<TrainOutcome> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let run = cfg.resolve()?;
    let data = run.dataset.load(run.train.seed)?;
    if data.num_classes > run.classifier.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the classifier holds {}",
            data.num_classes, run.classifier.classes
        )));
    }

    let spec = if run.classifier.trainable {
        ClassifierSpec::Trainable {
            classes: run.classifier.classes,
            dim: run.classifier.d,
        }
    } else {
        ClassifierSpec::Fixed(make_weights(run.classifier.kind, run.classifier.classes)?)
    };
    let model = init_model(data.input_dim(), &run.train.hidden_widths, spec, run.train.seed)?;
    emit(
        out,
        format_args!(
            "training {} samples, {} head ({}, K={}, d={}), loss {:?}",
            data.len(),
            if run.classifier.trainable { "trainable" } else { "fixed" },
            run.classifier.kind,
            run.classifier.classes,
            run.classifier.d,
            run.train.loss
        ),
    );
    let (model, log) = train(model, &data, &run.train)?;
    for e in &log {
        emit(
            out,
            format_args!("epoch {:>4}  loss {:.6}  acc {:.4}", e.epoch, e.mean_loss, e.train_accuracy),
        );
    }

    let fwd = model.forward(data.inputs.view())?;
    let preds = crate::network::predict_features(model.classifier().rows(), fwd.features.view());
    let report = geometry_report_rows(
        model.classifier().rows(),
        Some(run.classifier.phi),
        fwd.features.view(),
        &data.labels,
        &preds,
    )?;

    let dir = &run.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(CONFIG_FILE), serde_json::to_string_pretty(&run)?)?;
    let checkpoint = Checkpoint {
        config: run.clone(),
        model: model.clone(),
    };
    write_file(&dir.join(CHECKPOINT_FILE), serde_json::to_string_pretty(&checkpoint)?)?;
    let mut csv = String::from("epoch,mean_loss,train_accuracy\n");
    for e in &log {
        csv.push_str(&format!("{},{:?},{:?}\n", e.epoch, e.mean_loss, e.train_accuracy));
    }
    write_file(&dir.join(EPOCH_LOG_FILE), csv)?;
    write_file(&dir.join(REPORT_FILE), report.to_json()?)?;
    export_scatter(fwd.features.view(), &data.labels, false, dir.join(FEATURES_FILE))?;
    export_scatter(fwd.features.view(), &data.labels, true, dir.join(FEATURES_NORMALIZED_FILE))?;

    print_report(out, &report);
    emit(out, format_args!("artifacts written to {}", dir.display()));
    Ok(TrainOutcome {
        run,
        model,
        log,
        report,
    })
}

/// Evaluates a checkpoint; prints accuracy and geometry and saves the report.
pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &DatasetSpec,
    report_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<GeometryReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = dataset.load(ck.config.train.seed)?;
    if data.input_dim() != ck.model.input_dim() {
        return Err(Error::Dimension(format!(
            "dataset input_dim {} differs from checkpoint input_dim {}",
            data.input_dim(),
            ck.model.input_dim()
        )));
    }
    let fwd = ck.model.forward(data.inputs.view())?;
    let rows = ck.model.classifier().rows();
    let preds = crate::network::predict_features(rows, fwd.features.view());
    let phi = match ck.model.classifier() {
        Classifier::Fixed(w) => w.phi(),
        Classifier::Trainable(_) => ck.config.classifier.phi,
    };
    let report = geometry_report_rows(rows, Some(phi), fwd.features.view(), &data.labels, &preds)?;

    let path = match report_path {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("eval_report.json"),
    };
    write_file(&path, report.to_json()?)?;
    emit(out, format_args!("samples = {}", data.len()));
    print_report(out, &report);
    emit(out, format_args!("report written to {}", path.display()));
    Ok(report)
}

fn print_report(out: &mut dyn Write, r: &GeometryReport) {
    emit(out, format_args!("accuracy = {:.4}", r.accuracy));
    if let Some(phi) = r.phi {
        emit(out, format_args!("phi = {phi:.6} rad"));
    }
    if let Some(a) = r.max_mean_angle_to_weight() {
        emit(out, format_args!("max per-class mean angle to weight = {a:.6} rad"));
    }
    emit(
        out,
        format_args!(
            "min pairwise mean-direction angle = {:.6} rad{}",
            r.min_pairwise_mean_angle,
            if r.min_pairwise_defined { "" } else { " (undefined)" }
        ),
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("reponet").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn blob_spec_parsing() {
        let spec = parse_blob_spec("classes=4, dim=8,per_class=10,spread=1,separation=6,seed=3").unwrap();
        assert_eq!(
            spec,
            DatasetSpec::Blobs {
                classes: 4,
                dim: 8,
                per_class: 10,
                spread: 1.0,
                separation: 6.0,
                seed: Some(3)
            }
        );
        assert!(parse_blob_spec("classes=4,dim").is_err());
        assert!(parse_blob_spec("classes=4,dim=2,per_class=1,spread=1,separation=1,bogus=2").is_err());
    }

    #[test]
    fn margin_resolution() {
        let spec: LossSpec = serde_json::from_str(r#"{"kind":"angular_margin","m":"max"}"#).unwrap();
        assert_eq!(
            spec.resolve(1.25).unwrap(),
            LossKind::AngularMargin { kappa: 30.0, m: 1.25 }
        );
        let spec: LossSpec = serde_json::from_str(r#"{"kind":"angular_margin","kappa":10,"m":0.5}"#).unwrap();
        assert_eq!(spec.resolve(1.25).unwrap(), LossKind::AngularMargin { kappa: 10.0, m: 0.5 });
        let spec: LossSpec = serde_json::from_str(r#"{"kind":"plain_ce","m":0.5}"#).unwrap();
        assert!(spec.resolve(1.0).is_err());
        assert!(serde_json::from_str::<LossSpec>(r#"{"kind":"angular_margin","margin":0.5}"#).is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_args(&["gen-weights", "--kind", "hexagon", "--classes", "3", "--out", "x"]).0, 2);
        assert_eq!(run_args(&["frobnicate"]).0, 2);
        assert_eq!(run_args(&["--help"]).0, 0);
    }
}
