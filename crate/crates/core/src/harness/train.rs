//! The training loop, evaluation and per-epoch metrics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::config::TrainConfig;
use crate::attribution::{ace_matrix, compute_bounds, AceEstimatorConfig};
use crate::data::{hold_out, leave_one_out_split, DomainDataset, NormalizeTransform};
use crate::error::{Error, Result};
use crate::losses::{
    build_triplet_sets, sample_pairs, total_loss, Batch, BoundsSource, ContrastiveConfig, LossParts, PairDraw,
};
use crate::models::{BoundModel, ClassifierSpec, EncoderSpec, ModelBundle};
use crate::numcore::Tape;

const EVAL_CHUNK: usize = 512;
const HOLDOUT_SALT: u64 = 0x5eed_0001;
const INIT_PASS_SALT: u64 = 0x5eed_0002;

/// Everything one leave-one-out run trains and evaluates on.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub target: usize,
    pub train: DomainDataset,
    /// Source samples excluded from training, used for ACE-distance metrics.
    pub holdout: DomainDataset,
    pub val: DomainDataset,
    pub test: DomainDataset,
    pub normalizer: Option<NormalizeTransform>,
}

/// Splits off the target domain and a source holdout, then normalizes with
/// statistics of the training part alone when `cfg.normalize` is set.
pub fn prepare_fold(ds: &DomainDataset, target: usize, cfg: &TrainConfig) -> Result<FoldData> {
    let splits = leave_one_out_split(ds, target, cfg.val_fraction, cfg.data_seed)?;
    let (train, holdout) = hold_out(&splits.train, cfg.source_holdout, cfg.data_seed ^ HOLDOUT_SALT)?;
    let mut fold = FoldData {
        target,
        train,
        holdout,
        val: splits.val,
        test: splits.test,
        normalizer: None,
    };
    if cfg.normalize {
        let t = NormalizeTransform::fit(&fold.train)?;
        fold.train = t.apply(&fold.train)?;
        fold.holdout = t.apply(&fold.holdout)?;
        fold.val = t.apply(&fold.val)?;
        fold.test = t.apply(&fold.test)?;
        fold.normalizer = Some(t);
    }
    Ok(fold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 0 is the untrained initialization.
    pub epoch: usize,
    pub loss: f64,
    pub erm: f64,
    /// Mean hinge term, before weighting by rho.
    pub contrastive: f64,
    /// Share of paired samples whose hinge was active.
    pub hinge_frac: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub intra_ace: f64,
    pub inter_ace: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,loss,erm,contrastive,hinge_frac,val_acc,test_acc,intra_ace,inter_ace";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.loss,
            self.erm,
            self.contrastive,
            self.hinge_frac,
            self.val_acc,
            self.test_acc,
            self.intra_ace,
            self.inter_ace
        )
    }

    pub fn ace_ratio(&self) -> f64 {
        self.intra_ace / self.inter_ace
    }
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    /// Initialization row first, then one row per epoch.
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub wall_time: Duration,
}

impl RunMetrics {
    pub fn initial(&self) -> &EpochMetrics {
        &self.epochs[0]
    }

    pub fn selected(&self) -> &EpochMetrics {
        &self.epochs[self.best_epoch]
    }

    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("metrics always hold the initialization row")
    }
}

/// Writes `metrics.csv` and flushes after every row.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        w.line(EpochMetrics::CSV_HEADER)?;
        Ok(w)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, row: &EpochMetrics) -> Result<()> {
        self.line(&row.csv_row())
    }
}

pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub model: ModelBundle,
    pub metrics: RunMetrics,
}

/// Splits positions into `ceil(n / batch)` near-equal batches whose label
/// mix tracks the overall class proportions.
pub fn stratified_batches<R: rand::Rng + ?Sized>(labels: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let n = labels.len();
    if n == 0 {
        return Vec::new();
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    // spread each class evenly over the epoch: item k of class c sits at (k + ½) / n_c
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(rng);
        let nc = members.len() as f64;
        keyed.extend(members.iter().enumerate().map(|(k, &i)| ((k as f64 + 0.5) / nc, c, i)));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.into_iter().map(|(_, _, i)| i).collect();
    let n_batches = n.div_ceil(batch_size);
    let mut batches: Vec<Vec<usize>> = (0..n_batches)
        .map(|b| order[b * n / n_batches..(b + 1) * n / n_batches].to_vec())
        .collect();
    batches.shuffle(rng);
    batches
}

fn make_batch(ds: &DomainDataset, positions: &[usize]) -> Batch {
    Batch {
        ids: positions.iter().map(|&i| ds.samples()[i].id).collect(),
        features: ds.features_of(positions),
        labels: positions.iter().map(|&i| ds.samples()[i].label).collect(),
    }
}

/// Fraction of argmax-logit predictions equal to the labels; ties go to
/// the lowest class index.
pub fn evaluate(model: &ModelBundle, ds: &DomainDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    let positions: Vec<usize> = (0..ds.len()).collect();
    let mut hits = 0usize;
    for chunk in positions.chunks(EVAL_CHUNK) {
        let logits = model.logits_values(&ds.features_of(chunk))?;
        for (r, &i) in chunk.iter().enumerate() {
            let row = logits.row(r);
            let pred = row
                .iter()
                .enumerate()
                .fold(0, |best, (c, v)| if *v > row[best] { c } else { best });
            hits += usize::from(pred == ds.samples()[i].label);
        }
    }
    Ok(hits as f64 / ds.len() as f64)
}

/// Mean Manhattan distance between ACE vectors of same-class and of
/// different-class sample pairs, with each sample's own label as target.
pub fn ace_distance_stats(
    model: &ModelBundle,
    ds: &DomainDataset,
    estimator: &AceEstimatorConfig,
    epsilon: f64,
) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Data("ACE distances of an empty split".into()));
    }
    let z = model.encode_values(&ds.features())?;
    let bounds = compute_bounds(&z, epsilon)?;
    let labels = ds.labels();
    let values = ace_matrix(model, &z, &labels, &bounds, estimator)?;

    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..labels.len() {
        let a = values.row(i);
        for j in i + 1..labels.len() {
            let d: f64 = a.iter().zip(values.row(j)).map(|(p, q)| (p - q).abs()).sum();
            if labels[i] == labels[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    Ok((intra / n_intra as f64, inter / n_inter as f64))
}

struct PassTotals {
    loss: f64,
    erm: f64,
    contrastive: f64,
    active: usize,
    paired: usize,
    batches: usize,
}

impl PassTotals {
    fn new() -> Self {
        Self {
            loss: 0.0,
            erm: 0.0,
            contrastive: 0.0,
            active: 0,
            paired: 0,
            batches: 0,
        }
    }

    fn add(&mut self, tape: &Tape, parts: &LossParts) -> Result<()> {
        self.loss += tape.scalar(parts.total)?;
        self.erm += parts.erm;
        self.contrastive += parts.contrastive;
        self.active += parts.active;
        self.paired += parts.with_pairs;
        self.batches += 1;
        Ok(())
    }

    fn row(&self, epoch: usize) -> EpochMetrics {
        let n = self.batches as f64;
        EpochMetrics {
            epoch,
            loss: self.loss / n,
            erm: self.erm / n,
            contrastive: self.contrastive / n,
            hinge_frac: if self.paired == 0 {
                0.0
            } else {
                self.active as f64 / self.paired as f64
            },
            val_acc: 0.0,
            test_acc: 0.0,
            intra_ace: 0.0,
            inter_ace: 0.0,
        }
    }
}

struct Stepper<'a> {
    cfg: &'a TrainConfig,
    contrastive: ContrastiveConfig,
    bounds: BoundsSource,
}

impl Stepper<'_> {
    /// Records the loss of one batch; returns the tape, the bound model and the loss parts.
    fn forward(
        &self,
        model: &ModelBundle,
        batch: &Batch,
        pair_rng: &mut ChaCha8Rng,
        step: u64,
    ) -> Result<(Tape, BoundModel, LossParts)> {
        let pairs = if self.cfg.rho > 0.0 {
            sample_pairs(&build_triplet_sets(&batch.labels), pair_rng)
        } else {
            vec![
                PairDraw {
                    positive: None,
                    negative: None
                };
                batch.len()
            ]
        };
        let estimator = AceEstimatorConfig {
            seed: self.cfg.estimator.seed.wrapping_add(step),
            ..self.cfg.estimator.clone()
        };
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let parts = total_loss(&mut tape, &bound, batch, &pairs, &self.bounds, &estimator, &self.contrastive)?;
        Ok((tape, bound, parts))
    }
}

fn diverged(err: Error, epoch: usize, step: usize) -> Error {
    match err {
        Error::NonFinite(what) => Error::Divergence {
            epoch,
            step,
            detail: format!("non-finite value from {what}"),
        },
        Error::Divergence { detail, .. } => Error::Divergence { epoch, step, detail },
        other => other,
    }
}

/// Trains on `fold.train` and keeps the parameters of the epoch with the
/// best validation accuracy, earliest on ties. Each metrics row is written
/// to `sink` as soon as it is known, so an aborted run leaves its history.
pub fn train(cfg: &TrainConfig, fold: &FoldData, mut sink: Option<&mut MetricsWriter>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mut model = ModelBundle::init(
        EncoderSpec::new(fold.train.feature_dim(), cfg.hidden.clone(), cfg.latent_dim),
        ClassifierSpec {
            latent_dim: cfg.latent_dim,
            classes: fold.train.classes(),
            hidden: cfg.head_hidden.clone(),
        },
        cfg.init_seed,
    )?;
    let stepper = Stepper {
        cfg,
        contrastive: ContrastiveConfig {
            margin: cfg.delta,
            weight: cfg.rho,
            seed: cfg.pair_seed,
        },
        bounds: BoundsSource::Batch {
            epsilon: cfg.bounds_epsilon,
        },
    };
    let labels = fold.train.labels();
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
    let mut pair_rng = ChaCha8Rng::seed_from_u64(cfg.pair_seed);

    let evaluate_row = |model: &ModelBundle, mut row: EpochMetrics| -> Result<EpochMetrics> {
        row.val_acc = evaluate(model, &fold.val)?;
        row.test_acc = evaluate(model, &fold.test)?;
        let (intra, inter) = ace_distance_stats(model, &fold.holdout, &cfg.estimator, cfg.bounds_epsilon)?;
        row.intra_ace = intra;
        row.inter_ace = inter;
        Ok(row)
    };
    let mut history: Vec<EpochMetrics> = Vec::with_capacity(cfg.epochs + 1);
    let mut record = |row: EpochMetrics, history: &mut Vec<EpochMetrics>| -> Result<()> {
        if let Some(w) = sink.as_deref_mut() {
            w.write(&row)?;
        }
        history.push(row);
        Ok(())
    };

    // loss at initialization over one epoch's worth of batches, on side streams
    {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed ^ INIT_PASS_SALT);
        let mut side_pairs = ChaCha8Rng::seed_from_u64(cfg.pair_seed ^ INIT_PASS_SALT);
        let mut totals = PassTotals::new();
        for positions in stratified_batches(&labels, cfg.batch_size, &mut rng) {
            let batch = make_batch(&fold.train, &positions);
            let (tape, _, parts) = stepper.forward(&model, &batch, &mut side_pairs, 0).map_err(|e| diverged(e, 0, 0))?;
            totals.add(&tape, &parts)?;
        }
        let row = evaluate_row(&model, totals.row(0))?;
        record(row, &mut history)?;
    }

    let mut adam = AdamState::new(&model.parameters());
    let mut best: Option<(f64, usize, ModelBundle)> = None;
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut totals = PassTotals::new();
        for positions in stratified_batches(&labels, cfg.batch_size, &mut data_rng) {
            step += 1;
            let batch = make_batch(&fold.train, &positions);
            let (tape, bound, parts) = stepper
                .forward(&model, &batch, &mut pair_rng, step as u64)
                .map_err(|e| diverged(e, epoch, step))?;
            totals.add(&tape, &parts).map_err(|e| diverged(e, epoch, step))?;
            let grads = tape.backward(parts.total).map_err(|e| diverged(e, epoch, step))?;
            let grads = bound.gradients(&grads);
            adam_step(&mut adam, &mut model.parameters_mut(), &grads, cfg.learning_rate)
                .map_err(|e| diverged(e, epoch, step))?;
        }
        let row = evaluate_row(&model, totals.row(epoch))?;
        log::debug!(
            "epoch {epoch}: loss {:.4} val {:.4} test {:.4}",
            row.loss,
            row.val_acc,
            row.test_acc
        );
        if best.as_ref().is_none_or(|(acc, _, _)| row.val_acc > *acc) {
            best = Some((row.val_acc, epoch, model.clone()));
        }
        record(row, &mut history)?;
    }

    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        metrics: RunMetrics {
            epochs: history,
            best_epoch,
            wall_time: started.elapsed(),
        },
    })
}

