//! End-to-end training with validation-based model selection.
//!
//! One training run is a pure function of (config, corpus, seed): batch
//! shuffling, Gumbel noise and dropout all derive from the run seed, so
//! the per-epoch metric log reproduces bit for bit. The checkpoint keeps
//! the best-validation parameters together with everything needed to
//! evaluate new documents later: the config, the vocabulary and the
//! label set.

mod checkpoint;
mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use metrics::{ClassMetrics, Metrics};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamState};
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, build_document_graphs, DocumentGraph, GraphMode};
use crate::model::{forward, ForwardSettings, HyperParams, ModelParams};
use crate::parallel::par_map;
use crate::textpipe::{
    build_vocab, index_corpus, index_corpus_with_labels, load_embeddings, split_train_val,
    RawCorpus, Split, Vocabulary,
};

/// Full run configuration, serialisable as `key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: GraphMode,
    /// Number of GNN layers (the paper searches {2, 3}).
    pub layers: usize,
    /// Hidden dimension b.
    pub hidden: usize,
    /// Initial embedding dimension.
    pub d0: usize,
    pub tau: f64,
    pub threshold: f64,
    pub lambda: f64,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub window: usize,
    pub val_fraction: f64,
    pub min_count: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: GraphMode::Ours,
            layers: 2,
            hidden: 96,
            d0: 300,
            tau: 0.5,
            threshold: 0.5,
            lambda: 0.1,
            dropout: 0.1,
            lr: 1e-3,
            batch_size: 64,
            epochs: 200,
            seed: 42,
            window: 3,
            val_fraction: 0.1,
            min_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            tau: self.tau,
            threshold: self.threshold,
            lambda: self.lambda,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper().validate()?;
        if self.layers == 0 {
            return Err(Error::config("layers must be at least 1"));
        }
        if self.hidden == 0 || self.d0 == 0 {
            return Err(Error::config("hidden and d0 must be positive"));
        }
        if self.lr < 0.0 {
            return Err(Error::config("learning rate must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.window < 2 {
            return Err(Error::config("window must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.val_fraction == 0.0 {
            return Err(Error::config("val_fraction must be in (0, 1)"));
        }
        Ok(())
    }

    /// Serialise as `key = value` lines.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        writeln!(out, "mode = {}", self.mode.name()).unwrap();
        writeln!(out, "layers = {}", self.layers).unwrap();
        writeln!(out, "hidden = {}", self.hidden).unwrap();
        writeln!(out, "d0 = {}", self.d0).unwrap();
        writeln!(out, "tau = {}", self.tau).unwrap();
        writeln!(out, "threshold = {}", self.threshold).unwrap();
        writeln!(out, "lambda = {}", self.lambda).unwrap();
        writeln!(out, "dropout = {}", self.dropout).unwrap();
        writeln!(out, "lr = {}", self.lr).unwrap();
        writeln!(out, "batch_size = {}", self.batch_size).unwrap();
        writeln!(out, "epochs = {}", self.epochs).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        writeln!(out, "window = {}", self.window).unwrap();
        writeln!(out, "val_fraction = {}", self.val_fraction).unwrap();
        writeln!(out, "min_count = {}", self.min_count).unwrap();
        out
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::config(format!("invalid {what} value {value:?}"));
        match key {
            "mode" => self.mode = GraphMode::parse(value)?,
            "layers" => self.layers = value.parse().map_err(|_| bad("layers"))?,
            "hidden" => self.hidden = value.parse().map_err(|_| bad("hidden"))?,
            "d0" => self.d0 = value.parse().map_err(|_| bad("d0"))?,
            "tau" => self.tau = value.parse().map_err(|_| bad("tau"))?,
            "threshold" => self.threshold = value.parse().map_err(|_| bad("threshold"))?,
            "lambda" => self.lambda = value.parse().map_err(|_| bad("lambda"))?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad("dropout"))?,
            "lr" => self.lr = value.parse().map_err(|_| bad("lr"))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad("epochs"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "window" => self.window = value.parse().map_err(|_| bad("window"))?,
            "val_fraction" => self.val_fraction = value.parse().map_err(|_| bad("val_fraction"))?,
            "min_count" => self.min_count = value.parse().map_err(|_| bad("min_count"))?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a config file body: `key = value` per line, `#` comments.
    pub fn parse_config(content: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        for (lineno, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(lineno + 1, "expected key = value"));
            };
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_config(&std::fs::read_to_string(path)?)
    }
}

/// One line of the per-epoch metric log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub train_pred: f64,
    pub train_reg: f64,
    pub val_accuracy: f64,
}

impl EpochRecord {
    /// Machine-readable `key=value` record; floats use Rust's shortest
    /// round-trip formatting so identical runs produce identical lines.
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} train_loss={} train_pred={} train_reg={} val_acc={}",
            self.epoch, self.train_total, self.train_pred, self.train_reg, self.val_accuracy
        )
    }
}

/// Result of a training run: the best-validation checkpoint and the full
/// epoch log.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9e3779b97f4a7c15) ^ b.wrapping_mul(0xc2b2ae3d27d4eb4f);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Evaluate parameters on a set of graphs in eval mode (no noise, no
/// dropout), batching for throughput. Deterministic regardless of the
/// parallel backend.
pub fn evaluate(
    params: &ModelParams,
    hyper: &HyperParams,
    batch_size: usize,
    graphs: &[DocumentGraph],
) -> Result<Metrics> {
    if graphs.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let refs: Vec<&DocumentGraph> = graphs.iter().collect();
    let chunks: Vec<&[&DocumentGraph]> = refs.chunks(batch_size.max(1)).collect();
    let outputs = par_map(&chunks, |chunk| {
        let batch = batch_graphs(chunk);
        let out = forward(&batch, params, hyper, &ForwardSettings::eval());
        (out.predictions(), batch.labels.clone(), out.loss)
    });
    let mut preds = Vec::with_capacity(graphs.len());
    let mut truth = Vec::with_capacity(graphs.len());
    let (mut total, mut pred_loss, mut reg) = (0.0, 0.0, 0.0);
    for (p, t, loss) in &outputs {
        preds.extend_from_slice(p);
        truth.extend_from_slice(t);
        total += loss.total;
        pred_loss += loss.prediction;
        reg += mean_reg(loss);
    }
    let nb = outputs.len() as f64;
    let mut metrics = Metrics::from_predictions(&preds, &truth, params.num_classes());
    metrics.mean_total_loss = total / nb;
    metrics.mean_pred_loss = pred_loss / nb;
    metrics.mean_reg_loss = reg / nb;
    Ok(metrics)
}

fn mean_reg(loss: &crate::model::LossBreakdown) -> f64 {
    if loss.regularizers.is_empty() {
        0.0
    } else {
        loss.regularizers.iter().sum::<f64>() / loss.regularizers.len() as f64
    }
}

/// Evaluate a checkpoint on one split of a corpus, mapping words through
/// the checkpoint's vocabulary (unknown words go to the OOV id) and
/// labels through its label set.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, raw: &RawCorpus, split: Split) -> Result<Metrics> {
    let vocab = Vocabulary::from_words(ckpt.vocab_words.clone());
    let corpus = index_corpus_with_labels(raw, &vocab, &ckpt.labels)?;
    let graphs = build_document_graphs(&corpus, split, ckpt.config.mode, ckpt.config.window);
    evaluate(&ckpt.params, &ckpt.config.hyper(), ckpt.config.batch_size, &graphs)
}

/// Train on the corpus's train split with per-epoch validation, keeping
/// the parameters of the best-validation epoch (earliest on ties).
///
/// If the corpus has no validation documents, a seeded fraction of the
/// training split is carved out first. Document graphs are built once up
/// front; only the global edge sets are re-derived inside each forward
/// pass.
pub fn train_model(
    config: &TrainConfig,
    raw: &RawCorpus,
    embeddings_path: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut raw = raw.clone();
    if raw.docs_in(Split::Val).next().is_none() {
        split_train_val(&mut raw, config.val_fraction, config.seed)?;
    }
    if raw.docs_in(Split::Train).next().is_none() {
        return Err(Error::config("training split is empty"));
    }

    let vocab = build_vocab(&raw, config.min_count);
    let embeddings = load_embeddings(embeddings_path, &vocab, config.d0, config.seed)?;
    let corpus = index_corpus(&raw, &vocab)?;

    let train_graphs = build_document_graphs(&corpus, Split::Train, config.mode, config.window);
    let val_graphs = build_document_graphs(&corpus, Split::Val, config.mode, config.window);
    if val_graphs.is_empty() {
        return Err(Error::config("validation split is empty"));
    }

    let hyper = config.hyper();
    let mut params =
        ModelParams::init(&embeddings, config.hidden, config.layers, corpus.num_classes, config.seed);
    let mut adam = {
        let tensors = params.named_tensors();
        let refs: Vec<&crate::autodiff::Tensor> = tensors.iter().map(|(_, t)| *t).collect();
        AdamState::new(&refs, config.lr)
    };

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_graphs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, 0x5351)));

        let (mut total, mut pred, mut reg) = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let graph_refs: Vec<&DocumentGraph> = chunk.iter().map(|&i| &train_graphs[i]).collect();
            let batch = batch_graphs(&graph_refs);
            let settings = ForwardSettings::train(mix(config.seed, epoch as u64, batch_idx as u64));
            let out = forward(&batch, &params, &hyper, &settings);
            let grads = out.tape.backward(out.loss_node);
            let ids = out.params.flat();
            let grad_tensors: Vec<&crate::autodiff::Tensor> =
                ids.iter().map(|&id| grads.get(id).expect("parameter gradient")).collect();
            let mut param_tensors = params.tensors_mut();
            adam_step(&mut param_tensors, &grad_tensors, &mut adam);

            total += out.loss.total;
            pred += out.loss.prediction;
            reg += mean_reg(&out.loss);
            batches += 1;
        }

        let val = evaluate(&params, &hyper, config.batch_size, &val_graphs)?;
        let record = EpochRecord {
            epoch,
            train_total: total / batches as f64,
            train_pred: pred / batches as f64,
            train_reg: reg / batches as f64,
            val_accuracy: val.accuracy,
        };
        log.push(record);

        let better = match &best {
            None => true,
            Some((best_acc, _, _)) => val.accuracy > *best_acc,
        };
        if better {
            best = Some((val.accuracy, epoch, params.clone()));
        }
    }

    let (val_accuracy, epoch, best_params) = best.expect("at least one epoch");
    let checkpoint = Checkpoint {
        params: best_params,
        config: config.clone(),
        epoch,
        val_accuracy,
        vocab_words: vocab.words().to_vec(),
        labels: corpus.labels.clone(),
    };
    Ok(TrainOutcome { checkpoint, log })
}
