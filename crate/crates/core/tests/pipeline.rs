//! Cross-module training pipeline checks: learnability, determinism,
//! checkpoint round-trips, and the corpus file format.

use docgnn::graph::{batch_graphs, build_document_graphs, DocumentGraph};
use docgnn::model::{forward, ForwardSettings, ModelParams};
use docgnn::autodiff::{adam_step, AdamState, Tensor};
use docgnn::textpipe::{
    build_vocab, generate_synthetic, index_corpus, load_corpus_dir, load_embeddings,
    write_corpus_dir, RawCorpus, Split, SyntheticSpec, SyntheticTask,
};
use docgnn::train::{
    evaluate, evaluate_checkpoint, load_checkpoint, save_checkpoint, train_model, TrainConfig,
};

fn bag_corpus(num_docs: usize, seed: u64) -> RawCorpus {
    generate_synthetic(
        &SyntheticSpec {
            num_docs,
            vocab_size: 30,
            sentences_per_doc: 2,
            tokens_per_sentence: 6,
            task: SyntheticTask::Bag,
            ..Default::default()
        },
        seed,
    )
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        hidden: 16,
        d0: 16,
        batch_size: 16,
        epochs: 25,
        lr: 5e-3,
        dropout: 0.0,
        lambda: 0.0,
        tau: 1.0,
        threshold: 0.5,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn bag_task_is_learnable() {
    let corpus = bag_corpus(200, 5);
    let outcome = train_model(&small_config(), &corpus, None).unwrap();
    let metrics = evaluate_checkpoint(&outcome.checkpoint, &corpus, Split::Test).unwrap();
    assert!(
        metrics.accuracy >= 0.95,
        "bag accuracy {} below 0.95; best val {}",
        metrics.accuracy,
        outcome.checkpoint.val_accuracy
    );
}

#[test]
fn fixed_batch_loss_is_non_increasing_over_first_steps() {
    // Small-lr smoke property on a trivially learnable task: repeated
    // Adam steps against one fixed batch with fixed noise must not
    // increase the loss over the first five steps.
    let corpus = bag_corpus(32, 9);
    let config = TrainConfig { lr: 1e-4, ..small_config() };
    let raw = corpus;
    let vocab = build_vocab(&raw, 1);
    let table = load_embeddings(None, &vocab, config.d0, config.seed).unwrap();
    let indexed = index_corpus(&raw, &vocab).unwrap();
    let graphs = build_document_graphs(&indexed, Split::Train, config.mode, config.window);
    let refs: Vec<&DocumentGraph> = graphs.iter().take(16).collect();
    let batch = batch_graphs(&refs);

    let mut params = ModelParams::init(&table, config.hidden, config.layers, indexed.num_classes, 3);
    let mut adam = {
        let named = params.named_tensors();
        let tensors: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        AdamState::new(&tensors, config.lr)
    };
    let mut losses = Vec::new();
    for _ in 0..5 {
        let out = forward(&batch, &params, &config.hyper(), &ForwardSettings::train(11));
        losses.push(out.loss.total);
        let grads = out.tape.backward(out.loss_node);
        let ids = out.params.flat();
        let grad_refs: Vec<&Tensor> = ids.iter().map(|&id| grads.get(id).unwrap()).collect();
        let mut tensors = params.tensors_mut();
        adam_step(&mut tensors, &grad_refs, &mut adam);
    }
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "loss increased: {losses:?}");
    }
}

#[test]
fn checkpoint_reload_reproduces_metrics_bit_for_bit() {
    let corpus = bag_corpus(60, 4);
    let config = TrainConfig { epochs: 3, ..small_config() };
    let outcome = train_model(&config, &corpus, None).unwrap();

    let before = evaluate_checkpoint(&outcome.checkpoint, &corpus, Split::Test).unwrap();

    let dir = std::env::temp_dir().join("docgnn_pipeline_ckpt");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.ckpt");
    save_checkpoint(&path, &outcome.checkpoint).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();
    let after = evaluate_checkpoint(&reloaded, &corpus, Split::Test).unwrap();

    assert_eq!(before, after);
    assert_eq!(before.accuracy.to_bits(), after.accuracy.to_bits());
    assert_eq!(before.mean_total_loss.to_bits(), after.mean_total_loss.to_bits());
}

#[test]
fn corpus_directory_roundtrip_preserves_documents() {
    let corpus = generate_synthetic(
        &SyntheticSpec {
            num_docs: 24,
            task: SyntheticTask::CrossSentenceXor,
            ..Default::default()
        },
        13,
    )
    .unwrap();
    let dir = std::env::temp_dir().join("docgnn_pipeline_corpus");
    let _ = std::fs::remove_dir_all(&dir);
    write_corpus_dir(&dir, &corpus).unwrap();
    let loaded = load_corpus_dir(&dir).unwrap();
    // Files are grouped by split, so compare as (id -> doc) maps.
    let key = |c: &RawCorpus| {
        let mut v: Vec<_> = c.documents.iter().cloned().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    };
    assert_eq!(key(&corpus), key(&loaded));
}

#[test]
fn micro_f1_equals_accuracy_through_a_real_evaluation() {
    let corpus = bag_corpus(60, 21);
    let config = TrainConfig { epochs: 2, ..small_config() };
    let outcome = train_model(&config, &corpus, None).unwrap();
    let vocab_words = outcome.checkpoint.vocab_words.clone();
    let vocab = docgnn::textpipe::Vocabulary::from_words(vocab_words);
    let indexed = index_corpus(&corpus, &vocab).unwrap();
    let graphs = build_document_graphs(
        &indexed,
        Split::Test,
        outcome.checkpoint.config.mode,
        outcome.checkpoint.config.window,
    );
    let metrics = evaluate(
        &outcome.checkpoint.params,
        &outcome.checkpoint.config.hyper(),
        16,
        &graphs,
    )
    .unwrap();
    assert!((metrics.micro_f1 - metrics.accuracy).abs() < 1e-12);
}
