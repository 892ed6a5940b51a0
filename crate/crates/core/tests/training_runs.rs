use ntd_core::corpus::synth::{gen_synthetic, SynthSpec};
use ntd_core::corpus::{documents_from_records, Document, Vocabulary};
use ntd_core::ontology::OntologyTree;
use ntd_core::registry::{self, TrainData};
use ntd_core::training::{evaluate_model, train, TrainConfig, TrainError};
use serde_json::{json, Map, Value};

fn corpus(docs: usize, seed: u64) -> (OntologyTree, Vocabulary, Vec<Document>) {
    let spec = SynthSpec {
        branching: 2,
        depth: 2,
        seed,
        ..SynthSpec::default()
    };
    let (tree, recs) = gen_synthetic(&spec, docs).unwrap();
    let vocab = Vocabulary::build(recs.iter().map(|r| r.text.as_str()), 1000).unwrap();
    let docs = documents_from_records(&recs, &tree, &vocab, 64).unwrap();
    (tree, vocab, docs)
}

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: 4,
        lr: 0.05,
        seed: 3,
        ..TrainConfig::default()
    };
    cfg.dims.d_h = 12;
    cfg.dims.d_s = 12;
    cfg.dims.d_w = 8;
    cfg.dims.d_a = 8;
    cfg
}

#[test]
fn training_is_deterministic_per_seed() {
    let (tree, vocab, docs) = corpus(40, 1);
    let (tr, va) = docs.split_at(30);
    let run = |cfg: &TrainConfig| {
        let out = train(tr, va, &tree, &vocab, cfg, &mut |_| {}).unwrap();
        (out.model.params().clone(), out.report.epochs.clone())
    };
    let cfg = small_config();
    let (p1, e1) = run(&cfg);
    let (p2, e2) = run(&cfg);
    assert_eq!(e1, e2);
    for ((_, n1, a1), (_, n2, a2)) in p1.iter().zip(p2.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(a1.data(), a2.data());
    }
    let other = TrainConfig { seed: 4, ..cfg };
    assert_ne!(run(&other).1, e1);
}

#[test]
fn loss_decreases_and_best_epoch_is_kept() {
    let (tree, vocab, docs) = corpus(60, 2);
    let (tr, va) = docs.split_at(45);
    let cfg = TrainConfig {
        epochs: 8,
        variant: "deterministic".into(),
        ..small_config()
    };
    let out = train(tr, va, &tree, &vocab, &cfg, &mut |_| {}).unwrap();
    let losses: Vec<f64> = out.report.epochs.iter().map(|e| e.mean_loss).collect();
    assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
    let best = out.report.epochs.iter().map(|e| e.val_f1).fold(f64::MIN, f64::max);
    assert_eq!(out.report.best_val_f1, best);
    let (prf, _) = evaluate_model(&out.model, va, &tree, cfg.tau).unwrap();
    assert_eq!(prf.f1, best);
}

#[test]
fn divergent_learning_rate_is_reported() {
    let (tree, vocab, docs) = corpus(20, 3);
    let cfg = TrainConfig {
        lr: 1e300,
        ..small_config()
    };
    let err = train(&docs, &docs, &tree, &vocab, &cfg, &mut |_| {}).unwrap_err();
    assert!(matches!(err, TrainError::NonFiniteLoss { .. }), "{err}");
}

#[test]
fn every_registered_kind_trains_and_restores() {
    let (tree, vocab, docs) = corpus(40, 4);
    let (tr, va) = docs.split_at(30);
    let data = TrainData {
        train: tr,
        val: va,
        tree: &tree,
        vocab: &vocab,
    };
    for kind in registry::registry() {
        let overrides: Map<String, Value> = match kind.name() {
            "ntd" => json!({"epochs": 2, "dims": {"d_w": 4, "d_h": 6, "d_s": 6, "d_n": 3, "d_a": 4}}),
            _ => json!({"epochs": 3}),
        }
        .as_object()
        .unwrap()
        .clone();
        let settings = registry::resolve_settings(*kind, &overrides).unwrap();
        let fitted = kind.fit(&data, &settings, &mut |_| {}).unwrap();
        let ckpt = registry::to_checkpoint(fitted.tagger.as_ref(), &vocab, &tree, 64).unwrap();
        let loaded = registry::from_checkpoint(&ckpt).unwrap();
        for d in va {
            let tau = fitted.tagger.default_tau();
            assert_eq!(
                fitted.tagger.predict(&tree, &d.tokens, tau).unwrap(),
                loaded.tagger.predict(&loaded.tree, &d.tokens, tau).unwrap()
            );
        }
    }
}

#[test]
fn deterministic_variant_overfits_small_corpus() {
    let spec = SynthSpec {
        branching: 3,
        depth: 3,
        noise_rate: 0.1,
        seed: 7,
        ..SynthSpec::default()
    };
    let (tree, recs) = gen_synthetic(&spec, 64).unwrap();
    let vocab = Vocabulary::build(recs.iter().map(|r| r.text.as_str()), 50_000).unwrap();
    let docs = documents_from_records(&recs, &tree, &vocab, 256).unwrap();
    let cfg = TrainConfig {
        variant: "deterministic".into(),
        lr: 0.05,
        epochs: 200,
        early_stop_patience: Some(20),
        ..TrainConfig::default()
    };
    let out = train(&docs, &docs, &tree, &vocab, &cfg, &mut |_| {}).unwrap();
    assert!(out.report.best_val_f1 >= 0.95, "train F1 {}", out.report.best_val_f1);
}
