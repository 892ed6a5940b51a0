use std::path::PathBuf;

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::{json, Map, Value};

use ntd_core::corpus::{documents_from_records, read_records_file, Vocabulary};
use ntd_core::registry::{self, RegistryError, TrainData};
use ntd_core::training::{TrainError, TrainReport};

use crate::args::TrainArgs;
use crate::io::{print_config, read_ontology, write_json};
use crate::{Failure, Outcome};

#[derive(Serialize)]
struct Resolved<'a> {
    model: &'a str,
    settings: &'a Value,
    vocab_size: u64,
    ontology: &'a PathBuf,
    train: &'a PathBuf,
    val: &'a PathBuf,
    out: &'a PathBuf,
    report: &'a PathBuf,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    model_kind: &'a str,
    settings: &'a Value,
    decode_tau: f64,
    #[serde(flatten)]
    report: &'a TrainReport,
}

/// Settings given on the command line, keyed as the model kinds name them.
fn overrides(args: &TrainArgs, defaults: &Value) -> Map<String, Value> {
    let mut o = Map::new();
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            o.insert(k.to_owned(), v);
        }
    };
    put("variant", args.variant.clone().map(Value::from));
    put("lr", args.lr.map(Value::from));
    put("epochs", args.epochs.map(Value::from));
    put("seed", args.seed.map(Value::from));
    put("tau", args.tau.map(Value::from));
    put("select_threshold", args.select_threshold.then_some(Value::Bool(true)));
    put("max_len", args.max_len.map(Value::from));
    put("grad_clip", args.grad_clip.map(Value::from));
    put("grad_clip", args.no_grad_clip.then_some(Value::Null));
    put("early_stop_patience", args.early_stop_patience.map(Value::from));
    put("attention", args.attention.clone().map(Value::from));
    put("word_embeddings", args.word_embeddings.as_ref().map(|p| json!(p)));
    put("node_embeddings", args.node_embeddings.as_ref().map(|p| json!(p)));
    put("l2", args.l2.map(Value::from));

    let dims = [
        ("d_w", args.d_w),
        ("d_h", args.d_h),
        ("d_s", args.d_s),
        ("d_n", args.d_n),
        ("d_a", args.d_a),
    ];
    if dims.iter().any(|(_, d)| d.is_some()) {
        let mut merged = defaults.get("dims").cloned().unwrap_or_else(|| json!({}));
        if let Some(obj) = merged.as_object_mut() {
            for (k, d) in dims {
                if let Some(d) = d {
                    obj.insert(k.to_owned(), json!(d));
                }
            }
        }
        o.insert("dims".into(), merged);
    }
    o
}

fn classify(e: RegistryError) -> Failure {
    match e {
        RegistryError::Train(err @ TrainError::NonFiniteLoss { .. }) => Failure::Numeric(err.into()),
        other => Failure::Input(other.into()),
    }
}

pub fn run(args: TrainArgs) -> Outcome {
    let kind = registry::lookup(&args.model)?;
    let settings = registry::resolve_settings(kind, &overrides(&args, &kind.default_settings()))?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.report.json", args.out.display())));
    print_config(
        "train",
        &Resolved {
            model: kind.name(),
            settings: &settings,
            vocab_size: args.vocab_size,
            ontology: &args.ontology,
            train: &args.train,
            val: &args.val,
            out: &args.out,
            report: &report_path,
        },
    );

    let tree = read_ontology(&args.ontology)?;
    let train_records = read_records_file(&args.train)?;
    let val_records = read_records_file(&args.val)?;
    let vocab = Vocabulary::build(train_records.iter().map(|r| r.text.as_str()), args.vocab_size as usize)
        .with_context(|| format!("building vocabulary from {}", args.train.display()))?;
    let max_len = registry::settings_max_len(&settings);
    if max_len == 0 {
        return Err(anyhow!("max_len must be positive").into());
    }
    let train_docs = documents_from_records(&train_records, &tree, &vocab, max_len)
        .with_context(|| format!("reading {}", args.train.display()))?;
    let val_docs = documents_from_records(&val_records, &tree, &vocab, max_len)
        .with_context(|| format!("reading {}", args.val.display()))?;

    let data = TrainData {
        train: &train_docs,
        val: &val_docs,
        tree: &tree,
        vocab: &vocab,
    };
    let fitted = kind
        .fit(&data, &settings, &mut |s| eprintln!("{}", s.progress_line()))
        .map_err(classify)?;
    registry::save_checkpoint(&args.out, fitted.tagger.as_ref(), &vocab, &tree, max_len)?;
    write_json(
        &report_path,
        &ReportFile {
            model_kind: kind.name(),
            settings: &settings,
            decode_tau: fitted.tagger.default_tau(),
            report: &fitted.report,
        },
    )?;
    eprintln!(
        "best epoch {} (val F1 {:.4}); {:.1}s; checkpoint {}",
        fitted.report.best_epoch,
        fitted.report.best_val_f1,
        fitted.report.wall_clock_secs,
        args.out.display()
    );
    Ok(())
}
