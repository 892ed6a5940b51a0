use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;

use ntd_core::corpus::{encode_text, read_records_file};
use ntd_core::metrics::strip_root;
use ntd_core::registry::load_checkpoint;

use crate::args::PredictArgs;
use crate::io::{print_config, read_ontology, write_lines};
use crate::Outcome;

#[derive(Serialize)]
struct Resolved<'a> {
    model_kind: &'a str,
    tau: f64,
    uses_threshold: bool,
    max_len: usize,
    checkpoint: &'a std::path::Path,
    input: &'a std::path::Path,
    out: &'a std::path::Path,
}

#[derive(Serialize)]
struct Prediction {
    doc_id: String,
    labels: Vec<String>,
}

pub fn run(args: PredictArgs) -> Outcome {
    let loaded = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    if let Some(path) = &args.ontology {
        let given = read_ontology(path)?;
        if given.content_hash() != loaded.tree.content_hash() {
            fail!(
                "ontology {} does not match the one the checkpoint was trained with",
                path.display()
            );
        }
    }
    let tau = args.tau.unwrap_or_else(|| loaded.tagger.default_tau());
    if !(0.0..=1.0).contains(&tau) {
        fail!("--tau must lie in [0, 1], got {tau}");
    }
    print_config(
        "predict",
        &Resolved {
            model_kind: loaded.tagger.kind(),
            tau,
            uses_threshold: loaded.tagger.uses_threshold(),
            max_len: loaded.max_len,
            checkpoint: &args.checkpoint,
            input: &args.input,
            out: &args.out,
        },
    );

    let records = read_records_file(&args.input)?;
    let encoded = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let tokens = encode_text(&loaded.vocab, &r.text, loaded.max_len);
            if tokens.is_empty() {
                Err(anyhow!("record {} (doc_id `{}`) has no tokens", i + 1, r.doc_id))
            } else {
                Ok(tokens)
            }
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .with_context(|| format!("reading {}", args.input.display()))?;

    let sets = encoded
        .par_iter()
        .map(|tokens| loaded.tagger.predict(&loaded.tree, tokens, tau))
        .collect::<Result<Vec<_>, _>>()?;
    let predictions = records
        .iter()
        .zip(&sets)
        .map(|(r, set)| {
            let labels = strip_root(&set.applied)
                .into_iter()
                .map(|v| loaded.tree.label(v).map(str::to_owned))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Prediction {
                doc_id: r.doc_id.clone(),
                labels,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    write_lines(&args.out, &predictions)?;
    eprintln!("wrote {} predictions to {}", predictions.len(), args.out.display());
    Ok(())
}
