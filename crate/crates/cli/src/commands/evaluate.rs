use std::collections::HashMap;

use anyhow::Context;

use ntd_core::corpus::{read_records_file, resolve_labels, RawRecord};
use ntd_core::metrics::EvalReport;
use ntd_core::ontology::{LabelSet, OntologyTree};

use crate::args::EvaluateArgs;
use crate::io::{print_config, read_ontology, write_json};
use crate::Outcome;

/// Predicted labels are taken as given; no ancestor closure is applied.
fn resolve_predicted(tree: &OntologyTree, rec: &RawRecord, line: usize) -> anyhow::Result<LabelSet> {
    rec.labels
        .iter()
        .map(|l| {
            tree.id_of(l)
                .with_context(|| format!("prediction line {line} (doc_id `{}`)", rec.doc_id))
        })
        .collect()
}

pub fn run(args: EvaluateArgs) -> Outcome {
    print_config("evaluate", &args);
    let tree = read_ontology(&args.ontology)?;
    let gold_records = read_records_file(&args.gold)?;
    let pred_records = read_records_file(&args.pred)?;

    let mut predicted: HashMap<&str, LabelSet> = HashMap::with_capacity(pred_records.len());
    for (i, rec) in pred_records.iter().enumerate() {
        let set = resolve_predicted(&tree, rec, i + 1)?;
        if predicted.insert(rec.doc_id.as_str(), set).is_some() {
            fail!("duplicate doc_id `{}` in {}", rec.doc_id, args.pred.display());
        }
    }

    let mut doc_ids = Vec::with_capacity(gold_records.len());
    let mut gold = Vec::with_capacity(gold_records.len());
    let mut pred = Vec::with_capacity(gold_records.len());
    for (i, rec) in gold_records.iter().enumerate() {
        let set = resolve_labels(&tree, &rec.labels, i + 1)
            .with_context(|| format!("reading {}", args.gold.display()))?;
        let Some(p) = predicted.remove(rec.doc_id.as_str()) else {
            fail!("doc_id `{}` has no prediction in {}", rec.doc_id, args.pred.display());
        };
        doc_ids.push(rec.doc_id.clone());
        gold.push(set);
        pred.push(p);
    }
    if let Some(extra) = pred_records.iter().find(|r| predicted.contains_key(r.doc_id.as_str())) {
        fail!(
            "doc_id `{}` in {} is not in {}",
            extra.doc_id,
            args.pred.display(),
            args.gold.display()
        );
    }

    let report = EvalReport::build(&doc_ids, &gold, &pred, &tree)?;
    write_json(&args.out, &report)?;
    println!("{}", report.summary());
    Ok(())
}
