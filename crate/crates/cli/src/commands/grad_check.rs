use std::time::Instant;

use anyhow::anyhow;
use serde::Serialize;

use ntd_core::corpus::synth::complete_tree;
use ntd_core::corpus::Vocabulary;
use ntd_core::diffcore::{grad_check, GradCheckConfig, Tape};
use ntd_core::model::mask::{self, Recording};
use ntd_core::model::{DocumentObjective, ModelDims, NtdConfig, NtdModel};
use ntd_core::ontology::{FrequencyTable, NodeId};

use crate::args::GradCheckArgs;
use crate::io::print_config;
use crate::{Failure, Outcome};

const FIXTURE_TEXT: [&str; 4] = ["alpha", "beta", "gamma", "delta"];

#[derive(Serialize)]
struct Resolved<'a> {
    model: &'a NtdConfig,
    variant: &'a str,
    seed: u64,
    check: &'a GradCheckConfig,
}

pub fn run(args: GradCheckArgs) -> Outcome {
    let start = Instant::now();
    let tree = complete_tree(2, 2);
    let vocab = Vocabulary::from_tokens(FIXTURE_TEXT.iter().map(|s| s.to_string()));
    let tokens = vocab.encode(&FIXTURE_TEXT);
    let leaves: Vec<NodeId> = tree
        .node_ids()
        .filter(|&v| tree.children(v).is_ok_and(|c| c.is_empty()))
        .collect();
    let gold = tree.closure(&[leaves[0], leaves[leaves.len() - 1]])?;
    let freq = FrequencyTable::from_counts(vec![0, 10, 4, 1, 2, 3, 9]);

    let dims = ModelDims {
        d_w: args.d_w,
        d_h: args.d_h,
        d_s: args.d_s,
        d_n: args.d_n,
        d_a: args.d_a,
    };
    dims.validate()?;
    let mut config = NtdConfig::new(dims, vocab.len(), tree.len());
    config.attention = args.attention.clone();
    let variant = mask::lookup(&args.variant).ok_or_else(|| anyhow!("unknown variant `{}`", args.variant))?;
    if !(args.step > 0.0 && args.step.is_finite()) {
        fail!("--step must be positive");
    }
    if args.tolerance.is_nan() || args.tolerance < 0.0 {
        fail!("--tolerance must be non-negative");
    }
    let check = GradCheckConfig {
        step: args.step,
        tolerance: args.tolerance,
        max_coords_per_param: if args.max_coords == 0 { usize::MAX } else { args.max_coords },
        seed: args.seed,
    };
    print_config(
        "grad-check",
        &Resolved {
            model: &config,
            variant: variant.name(),
            seed: args.seed,
            check: &check,
        },
    );

    let mut model = NtdModel::new(config, args.seed)?;
    let (net, params) = model.parts_mut();
    let mut recorder = Recording::new(variant.mask(&freq, args.seed));
    {
        let mut tape = Tape::new(params);
        net.document_loss(&mut tape, &tree, &tokens, &gold, &mut recorder)?;
    }
    let mut objective = DocumentObjective::new(net, &tree, &tokens, &gold, recorder.freeze())?;
    let report = grad_check(&mut objective, params, &check).map_err(|e| Failure::Numeric(e.into()))?;

    println!("loss {:.6}", report.loss);
    for g in &report.groups {
        println!(
            "{:<12} coords={:<5} max_rel_err={:.3e} {}",
            g.group,
            g.coords_checked,
            g.max_rel_err,
            if g.passed { "PASS" } else { "FAIL" }
        );
    }
    let secs = start.elapsed().as_secs_f64();
    eprintln!("grad-check finished in {secs:.2}s");
    if report.passed() {
        println!("grad-check PASS");
        Ok(())
    } else {
        println!("grad-check FAIL");
        Err(Failure::Numeric(anyhow!(
            "relative gradient error exceeds tolerance {}",
            args.tolerance
        )))
    }
}
