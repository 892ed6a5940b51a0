use std::fs;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use ntd_core::corpus::synth::{gen_synthetic, LabelDistribution, SynthSpec};
use ntd_core::corpus::write_records_file;

use crate::args::{GenDataArgs, LabelDist};
use crate::io::print_config;
use crate::Outcome;

#[derive(Serialize)]
struct Resolved<'a> {
    spec: &'a SynthSpec,
    docs: usize,
    split: [usize; 3],
    out_dir: &'a std::path::Path,
}

/// Sizes proportional to `weights`; train and val are floored, test takes
/// the remainder.
pub fn split_sizes(total: usize, spec: &str) -> Result<[usize; 3]> {
    let parts = spec
        .split(',')
        .map(|p| p.trim().parse::<u64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("--split `{spec}` must be three comma-separated integers"))?;
    let [a, b, c] = parts[..] else {
        bail!("--split `{spec}` must have exactly three parts");
    };
    let sum = a + b + c;
    if sum == 0 {
        bail!("--split `{spec}` must not be all zero");
    }
    let share = |w: u64| ((total as u128 * w as u128) / sum as u128) as usize;
    let (train, val) = (share(a), share(b));
    Ok([train, val, total - train - val])
}

pub fn run(args: GenDataArgs) -> Outcome {
    let spec = SynthSpec {
        branching: args.branching,
        depth: args.depth,
        keywords_per_node: args.keywords_per_node,
        labels_per_doc: args.labels_per_doc,
        noise_rate: args.noise,
        repeats: args.repeats,
        noise_vocab: args.noise_vocab,
        label_distribution: match args.label_dist {
            LabelDist::Uniform => LabelDistribution::Uniform,
            LabelDist::Zipf => LabelDistribution::Zipf {
                exponent: args.zipf_exponent,
            },
        },
        seed: args.seed,
    };
    let total = args.docs as usize;
    let split = split_sizes(total, &args.split)?;
    print_config(
        "gen-data",
        &Resolved {
            spec: &spec,
            docs: total,
            split,
            out_dir: &args.out_dir,
        },
    );

    let (tree, records) = gen_synthetic(&spec, total)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let ontology = args.out_dir.join("ontology.tsv");
    fs::write(&ontology, tree.to_tsv()).with_context(|| format!("writing {}", ontology.display()))?;
    let (train, rest) = records.split_at(split[0]);
    let (val, test) = rest.split_at(split[1]);
    for (name, part) in [("train", train), ("val", val), ("test", test)] {
        write_records_file(&args.out_dir.join(format!("{name}.jsonl")), part)?;
    }
    eprintln!(
        "wrote {} nodes and {}/{}/{} documents to {}",
        tree.len() - 1,
        train.len(),
        val.len(),
        test.len(),
        args.out_dir.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_rules() {
        assert_eq!(split_sizes(100, "70,15,15").unwrap(), [70, 15, 15]);
        assert_eq!(split_sizes(2800, "2000,400,400").unwrap(), [2000, 400, 400]);
        assert_eq!(split_sizes(10, "70,15,15").unwrap(), [7, 1, 2]);
        assert!(split_sizes(10, "1,2").is_err());
        assert!(split_sizes(10, "0,0,0").is_err());
        assert!(split_sizes(10, "a,b,c").is_err());
    }
}
