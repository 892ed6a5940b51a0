use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use ntd_core::ontology::OntologyTree;

pub fn read_ontology(path: &Path) -> Result<OntologyTree> {
    OntologyTree::read(path).with_context(|| format!("loading ontology {}", path.display()))
}

/// Pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// One compact JSON object per line.
pub fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

/// Prints the fully resolved configuration of a run.
pub fn print_config<T: Serialize>(command: &str, config: &T) {
    let text = serde_json::to_string(config).expect("config serializes");
    eprintln!("{command} config: {text}");
}
