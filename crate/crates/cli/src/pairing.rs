//! Pairing lists: which two subjects form each morph.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub subject_a: PathBuf,
    pub subject_b: PathBuf,
    pub morph_id: String,
    pub alpha: Option<f64>,
    /// Why this row cannot be processed. Rows are kept so the manifest
    /// stays aligned with the input.
    pub invalid: Option<String>,
}

/// Reads `subject_a,subject_b,morph_id[,alpha]` with a header row. Relative
/// subject paths resolve against the pairing file's directory.
///
/// File-level problems (unreadable, wrong header, wrong column count) are
/// errors; row-level problems mark that row invalid.
pub fn load_pairing(path: &Path) -> Result<Vec<Pair>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read pairing list {}", path.display()))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_pairing(&text, base).with_context(|| format!("in pairing list {}", path.display()))
}

pub fn parse_pairing(text: &str, base: &Path) -> Result<Vec<Pair>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().context("cannot read header row")?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["subject_a", "subject_b", "morph_id"] && names != ["subject_a", "subject_b", "morph_id", "alpha"] {
        bail!("header must be `subject_a,subject_b,morph_id[,alpha]`, got `{}`", names.join(","));
    }

    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for (index, row) in reader.records().enumerate() {
        let line = index + 2;
        let row = row.with_context(|| format!("line {line}: malformed CSV"))?;
        if row.len() != 3 && row.len() != 4 {
            bail!("line {line}: expected 3 or 4 columns, got {}", row.len());
        }
        let resolve = |s: &str| {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let subject_a = resolve(&row[0]);
        let subject_b = resolve(&row[1]);
        let morph_id = row[2].to_string();
        let mut invalid = None;

        let alpha = match row.get(3).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => match s.parse::<f64>() {
                Ok(a) if (0.0..=1.0).contains(&a) => Some(a),
                _ => {
                    invalid = Some(format!("alpha `{s}` is not a number in [0, 1]"));
                    None
                }
            },
        };
        if morph_id.is_empty() || morph_id.contains(['/', '\\']) || morph_id == "." || morph_id == ".." {
            invalid.get_or_insert_with(|| format!("morph_id `{morph_id}` is not a usable file name"));
        }
        if subject_a == subject_b {
            invalid.get_or_insert_with(|| "subject_a and subject_b are the same file".to_string());
        }
        if !seen.insert(morph_id.clone()) {
            invalid.get_or_insert_with(|| format!("duplicate morph_id `{morph_id}`"));
        }
        pairs.push(Pair {
            subject_a,
            subject_b,
            morph_id,
            alpha,
            invalid,
        });
    }
    Ok(pairs)
}
