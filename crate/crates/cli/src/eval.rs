//! Score table I/O and the `eval` / `quadrants` commands.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use facemorph_core::{quadrant_classify, threshold_at_fmr, FrsThreshold, FtarTable, GmapReport, ScoreRecord};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct ScoreRow {
    morph_id: String,
    morph_type: String,
    frs_id: String,
    attempt: u32,
    score_s1: f64,
    score_s2: f64,
}

#[derive(Debug, Deserialize)]
struct NonmatedRow {
    frs_id: String,
    score: f64,
}

#[derive(Debug, Deserialize)]
struct FtarRow {
    frs_id: String,
    attempt: u32,
    ftar: f64,
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Deserializes every row, naming the file and line of the first bad one.
fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = reader(path)?;
    let mut rows = Vec::new();
    for (i, row) in rdr.deserialize::<T>().enumerate() {
        let line = i + 2;
        rows.push(row.map_err(|e| anyhow!("{} line {line}: {e}", path.display()))?);
    }
    Ok(rows)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    read_rows::<ScoreRow>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            ScoreRecord::new(r.morph_id, r.morph_type, r.frs_id, r.attempt, vec![r.score_s1, r.score_s2])
                .map_err(|e| anyhow!("{} line {}: {e}", path.display(), i + 2))
        })
        .collect()
}

pub fn read_nonmated(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut by_frs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, r) in read_rows::<NonmatedRow>(path)?.into_iter().enumerate() {
        if !r.score.is_finite() {
            bail!("{} line {}: non-finite score", path.display(), i + 2);
        }
        by_frs.entry(r.frs_id).or_default().push(r.score);
    }
    Ok(by_frs)
}

pub fn read_ftar(path: &Path) -> Result<FtarTable> {
    let mut table = FtarTable::new();
    for (i, r) in read_rows::<FtarRow>(path)?.into_iter().enumerate() {
        table
            .insert(r.attempt, &r.frs_id, r.ftar)
            .map_err(|e| anyhow!("{} line {}: {e}", path.display(), i + 2))?;
    }
    Ok(table)
}

/// One threshold per FRS that appears in `records`, in FRS order.
pub fn thresholds_for(
    records: &[ScoreRecord],
    nonmated: &BTreeMap<String, Vec<f64>>,
    fmr: f64,
) -> Result<Vec<FrsThreshold>> {
    let frs: std::collections::BTreeSet<&str> = records.iter().map(|r| r.frs_id.as_str()).collect();
    frs.into_iter()
        .map(|l| {
            let scores = nonmated
                .get(l)
                .ok_or_else(|| anyhow!("no non-mated scores for FRS `{l}`"))?;
            threshold_at_fmr(l, scores, fmr).with_context(|| format!("threshold for FRS `{l}`"))
        })
        .collect()
}

pub fn report_csv(report: &GmapReport) -> String {
    let mut text = String::from("frs_id,gmap_ma,quad1,quad2,quad3,quad4\n");
    for (frs, value) in &report.per_frs {
        let q = report.quadrant_counts.get(frs).copied().unwrap_or_default();
        text.push_str(&format!("{frs},{value},{},{},{},{}\n", q[0], q[1], q[2], q[3]));
    }
    match report.cross_frs {
        Some(v) => text.push_str(&format!("MAMF,{v}\n")),
        None => text.push_str("MAMF,NA\n"),
    }
    text
}

pub fn thresholds_csv(thresholds: &[FrsThreshold]) -> String {
    let mut text = String::from("frs_id,tau,fmr,saturated\n");
    for t in thresholds {
        text.push_str(&format!("{},{},{},{}\n", t.frs_id, t.tau, t.fmr_target, t.saturated));
    }
    text
}

pub fn quadrants_csv(records: &[ScoreRecord], thresholds: &[FrsThreshold]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["morph_id", "frs_id", "attempt", "score_s1", "score_s2", "quadrant"])?;
    for r in records {
        let t = thresholds
            .iter()
            .find(|t| t.frs_id == r.frs_id)
            .ok_or_else(|| anyhow!("no threshold for FRS `{}`", r.frs_id))?;
        let q = quadrant_classify(r, t)?;
        writer.write_record([
            r.morph_id.clone(),
            r.frs_id.clone(),
            r.attempt.to_string(),
            r.subject_scores[0].to_string(),
            r.subject_scores[1].to_string(),
            q.to_string(),
        ])?;
    }
    Ok(String::from_utf8(writer.into_inner()?)?)
}

fn write_out(out: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let path = out.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

/// `eval`: thresholds, per-FRS G-MAP-MA, G-MAP-MAMF and the quadrant
/// scatter.
pub fn cmd_eval(scores: &Path, nonmated: &Path, ftar: Option<&Path>, fmr: f64, out: &Path) -> Result<GmapReport> {
    let records = read_scores(scores)?;
    let nonmated = read_nonmated(nonmated)?;
    let ftar = match ftar {
        Some(p) => read_ftar(p)?,
        None => FtarTable::new(),
    };
    let thresholds = thresholds_for(&records, &nonmated, fmr)?;
    let report = GmapReport::compute(&records, &thresholds, &ftar)?;

    write_out(out, "report.csv", &report_csv(&report))?;
    write_out(out, "thresholds.csv", &thresholds_csv(&thresholds))?;
    write_out(out, "quadrants.csv", &quadrants_csv(&records, &thresholds)?)?;

    for t in &thresholds {
        let flag = if t.saturated { " (saturated)" } else { "" };
        println!(
            "G-MAP-MA[{}] = {:.2}  tau = {}{flag}",
            t.frs_id, report.per_frs[&t.frs_id], t.tau
        );
    }
    match report.cross_frs {
        Some(v) => println!("G-MAP-MAMF = {v:.2}"),
        None => println!("G-MAP-MAMF = NA (needs at least two FRS)"),
    }
    Ok(report)
}

/// `quadrants`: only the scatter export and per-FRS quadrant counts.
pub fn cmd_quadrants(scores: &Path, nonmated: &Path, fmr: f64, out: &Path) -> Result<()> {
    let records = read_scores(scores)?;
    let nonmated = read_nonmated(nonmated)?;
    let thresholds = thresholds_for(&records, &nonmated, fmr)?;
    write_out(out, "quadrants.csv", &quadrants_csv(&records, &thresholds)?)?;
    for t in &thresholds {
        let mut counts = [0usize; 4];
        for r in records.iter().filter(|r| r.frs_id == t.frs_id) {
            counts[quadrant_classify(r, t)?.index()] += 1;
        }
        println!(
            "{}: I={} II={} III={} IV={}",
            t.frs_id, counts[0], counts[1], counts[2], counts[3]
        );
    }
    Ok(())
}
