//! Registration and morph generation commands.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use facemorph_core::{
    correspondence_targets, downsample, load_ply, morph, register, save_ply, MorphConfig, PointCloud,
    RegistrationOutcome,
};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::pairing::{load_pairing, Pair};

/// Process exit status of a registration-driven command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    NotConverged,
}

impl RunStatus {
    pub fn from_outcome(outcome: &RegistrationOutcome) -> Self {
        if outcome.converged {
            Self::Converged
        } else {
            Self::NotConverged
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Self::Converged => 0,
            Self::NotConverged => 2,
        }
    }
}

fn load_sampled(path: &Path, count: usize, seed: u64) -> Result<PointCloud> {
    let cloud = load_ply(path).with_context(|| format!("cannot load {}", path.display()))?;
    Ok(downsample(&cloud, count, seed))
}

/// Loads, downsamples and registers `source` onto `target`.
pub fn register_files(source: &Path, target: &Path, config: &PipelineConfig, seed: u64) -> Result<RegistrationOutcome> {
    let src = load_sampled(source, config.downsample, seed)?;
    let tgt = load_sampled(target, config.downsample, seed)?;
    register(&src, &tgt, &config.registration)
        .with_context(|| format!("registering {} onto {}", source.display(), target.display()))
}

/// Blends the aligned source with its correspondence targets and returns
/// the morph in the target's original units.
pub fn morph_from_outcome(outcome: &RegistrationOutcome, alpha: f64) -> Result<PointCloud> {
    let pst1 = outcome.aligned_source();
    let (coords, colors) = correspondence_targets(&outcome.state, &outcome.target)?;
    let blended = morph(&pst1, &coords, &colors, outcome.target.id(), &MorphConfig::new(alpha)?)?;
    Ok(outcome.target_normalization.denormalize(&blended))
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn transform_csv(outcome: &RegistrationOutcome) -> String {
    let t = &outcome.transform;
    let mut header = vec!["s".to_string()];
    let mut row = vec![t.scale.to_string()];
    for i in 0..3 {
        for j in 0..3 {
            header.push(format!("r{i}{j}"));
            row.push(t.rotation[(i, j)].to_string());
        }
    }
    for (name, v) in ["tx", "ty", "tz"].iter().zip(t.translation.iter()) {
        header.push(name.to_string());
        row.push(v.to_string());
    }
    format!("{}\n{}\n", header.join(","), row.join(","))
}

pub fn displacements_csv(outcome: &RegistrationOutcome) -> String {
    let mut text = String::from("vx,vy,vz\n");
    for v in &outcome.displacement {
        text.push_str(&format!("{},{},{}\n", v.x, v.y, v.z));
    }
    text
}

pub fn normalization_csv(outcome: &RegistrationOutcome) -> String {
    let mut text = String::from("cloud,cx,cy,cz,scale\n");
    for (name, rec) in [("source", &outcome.source_normalization), ("target", &outcome.target_normalization)] {
        let c = rec.centroid;
        text.push_str(&format!("{name},{},{},{},{}\n", c.x, c.y, c.z, rec.scale));
    }
    text
}

/// `register`: writes the transform, displacements, normalizations and the
/// aligned source.
pub fn cmd_register(source: &Path, target: &Path, config: &PipelineConfig) -> Result<RunStatus> {
    let outcome = register_files(source, target, config, config.seed)?;
    let out = &config.out;
    create_dir(out)?;
    write_file(&out.join("transform.csv"), &transform_csv(&outcome))?;
    write_file(&out.join("displacements.csv"), &displacements_csv(&outcome))?;
    write_file(&out.join("normalization.csv"), &normalization_csv(&outcome))?;
    save_ply(&outcome.aligned_source_original_units(), out.join("aligned_source.ply"))?;
    report_convergence(&outcome);
    Ok(RunStatus::from_outcome(&outcome))
}

/// `morph`: registers one pair and writes the blended cloud.
pub fn cmd_morph(source: &Path, target: &Path, config: &PipelineConfig) -> Result<RunStatus> {
    let outcome = register_files(source, target, config, config.seed)?;
    let blended = morph_from_outcome(&outcome, config.alpha)?;
    create_dir(&config.out)?;
    let path = config.out.join(format!("{}.ply", blended.id()));
    save_ply(&blended, &path)?;
    println!("{}", path.display());
    report_convergence(&outcome);
    Ok(RunStatus::from_outcome(&outcome))
}

fn report_convergence(outcome: &RegistrationOutcome) {
    if outcome.converged {
        log::info!("converged after {} iterations", outcome.iterations);
    } else {
        eprintln!(
            "warning: registration did not converge within {} iterations (outputs written)",
            outcome.iterations
        );
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub morph_id: String,
    pub subject_a: String,
    pub subject_b: String,
    pub alpha: f64,
    pub status: &'static str,
    pub iterations: Option<usize>,
    pub sigma2: Option<f64>,
    pub message: String,
}

fn process_pair(index: usize, pair: &Pair, config: &PipelineConfig) -> ManifestRow {
    let alpha = pair.alpha.unwrap_or(config.alpha);
    let mut row = ManifestRow {
        morph_id: pair.morph_id.clone(),
        subject_a: pair.subject_a.display().to_string(),
        subject_b: pair.subject_b.display().to_string(),
        alpha,
        status: "invalid",
        iterations: None,
        sigma2: None,
        message: String::new(),
    };
    if let Some(reason) = &pair.invalid {
        row.message = reason.clone();
        return row;
    }
    let seed = config.seed.wrapping_add(index as u64);
    let result = register_files(&pair.subject_a, &pair.subject_b, config, seed).and_then(|outcome| {
        let blended = morph_from_outcome(&outcome, alpha)?.with_id(pair.morph_id.clone());
        save_ply(&blended, config.out.join(format!("{}.ply", pair.morph_id)))?;
        Ok(outcome)
    });
    match result {
        Ok(outcome) => {
            row.status = if outcome.converged { "converged" } else { "not_converged" };
            row.iterations = Some(outcome.iterations);
            row.sigma2 = Some(outcome.state.sigma2);
        }
        Err(e) => {
            row.status = "failed";
            row.message = format!("{e:#}");
            log::warn!("pair `{}` failed: {}", pair.morph_id, row.message);
        }
    }
    row
}

pub fn manifest_csv(rows: &[ManifestRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["morph_id", "subject_a", "subject_b", "alpha", "status", "iterations", "sigma2", "message"])?;
    for r in rows {
        writer.write_record([
            r.morph_id.clone(),
            r.subject_a.clone(),
            r.subject_b.clone(),
            r.alpha.to_string(),
            r.status.to_string(),
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
            r.sigma2.map(|s| format!("{s:e}")).unwrap_or_default(),
            r.message.clone(),
        ])?;
    }
    Ok(String::from_utf8(writer.into_inner()?)?)
}

/// `pipeline`: one morph per pairing row. Per-pair failures are recorded in
/// `manifest.csv` and do not stop the batch.
pub fn cmd_pipeline(pairing: &Path, config: &PipelineConfig) -> Result<Vec<ManifestRow>> {
    let pairs = load_pairing(pairing)?;
    create_dir(&config.out)?;
    write_file(&config.out.join("config.txt"), &config.to_config_text())?;

    let rows: Vec<ManifestRow> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| process_pair(i, pair, config))
        .collect();

    let manifest = manifest_csv(&rows)?;
    let path = config.out.join("manifest.csv");
    let mut file = fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    file.write_all(manifest.as_bytes())?;

    let ok = rows.iter().filter(|r| r.status == "converged").count();
    println!("{ok}/{} pairs converged; manifest at {}", rows.len(), path.display());
    Ok(rows)
}
