//! Command-line front end for `facemorph`: single-pair registration and
//! morphing, pairing-list batches and vulnerability evaluation.

pub mod args;
pub mod config;
pub mod eval;
pub mod pairing;
pub mod pipeline;

use anyhow::Result;

use args::Job;

/// Runs a resolved command and returns the process exit code.
pub fn run(job: Job) -> Result<i32> {
    match job {
        Job::Register { source, target, config } => Ok(pipeline::cmd_register(&source, &target, &config)?.exit_code()),
        Job::Morph { source, target, config } => Ok(pipeline::cmd_morph(&source, &target, &config)?.exit_code()),
        Job::Pipeline { pairing, config } => pipeline::cmd_pipeline(&pairing, &config).map(|_| 0),
        Job::Eval { scores, nonmated, ftar, fmr, out } => {
            eval::cmd_eval(&scores, &nonmated, ftar.as_deref(), fmr, &out).map(|_| 0)
        }
        Job::Quadrants { scores, nonmated, fmr, out } => eval::cmd_quadrants(&scores, &nonmated, fmr, &out).map(|_| 0),
    }
}
