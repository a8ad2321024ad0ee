//! Command-line definitions and their merge with a config file.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, Parser, Subcommand};
use facemorph_core::RegistrationParams;

use crate::config::{parse_kappa, ConfigFile, PipelineConfig, DEFAULT_ALPHA, DEFAULT_DOWNSAMPLE, DEFAULT_FMR, DEFAULT_SEED};

#[derive(Debug, Parser)]
#[command(name = "facemorph", version, about = "Colored point-cloud face morphing and morph vulnerability metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register SOURCE onto TARGET and write the transform, displacements and aligned source.
    Register {
        source: PathBuf,
        target: PathBuf,
        #[command(flatten)]
        reg: RegArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Register one pair and write the blended morph.
    Morph {
        source: PathBuf,
        target: PathBuf,
        #[command(flatten)]
        reg: RegArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate one morph per row of a pairing list (`subject_a,subject_b,morph_id[,alpha]`).
    Pipeline {
        pairing: PathBuf,
        #[command(flatten)]
        reg: RegArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compute thresholds, G-MAP-MA per FRS, G-MAP-MAMF and the quadrant scatter.
    Eval {
        #[command(flatten)]
        inputs: ScoreInputs,
        /// FTAR table `frs_id,attempt,ftar`; missing entries count as 0.
        #[arg(long)]
        ftar: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Export the per-comparison quadrant scatter only.
    Quadrants {
        #[command(flatten)]
        inputs: ScoreInputs,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
pub struct RegArgs {
    /// Gaussian kernel bandwidth of the deformation prior.
    #[arg(long, default_value_t = RegistrationParams::default().beta)]
    pub beta: f64,
    /// Deformation regularization weight.
    #[arg(long, default_value_t = RegistrationParams::default().lambda)]
    pub lambda: f64,
    /// Outlier probability in [0, 1).
    #[arg(long, default_value_t = RegistrationParams::default().omega)]
    pub omega: f64,
    /// Scale of the initial residual variance.
    #[arg(long, default_value_t = RegistrationParams::default().gamma)]
    pub gamma: f64,
    /// Mixing-weight concentration; `inf` keeps weights uniform.
    #[arg(long, default_value = "inf", value_parser = parse_kappa)]
    pub kappa: f64,
    /// Convergence threshold on the relative change of sigma^2.
    #[arg(long, default_value_t = RegistrationParams::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = RegistrationParams::default().max_iters)]
    pub max_iters: usize,
    /// Add the posterior covariance terms to the sigma^2 and scale updates.
    #[arg(long, default_value_t = false)]
    pub sigma_correction: bool,
    /// Skip the step that folds the rigid part of the displacement into the similarity transform.
    #[arg(long, default_value_t = false)]
    pub no_rebalance: bool,
    /// Blend weight of the source parent.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Maximum vertices kept per cloud before registration.
    #[arg(long, default_value_t = DEFAULT_DOWNSAMPLE)]
    pub downsample: usize,
    /// Run seed; pipeline pair i uses seed + i.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Flat `key = value` file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreInputs {
    /// Score table `morph_id,morph_type,frs_id,attempt,score_s1,score_s2`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Non-mated scores `frs_id,score`.
    #[arg(long)]
    pub nonmated: PathBuf,
    /// Target false match rate for each FRS threshold.
    #[arg(long, default_value_t = DEFAULT_FMR)]
    pub fmr: f64,
}

/// Flag value when given on the command line, else the config file value,
/// else the flag default.
struct Resolver<'a> {
    matches: &'a ArgMatches,
    file: ConfigFile,
}

impl<'a> Resolver<'a> {
    fn new(matches: &'a ArgMatches, common: &CommonArgs) -> Result<Self> {
        let file = match &common.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        Ok(Self { matches, file })
    }

    fn explicit(&self, key: &str) -> bool {
        self.matches.value_source(key) == Some(ValueSource::CommandLine)
    }

    fn pick<T>(&self, key: &str, flag: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        if self.explicit(key) {
            return Ok(flag);
        }
        Ok(self.file.get(key)?.unwrap_or(flag))
    }
}

fn resolve_pipeline(matches: &ArgMatches, reg: &RegArgs, common: &CommonArgs) -> Result<PipelineConfig> {
    let r = Resolver::new(matches, common)?;
    let kappa = if r.explicit("kappa") {
        reg.kappa
    } else {
        match r.file.get::<String>("kappa")? {
            Some(s) => parse_kappa(&s).map_err(|e| anyhow!("config key `kappa`: {e}"))?,
            None => reg.kappa,
        }
    };
    let rebalance = if r.explicit("no_rebalance") {
        !reg.no_rebalance
    } else {
        r.file.get("rebalance")?.unwrap_or(!reg.no_rebalance)
    };
    let config = PipelineConfig {
        registration: RegistrationParams {
            beta: r.pick("beta", reg.beta)?,
            lambda: r.pick("lambda", reg.lambda)?,
            omega: r.pick("omega", reg.omega)?,
            gamma: r.pick("gamma", reg.gamma)?,
            kappa,
            tol: r.pick("tol", reg.tol)?,
            max_iters: r.pick("max_iters", reg.max_iters)?,
            use_sigma_correction: r.pick("sigma_correction", reg.sigma_correction)?,
            rebalance,
        },
        alpha: r.pick("alpha", reg.alpha)?,
        downsample: r.pick("downsample", reg.downsample)?,
        seed: r.pick("seed", reg.seed)?,
        out: r.pick("out", common.out.clone())?,
        fmr: DEFAULT_FMR,
    };
    config.validate()?;
    Ok(config)
}

/// Resolved `(fmr, out)` for the score commands.
fn resolve_scores(matches: &ArgMatches, inputs: &ScoreInputs, common: &CommonArgs) -> Result<(f64, PathBuf)> {
    let r = Resolver::new(matches, common)?;
    let fmr: f64 = r.pick("fmr", inputs.fmr)?;
    if !(fmr > 0.0 && fmr < 1.0) {
        return Err(anyhow!("fmr must lie in (0, 1), got {fmr}"));
    }
    Ok((fmr, r.pick("out", common.out.clone())?))
}

/// A fully resolved command.
#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Register { source: PathBuf, target: PathBuf, config: PipelineConfig },
    Morph { source: PathBuf, target: PathBuf, config: PipelineConfig },
    Pipeline { pairing: PathBuf, config: PipelineConfig },
    Eval { scores: PathBuf, nonmated: PathBuf, ftar: Option<PathBuf>, fmr: f64, out: PathBuf },
    Quadrants { scores: PathBuf, nonmated: PathBuf, fmr: f64, out: PathBuf },
}

pub fn resolve(cli: Cli, matches: &ArgMatches) -> Result<Job> {
    let sub = matches
        .subcommand()
        .map(|(_, m)| m)
        .ok_or_else(|| anyhow!("missing subcommand"))?;
    Ok(match cli.command {
        Command::Register { source, target, reg, common } => Job::Register {
            source,
            target,
            config: resolve_pipeline(sub, &reg, &common)?,
        },
        Command::Morph { source, target, reg, common } => Job::Morph {
            source,
            target,
            config: resolve_pipeline(sub, &reg, &common)?,
        },
        Command::Pipeline { pairing, reg, common } => Job::Pipeline {
            pairing,
            config: resolve_pipeline(sub, &reg, &common)?,
        },
        Command::Eval { inputs, ftar, common } => {
            let (fmr, out) = resolve_scores(sub, &inputs, &common)?;
            Job::Eval {
                scores: inputs.scores,
                nonmated: inputs.nonmated,
                ftar,
                fmr,
                out,
            }
        }
        Command::Quadrants { inputs, common } => {
            let (fmr, out) = resolve_scores(sub, &inputs, &common)?;
            Job::Quadrants {
                scores: inputs.scores,
                nonmated: inputs.nonmated,
                fmr,
                out,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{CommandFactory, FromArgMatches};

    fn job(args: &[&str]) -> Result<Job> {
        let matches = Cli::command().try_get_matches_from(args)?;
        let cli = Cli::from_arg_matches(&matches)?;
        resolve(cli, &matches)
    }

    fn config_of(j: Job) -> PipelineConfig {
        match j {
            Job::Register { config, .. } | Job::Morph { config, .. } | Job::Pipeline { config, .. } => config,
            other => panic!("no pipeline config in {other:?}"),
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_match_library_defaults() {
        let c = config_of(job(&["facemorph", "register", "a.ply", "b.ply"]).unwrap());
        assert_eq!(c, PipelineConfig::default());
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "beta = 0.7\nlambda = 9\nkappa = 4\nrebalance = false\nout = from_file\n").unwrap();
        let c = config_of(
            job(&["facemorph", "pipeline", "p.csv", "--config", cfg.to_str().unwrap(), "--lambda", "3"]).unwrap(),
        );
        assert_eq!(c.registration.beta, 0.7);
        assert_eq!(c.registration.lambda, 3.0);
        assert_eq!(c.registration.kappa, 4.0);
        assert!(!c.registration.rebalance);
        assert_eq!(c.out, PathBuf::from("from_file"));
        assert_eq!(c.registration.omega, RegistrationParams::default().omega);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(job(&["facemorph", "morph", "a", "b", "--alpha", "1.5"]).is_err());
        assert!(job(&["facemorph", "morph", "a", "b", "--omega", "1"]).is_err());
        assert!(job(&["facemorph", "eval", "--scores", "s", "--nonmated", "n", "--fmr", "0"]).is_err());
    }

    #[test]
    fn eval_reads_fmr_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "fmr = 0.01\n").unwrap();
        let j = job(&["facemorph", "eval", "--scores", "s", "--nonmated", "n", "--config", cfg.to_str().unwrap()]).unwrap();
        match j {
            Job::Eval { fmr, .. } => assert_eq!(fmr, 0.01),
            other => panic!("{other:?}"),
        }
    }
}
