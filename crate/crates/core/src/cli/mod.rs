//! Command-line front end: `gen`, `train`, `eval` and `score-export`.
//!
//! Every configuration key is also a flag (`lr_decay` becomes
//! `--lr-decay`). Exit codes: 0 ok, 2 config error, 3 data error,
//! 4 numeric failure.

mod commands;
mod config;

use std::ffi::OsString;

use clap::{Arg, ArgAction, Command};

use crate::error::{Error, Result};

pub use commands::{cmd_eval, cmd_gen, cmd_score_export, cmd_train, load_split, TrainOutcome};
pub use config::{PhaseSel, RunConfig, KEYS, SEED_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmd {
    Gen,
    Train,
    Eval,
    ScoreExport,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> Command {
    let mut common = vec![Arg::new("config")
        .long("config")
        .short('c')
        .value_name("FILE")
        .global(true)
        .help("key = value configuration file")];
    for &key in KEYS {
        common.push(
            Arg::new(key)
                .long(flag_name(key))
                .value_name("VALUE")
                .global(true)
                .action(ArgAction::Set),
        );
    }
    Command::new("epica")
        .about("Episode-based cross-attention network for attribute-object recognition")
        .subcommand_required(true)
        .args(common)
        .subcommand(Command::new("gen").about("Generate a synthetic dataset"))
        .subcommand(Command::new("train").about("Train a model and write checkpoints and metrics"))
        .subcommand(Command::new("eval").about("Evaluate a checkpoint and write a report"))
        .subcommand(Command::new("score-export").about("Write the test score matrix as CSV"))
}

/// Parsed invocation: the command and its resolved configuration.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub cmd: Cmd,
    pub config: RunConfig,
}

/// Parses arguments and resolves the configuration layers. `seed_env` is
/// the value of the seed override variable, if set.
pub fn parse_args<I, T>(args: I, seed_env: Option<&str>) -> Result<Invocation>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let m = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return Err(Error::Config(e.to_string())),
    };
    let (name, sub) = m.subcommand().expect("subcommand required");
    let cmd = match name {
        "gen" => Cmd::Gen,
        "train" => Cmd::Train,
        "eval" => Cmd::Eval,
        _ => Cmd::ScoreExport,
    };
    let file = match sub.get_one::<String>("config") {
        Some(path) => Some(
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("config file {path}: {e}")))?,
        ),
        None => None,
    };
    let flags: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|&k| sub.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    let config = RunConfig::resolve(file.as_deref(), seed_env, &flags)?;
    Ok(Invocation { cmd, config })
}

/// Runs a parsed invocation and returns the text to print.
pub fn execute(inv: &Invocation) -> Result<String> {
    let cfg = &inv.config;
    match inv.cmd {
        Cmd::Gen => cmd_gen(cfg),
        Cmd::Train => {
            let out = cmd_train(cfg)?;
            let last = out.history.last_loss().unwrap_or(f64::NAN);
            Ok(format!(
                "trained {} epochs, final loss {last:.5}, checkpoint {}\n{}",
                out.history.epochs.len(),
                cfg.checkpoint.display(),
                out.report.summary()
            ))
        }
        Cmd::Eval => Ok(cmd_eval(cfg)?.summary()),
        Cmd::ScoreExport => {
            let m = cmd_score_export(cfg)?;
            Ok(format!(
                "wrote {} items x {} candidates to {}",
                m.n_items(),
                m.n_candidates(),
                cfg.scores.display()
            ))
        }
    }
}

#[cfg(test)]
mod tests;
