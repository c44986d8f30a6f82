//! Optional JSON configuration file.
//!
//! ```json
//! { "threads": 4, "simulate-spiked": { "reps": 200, "t-grid": [4, 20] } }
//! ```
//!
//! Top-level scalars set global flags and objects hold the flags of one
//! subcommand. Keys are long flag names (`_` and `-` are interchangeable).
//! Values are turned back into command-line tokens for the flags that were
//! not given explicitly and the command line is parsed again, so config
//! values go through the same validation as flags.

use std::ffi::OsString;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, Parser};
use serde_json::Value;

use crate::args::Cli;
use crate::CliError;

const SUBCOMMANDS: [&str; 5] = ["metrics", "simulate-spiked", "simulate-calibrated", "asymptotics", "sample"];

/// Flags that switch the same setting; one given on the command line hides
/// the other in the config.
const EXCLUSIVE: [(&str, &str); 2] = [("drop_missing", "fail_missing"), ("exact_target", "paper_recipe")];

pub fn apply(cli: Cli, argv: &[OsString]) -> Result<Cli, CliError> {
    let Some(path) = cli.config.clone() else {
        return Ok(cli);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let root: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Value::Object(entries) = root else {
        return Err(CliError::Usage("config must be a JSON object".into()));
    };

    let command = Cli::command();
    let matches = command
        .clone()
        .try_get_matches_from(argv)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let sub_name = cli.command.name();
    let sub_command = command.find_subcommand(sub_name).expect("parsed subcommand exists");
    let sub_matches = matches.subcommand_matches(sub_name).expect("parsed subcommand exists");

    let mut tokens = Vec::new();
    for (key, value) in &entries {
        match value {
            Value::Object(section) => {
                if !SUBCOMMANDS.contains(&key.as_str()) {
                    return Err(CliError::Usage(format!("config: unknown subcommand section {key:?}")));
                }
                if key != sub_name {
                    continue;
                }
                for (k, v) in section {
                    push_tokens(sub_command, sub_matches, k, v, &mut tokens)?;
                }
            }
            _ => {
                if key == "config" {
                    return Err(CliError::Usage("config: nested config files are not supported".into()));
                }
                push_tokens(&command, &matches, key, value, &mut tokens)?;
            }
        }
    }
    if tokens.is_empty() {
        return Ok(cli);
    }
    let mut merged = argv.to_vec();
    merged.extend(tokens.into_iter().map(OsString::from));
    Cli::try_parse_from(merged).map_err(|e| CliError::Usage(format!("config: {e}")))
}

fn on_command_line(matches: &ArgMatches, id: &str) -> bool {
    matches!(matches.try_get_raw(id), Ok(Some(_))) && matches.value_source(id) == Some(ValueSource::CommandLine)
}

fn push_tokens(
    command: &clap::Command,
    matches: &ArgMatches,
    key: &str,
    value: &Value,
    tokens: &mut Vec<String>,
) -> Result<(), CliError> {
    let id = key.replace('-', "_");
    let arg = command
        .get_arguments()
        .find(|a| a.get_id().as_str() == id && a.get_long().is_some())
        .ok_or_else(|| CliError::Usage(format!("config: unknown key {key:?} for {}", command.get_name())))?;
    let long = arg.get_long().expect("checked above");

    let partner = EXCLUSIVE.iter().find_map(|&(a, b)| {
        if a == id {
            Some(b)
        } else if b == id {
            Some(a)
        } else {
            None
        }
    });
    if on_command_line(matches, &id) || partner.is_some_and(|p| on_command_line(matches, p)) {
        return Ok(());
    }

    let takes_value = arg.get_action().takes_values();
    match (takes_value, value) {
        (_, Value::Null) => {}
        (false, Value::Bool(true)) => tokens.push(format!("--{long}")),
        (false, Value::Bool(false)) => {}
        (false, _) => return Err(CliError::Usage(format!("config: {key:?} expects true or false"))),
        (true, Value::Array(items)) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
            tokens.push(format!("--{long}={}", parts.join(",")));
        }
        (true, v) => tokens.push(format!("--{long}={}", scalar(v)?)),
    }
    Ok(())
}

fn scalar(v: &Value) -> Result<String, CliError> {
    match v {
        Value::Number(n) => Ok(n.to_string()),
        Value::String(s) => Ok(s.clone()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(CliError::Usage(format!("config: unsupported value {v}"))),
    }
}
