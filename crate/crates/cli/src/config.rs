//! Merging a TOML config file into the argument list.
//!
//! Keys are long flag names without the dashes. Top-level keys apply to any
//! subcommand that accepts them, and a table named after the subcommand
//! applies to that subcommand only. Flags already on the command line win.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::Path;

use clap::CommandFactory;

use crate::args::Cli;
use crate::CliError;

fn value_to_args(flag: &str, v: &toml::Value, out: &mut Vec<OsString>) -> Result<(), CliError> {
    match v {
        toml::Value::Boolean(true) => out.push(format!("--{flag}").into()),
        toml::Value::Boolean(false) => {}
        toml::Value::String(s) => out.extend([format!("--{flag}").into(), s.into()]),
        toml::Value::Integer(i) => out.extend([format!("--{flag}").into(), i.to_string().into()]),
        toml::Value::Float(f) => out.extend([format!("--{flag}").into(), f.to_string().into()]),
        other => return Err(CliError::Usage(format!("config key `{flag}` has unsupported value {other}"))),
    }
    Ok(())
}

/// Returns `argv` with config values appended for flags it does not set.
pub fn merge(argv: Vec<OsString>, path: &Path) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;

    let cmd = Cli::command();
    let sub_names: BTreeSet<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let Some(sub) = argv.iter().filter_map(|a| a.to_str()).find(|a| sub_names.contains(*a)) else {
        return Ok(argv);
    };
    let sub_cmd = cmd.find_subcommand(sub).expect("known subcommand");
    let accepted: BTreeSet<String> = cmd
        .get_arguments()
        .chain(sub_cmd.get_arguments())
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    let given: BTreeSet<String> = argv
        .iter()
        .filter_map(|a| a.to_str()?.strip_prefix("--").map(|f| f.split('=').next().unwrap_or(f).to_string()))
        .collect();

    let mut extra = Vec::new();
    let mut apply = |key: &str, v: &toml::Value, strict: bool| -> Result<(), CliError> {
        if key == "config" || given.contains(key) {
            return Ok(());
        }
        if !accepted.contains(key) {
            return if strict { Err(CliError::Usage(format!("config: `{sub}` has no flag `--{key}`"))) } else { Ok(()) };
        }
        value_to_args(key, v, &mut extra)
    };
    for (key, v) in &table {
        if !v.is_table() {
            apply(key, v, false)?;
        }
    }
    if let Some(toml::Value::Table(section)) = table.get(sub) {
        for (key, v) in section {
            apply(key, v, true)?;
        }
    }
    let mut out = argv;
    out.extend(extra);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn cli_values_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 5\npairs = 9\n[eim]\nlayer = \"fc\"\nout = \"x.eims\"\n").unwrap();
        let merged = merge(os(&["cgm", "eim", "--model", "m.json", "--out", "y.eims"]), &p).unwrap();
        let s: Vec<String> = merged.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert!(s.windows(2).any(|w| w == ["--seed", "5"]));
        assert!(s.windows(2).any(|w| w == ["--layer", "fc"]));
        assert!(!s.contains(&"x.eims".to_string()));
    }

    #[test]
    fn unknown_section_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[eim]\nbogus = 1\n").unwrap();
        assert!(matches!(merge(os(&["cgm", "eim"]), &p), Err(CliError::Usage(_))));
    }
}
