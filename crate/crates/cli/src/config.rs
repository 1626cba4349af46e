//! `--config FILE` support: a flat `key = value` file whose keys are long flag
//! names. Entries are spliced in right after the subcommand, ahead of the
//! user's own flags, so anything given on the command line overrides them.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

const SUBCOMMANDS: [&str; 6] = ["grid", "simulate", "realign", "stability", "verify", "solve"];

/// Parses config text into flag arguments. `true`/`false` values become a
/// bare flag or nothing.
pub fn parse(text: &str, origin: &Path) -> Result<Vec<String>, String> {
    let mut args = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("{}:{}: expected key = value", origin.display(), lineno + 1));
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key.is_empty() || key == "config" {
            return Err(format!("{}:{}: bad key {key:?}", origin.display(), lineno + 1));
        }
        match value {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            v => {
                args.push(format!("--{key}"));
                args.push(v.to_string());
            }
        }
    }
    Ok(args)
}

/// Removes `--config FILE` from `args` and inserts the file's flags after
/// the subcommand name.
pub fn expand(mut args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut path = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy().into_owned();
        if a == "--config" {
            if i + 1 >= args.len() {
                return Err("--config needs a file".into());
            }
            path = Some(args.remove(i + 1));
            args.remove(i);
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(OsString::from(p));
            args.remove(i);
            continue;
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let extra = parse(&text, path)?;
    let at = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .map(|p| p + 1)
        .unwrap_or(args.len());
    args.splice(at..at, extra.into_iter().map(OsString::from));
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_flat_pairs() {
        let text = "# comment\nstate = psi3\np_a=0.5\n\nmc-trials = 100\nverbose = true\nquiet = false\n";
        let args = parse(text, Path::new("x.conf")).unwrap();
        assert_eq!(args, ["--state", "psi3", "--p-a", "0.5", "--mc-trials", "100", "--verbose"]);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(parse("state psi3", Path::new("x.conf")).is_err());
        assert!(parse("config = other.conf", Path::new("x.conf")).is_err());
    }

    #[test]
    fn splices_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.conf");
        fs::write(&file, "seed = 5\nstate = s4\n").unwrap();
        let args = os(&["prog", "--config", file.to_str().unwrap(), "grid", "--seed", "9"]);
        let out = expand(args).unwrap();
        assert_eq!(out, os(&["prog", "grid", "--seed", "5", "--state", "s4", "--seed", "9"]));
    }

    #[test]
    fn no_config_is_passthrough() {
        let args = os(&["prog", "verify", "a.json"]);
        assert_eq!(expand(args.clone()).unwrap(), args);
    }

    #[test]
    fn missing_config_file_is_an_error() {
        assert!(expand(os(&["prog", "grid", "--config=/nonexistent/x.conf"])).is_err());
    }
}
