//! Flat `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment line; keys are the long flag
//! names of the subcommand (`t-r` or `t_r`, without dashes in front). List
//! values use commas, as on the command line.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().replace('_', "-");
        let value = v.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::config(format!("config line {}: bad key `{}`", i + 1, k.trim())));
        }
        if value.is_empty() {
            return Err(Error::config(format!("config line {}: empty value for `{key}`", i + 1)));
        }
        if key == "config" {
            return Err(Error::config(format!("config line {}: nested config files are not supported", i + 1)));
        }
        if out.insert(key.clone(), value.to_string()).is_some() {
            return Err(Error::config(format!("config line {}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        let c = parse_config("# run\n\nt_r = 0.7\n  iou=0.5  \naspects = 4,8\n").unwrap();
        assert_eq!(c["t-r"], "0.7");
        assert_eq!(c["iou"], "0.5");
        assert_eq!(c["aspects"], "4,8");
        assert!(parse_config("t-r 0.7").is_err());
        assert!(parse_config("a = 1\na = 2").is_err());
        assert!(parse_config("a =").is_err());
        assert!(parse_config("config = x").is_err());
    }
}
