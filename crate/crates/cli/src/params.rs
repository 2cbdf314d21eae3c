//! Parameter files: flat `key = number` lines named after the
//! [`ModelParams`] fields, plus an optional `seed`.

use std::path::Path;

use retrialq::ModelParams;

use crate::CliError;

/// Keys that must appear in every parameter file.
const REQUIRED: [&str; 4] = ["lambda", "mu", "nu", "s"];

pub const KEYS: [&str; 16] = [
    "lambda", "mu", "nu", "s", "K", "p_a", "pt_a", "pb_a", "at_0", "p", "pb", "alpha", "ab", "theta", "thb", "tht",
];

#[derive(Debug, Clone)]
pub struct ParamFile {
    pub params: ModelParams,
    pub seed: Option<u64>,
}

/// Sets one model field by its file key. Integer fields reject fractions.
pub fn set_field(m: &mut ModelParams, key: &str, value: f64) -> Result<(), CliError> {
    let integer = |v: f64| -> Result<usize, CliError> {
        if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(CliError::Invalid(format!(
                "{key} must be a non-negative integer, got {v}"
            )))
        }
    };
    match key {
        "lambda" => m.lambda = value,
        "mu" => m.mu = value,
        "nu" => m.nu = value,
        "s" => m.s = integer(value)?,
        "K" => m.k = integer(value)?,
        "p_a" => m.p_a = value,
        "pt_a" => m.pt_a = value,
        "pb_a" => m.pb_a = value,
        "at_0" => m.at_0 = value,
        "p" => m.p = value,
        "pb" => m.pb = value,
        "alpha" => m.alpha = value,
        "ab" => m.ab = value,
        "theta" => m.theta = value,
        "thb" => m.thb = value,
        "tht" => m.tht = value,
        _ => return Err(CliError::Invalid(format!("unknown parameter key `{key}`"))),
    }
    Ok(())
}

/// Parses parameter text. Omitted routing keys take the classic
/// persistent values (full acceptance, no abandonment, no feedback).
pub fn parse(text: &str) -> Result<ParamFile, CliError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Invalid(format!("parameter file: {}", e.message())))?;
    for key in REQUIRED {
        if !table.contains_key(key) {
            return Err(CliError::Invalid(format!("missing required key `{key}`")));
        }
    }
    let mut params = ModelParams::classic(0.0, 0.0, 0.0, 1);
    let mut seed = None;
    for (key, value) in &table {
        if key == "seed" {
            let v = value
                .as_integer()
                .filter(|&v| v >= 0)
                .ok_or_else(|| CliError::Invalid("seed must be a non-negative integer".into()))?;
            seed = Some(v as u64);
            continue;
        }
        let x = match value {
            toml::Value::Integer(i) => *i as f64,
            toml::Value::Float(f) => *f,
            _ => return Err(CliError::Invalid(format!("`{key}` must be a number"))),
        };
        set_field(&mut params, key, x)?;
    }
    params.ensure_valid()?;
    if params.k != 0 {
        return Err(retrialq::Error::UnsupportedK(params.k).into());
    }
    Ok(ParamFile { params, seed })
}

pub fn load(path: &Path) -> Result<ParamFile, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub const DEFAULT_SEED: u64 = 20_240_601;

/// Seed precedence: command-line flag, then `RETRIALQ_SEED`, then the
/// file's `seed`, then [`DEFAULT_SEED`].
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(v) = std::env::var("RETRIALQ_SEED") {
        return v
            .trim()
            .parse()
            .map_err(|_| CliError::Invalid(format!("RETRIALQ_SEED is not an unsigned integer: `{v}`")));
    }
    Ok(file.unwrap_or(DEFAULT_SEED))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_classic() {
        let f = parse("lambda = 0.5\nmu = 1\nnu = 1\ns = 1\nseed = 7").unwrap();
        assert_eq!(f.params, ModelParams::classic(0.5, 1.0, 1.0, 1));
        assert_eq!(f.seed, Some(7));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "lambda = 1\nmu = 1\nnu = 1",
            "lambda = 1\nmu = 1\nnu = 1\ns = 1.5",
            "lambda = 1\nmu = 1\nnu = 1\ns = 1\nfoo = 2",
            "lambda = 1\nmu = 1\nnu = 1\ns = 1\np = 0.5",
            "lambda = \"x\"\nmu = 1\nnu = 1\ns = 1",
            "lambda = 1\nmu = 1\nnu = 1\ns = 1\nK = 2",
        ] {
            assert!(parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn shipped_example_parses() {
        let f = parse(include_str!("../params/example.toml")).unwrap();
        assert_eq!(f.params.s, 2);
    }
}
