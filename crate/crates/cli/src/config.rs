//! Layered run configuration: built-in defaults, then an optional JSON file, then flags.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

fn overlay(base: &mut Map<String, Value>, top: Map<String, Value>) {
    for (k, v) in top {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
}

fn object(v: Value, what: &str) -> Result<Map<String, Value>, CliError> {
    match v {
        Value::Object(m) => Ok(m),
        other => Err(CliError::Usage(format!("{what} must be a JSON object, got {other}"))),
    }
}

/// Resolves `C` from its defaults, the keys of `file` and the flags that were given.
///
/// Unknown keys in the file are usage errors, so a misspelled option never passes silently.
pub fn resolve<C, F>(file: Option<&Value>, flags: &F) -> Result<C, CliError>
where
    C: Default + Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut merged = object(serde_json::to_value(C::default()).map_err(json)?, "defaults")?;
    if let Some(file) = file {
        let file = object(file.clone(), "config file")?;
        if let Some(bad) = file.keys().find(|k| !merged.contains_key(*k)) {
            return Err(CliError::Usage(format!("unknown config key `{bad}`")));
        }
        overlay(&mut merged, file);
    }
    overlay(&mut merged, object(serde_json::to_value(flags).map_err(json)?, "flags")?);
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

pub fn read_file(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn json(e: serde_json::Error) -> CliError {
    CliError::Usage(e.to_string())
}

#[cfg(test)]
mod tests {
    use serde::Deserialize;
    use serde_json::json;

    use super::*;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    struct Resolved {
        a: usize,
        b: String,
        c: Option<f64>,
    }

    #[derive(Serialize)]
    struct Flags {
        a: Option<usize>,
        c: Option<f64>,
    }

    #[test]
    fn flags_override_file_overrides_defaults() {
        let file = json!({"a": 3, "b": "x"});
        let r: Resolved = resolve(Some(&file), &Flags { a: Some(5), c: None }).unwrap();
        assert_eq!(r, Resolved { a: 5, b: "x".into(), c: None });
        let r: Resolved = resolve(None, &Flags { a: None, c: Some(0.5) }).unwrap();
        assert_eq!(r, Resolved { a: 0, b: String::new(), c: Some(0.5) });
    }

    #[test]
    fn unknown_and_mistyped_keys_are_usage_errors() {
        let flags = Flags { a: None, c: None };
        assert!(matches!(resolve::<Resolved, _>(Some(&json!({"d": 1})), &flags), Err(CliError::Usage(_))));
        assert!(matches!(resolve::<Resolved, _>(Some(&json!({"a": "many"})), &flags), Err(CliError::Usage(_))));
        assert!(matches!(resolve::<Resolved, _>(Some(&json!([1])), &flags), Err(CliError::Usage(_))));
    }
}
