//! `--set key=value` overrides applied to JSON configuration documents.

use anyhow::{bail, Context, Result};
use serde_json::Value;

/// Applies `a.b.c=value` assignments in order. Values are parsed as JSON
/// when possible and taken as plain strings otherwise.
pub fn apply(doc: &mut Value, assignments: &[String]) -> Result<()> {
    for assignment in assignments {
        let (path, raw) = assignment
            .split_once('=')
            .with_context(|| format!("override {assignment:?} is not of the form key=value"))?;
        if path.is_empty() {
            bail!("override {assignment:?} has an empty key");
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut *doc;
        let keys: Vec<&str> = path.split('.').collect();
        for (i, key) in keys.iter().enumerate() {
            let Value::Object(map) = node else {
                bail!("cannot set {path:?}: {:?} is not an object", keys[..i].join("."));
            };
            if i + 1 == keys.len() {
                map.insert((*key).to_string(), value.clone());
                break;
            }
            node = map.entry(*key).or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}
