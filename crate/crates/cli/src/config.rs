use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Defaults, overlaid with the JSON file at `path` (if any). Objects merge
/// key by key; a tagged object whose `family`/`kind` tag changes is
/// replaced whole.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let mut base = serde_json::to_value(T::default())?;
    if let Some(p) = path {
        let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        let overlay: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
        merge(&mut base, overlay);
    }
    serde_json::from_value(base).context("invalid configuration")
}

fn tag(v: &Value) -> Option<&Value> {
    v.get("family").or_else(|| v.get("kind"))
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && tag(slot) == tag(&v) => merge(slot, v),
                    Some(slot) => *slot = v,
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
