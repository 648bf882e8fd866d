//! Layered settings: defaults, then the `--config` file, then flags.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Flag values keyed by dotted path into the settings object.
#[derive(Default)]
pub struct Overrides(Vec<(&'static str, Value)>);

impl Overrides {
    pub fn set<V: Serialize>(&mut self, key: &'static str, value: Option<V>) -> &mut Self {
        if let Some(v) = value {
            self.0
                .push((key, serde_json::to_value(v).expect("flag values serialize")));
        }
        self
    }

    /// Boolean switches only ever turn a setting on.
    pub fn switch(&mut self, key: &'static str, on: bool) -> &mut Self {
        self.set(key, on.then_some(true))
    }
}

fn insert(root: &mut Map<String, Value>, path: &str, value: Value) {
    match path.split_once('.') {
        None => {
            root.insert(path.to_string(), value);
        }
        Some((head, rest)) => {
            let child = root
                .entry(head.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            if !child.is_object() {
                *child = Value::Object(Map::new());
            }
            insert(child.as_object_mut().unwrap(), rest, value);
        }
    }
}

pub fn resolve<S: DeserializeOwned>(config: Option<&Path>, overrides: Overrides) -> Result<S> {
    let mut root = match config {
        None => Map::new(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            match serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
            {
                Value::Object(m) => m,
                _ => bail!("config {} must hold a JSON object", path.display()),
            }
        }
    };
    for (key, value) in overrides.0 {
        insert(&mut root, key, value);
    }
    serde_json::from_value(Value::Object(root)).context("invalid settings")
}
