use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

/// Record of one invocation. Contains no clock or host data, so equal runs
/// produce equal manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub params: BTreeMap<String, Value>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub version: String,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            params: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).expect("manifest values serialize");
        self.params.insert(key.to_string(), v);
        self
    }

    pub fn input(&mut self, key: &str, path: &std::path::Path) -> &mut Self {
        self.inputs.insert(key.to_string(), path.display().to_string());
        self
    }

    pub fn output(&mut self, key: &str, path: &std::path::Path) -> &mut Self {
        self.outputs.insert(key.to_string(), path.display().to_string());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("manifest serializes")
    }
}
