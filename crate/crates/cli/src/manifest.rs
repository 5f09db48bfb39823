use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const FILE_NAME: &str = "manifest.json";

/// Everything needed to reproduce a run: the exact arguments plus the
/// resolved configuration they produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    pub threads: u64,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(subcommand: &str, argv: &[String], threads: u64) -> Self {
        Self {
            tool: "otoar".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            argv: argv.to_vec(),
            threads,
            seed: None,
            config: Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, key: &str, p: &Path) -> &mut Self {
        self.inputs.insert(key.into(), p.display().to_string());
        self
    }

    pub fn output(&mut self, key: &str, p: &Path) -> &mut Self {
        self.outputs.insert(key.into(), p.display().to_string());
        self
    }

    /// Writes to `<out_dir>/manifest.json` when given and to `extra` when set.
    pub fn write(&self, out_dir: Option<&Path>, extra: Option<&Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest is plain data") + "\n";
        let mut targets: Vec<PathBuf> = out_dir.map(|d| d.join(FILE_NAME)).into_iter().collect();
        targets.extend(extra.map(Path::to_path_buf));
        for t in targets {
            if let Some(parent) = t.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| CliError::data(format!("{}: {e}", parent.display())))?;
            }
            fs::write(&t, &text).map_err(|e| CliError::data(format!("{}: {e}", t.display())))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = std::env::temp_dir().join(format!("otoar-manifest-{}", std::process::id()));
        let mut m = Manifest::new("synth", &["synth".into(), "--out".into(), "x".into()], 2);
        m.seed = Some(7);
        m.input("data", Path::new("a/b"));
        m.write(Some(&dir), None).unwrap();
        assert_eq!(Manifest::load(&dir.join(FILE_NAME)).unwrap(), m);
        fs::remove_dir_all(&dir).unwrap();
    }
}
