//! Model config resolution and the resolved-config echo every command
//! writes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use stasunet::model::{parse_kv, ModelConfig, Preset};

use crate::args::ModelArgs;
use crate::error::{CliError, CliResult};

/// Preset, then config file, then `--set` overrides.
pub fn resolve_model(args: &ModelArgs, default: Preset) -> CliResult<ModelConfig> {
    let preset = match &args.preset {
        Some(p) => p.parse()?,
        None => default,
    };
    let mut cfg = ModelConfig::preset(preset);
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.apply_kv_text(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn model_args_given(args: &ModelArgs) -> bool {
    args.preset.is_some() || args.config.is_some() || !args.overrides.is_empty()
}

/// Ordered `key=value` record of everything a run depends on. Printed as
/// `config key=value` lines and saved as a file that `parse_kv` reads back.
#[derive(Debug, Default)]
pub struct Echo {
    entries: Vec<(String, String)>,
}

impl Echo {
    pub fn new(command: &str) -> Self {
        let mut e = Echo::default();
        e.push("command", command);
        e
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn path(&mut self, key: &str, value: &Path) -> &mut Self {
        self.push(key, value.display())
    }

    pub fn model(&mut self, cfg: &ModelConfig) -> &mut Self {
        for (k, v) in cfg.entries() {
            self.push(&format!("model.{k}"), v);
        }
        self
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn print(&self) {
        for (k, v) in &self.entries {
            println!("config {k}={v}");
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.text()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Prints and writes in one go.
    pub fn emit(&self, path: &Path) -> CliResult<()> {
        self.print();
        self.write(path)
    }
}

/// Parses an echo file back into pairs.
pub fn read_echo(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(parse_kv(&text)?)
}
