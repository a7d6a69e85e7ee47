//! JSON configuration files.
//!
//! A config holds a `topology` (inline, or a path relative to the config
//! file) and at most one of the `sim`, `sweep` and `fluid` blocks.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use redlab_core::experiments::SweepSpec;
use redlab_core::model::{validate_topology, ServiceDistribution, Topology};
use redlab_core::sim::SimConfig;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

/// A problem with the inputs; reported as a single line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    topology: Option<Value>,
    #[serde(default)]
    sim: Option<Value>,
    #[serde(default)]
    sweep: Option<Value>,
    #[serde(default)]
    fluid: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidBlock {
    /// Initial mass per server.
    pub initial_mass: Vec<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub service: ServiceDistribution,
}

/// Which block a command reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Sim,
    Sweep,
    Fluid,
}

impl Block {
    fn name(self) -> &'static str {
        match self {
            Block::Sim => "sim",
            Block::Sweep => "sweep",
            Block::Fluid => "fluid",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    topology: Option<Topology>,
    sim: Option<Value>,
    sweep: Option<Value>,
    fluid: Option<Value>,
}

/// Parses `value` as `T`, prefixing errors with the block name.
fn parse_block<T: DeserializeOwned>(block: &str, value: Value) -> Result<T, ConfigError> {
    serde_json::from_value(value).map_err(|e| err(format!("{block}: {e}")))
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|e| err(format!("cannot read {}: {e}", path.display())))
}

fn load_topology(value: Value, base: &Path) -> Result<Topology, ConfigError> {
    let value = match value {
        Value::String(p) => {
            let path = base.join(PathBuf::from(&p));
            serde_json::from_str(&read(&path)?).map_err(|e| err(format!("topology ({}): {e}", path.display())))?
        }
        v => v,
    };
    let raw: Topology = parse_block("topology", value)?;
    validate_topology(raw).map_err(|e| err(format!("topology: {e}")))
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        Config::parse(&read(path)?, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses config text; topology paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Config, ConfigError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| err(format!("config: {e}")))?;
        let present: Vec<&str> = [("sim", &raw.sim), ("sweep", &raw.sweep), ("fluid", &raw.fluid)]
            .into_iter()
            .filter(|(_, v)| v.is_some())
            .map(|(n, _)| n)
            .collect();
        if present.len() > 1 {
            return Err(err(format!("config: at most one of sim, sweep, fluid may be given, found {}", present.join(", "))));
        }
        let topology = raw.topology.map(|v| load_topology(v, base)).transpose()?;
        Ok(Config { topology, sim: raw.sim, sweep: raw.sweep, fluid: raw.fluid })
    }

    /// Rejects blocks that `allowed` does not include.
    pub fn expect_blocks(&self, command: &str, allowed: &[Block]) -> Result<(), ConfigError> {
        for (block, v) in [(Block::Sim, &self.sim), (Block::Sweep, &self.sweep), (Block::Fluid, &self.fluid)] {
            if v.is_some() && !allowed.contains(&block) {
                return Err(err(format!("{}: block is not used by `{command}`", block.name())));
            }
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology, ConfigError> {
        self.topology.clone().ok_or_else(|| err("topology: missing field"))
    }

    /// Simulation settings from the `sim` block (defaults when absent).
    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let topology = self.topology()?;
        let mut block = match self.sim.clone() {
            None => Value::Object(Default::default()),
            Some(Value::Object(m)) => Value::Object(m),
            Some(_) => return Err(err("sim: expected an object")),
        };
        let map = block.as_object_mut().expect("object");
        if map.contains_key("topology") {
            return Err(err("sim.topology: give the topology at the top level"));
        }
        map.insert("topology".into(), serde_json::to_value(&topology).expect("topology serializes"));
        parse_block("sim", block)
    }

    pub fn service(&self) -> Result<ServiceDistribution, ConfigError> {
        Ok(match &self.sim {
            Some(_) => self.sim_config()?.service,
            None => ServiceDistribution::Exponential,
        })
    }

    pub fn sweep(&self) -> Result<SweepSpec, ConfigError> {
        let v = self.sweep.clone().ok_or_else(|| err("sweep: missing block"))?;
        parse_block("sweep", v)
    }

    pub fn fluid(&self) -> Result<FluidBlock, ConfigError> {
        let v = self.fluid.clone().ok_or_else(|| err("fluid: missing block"))?;
        parse_block("fluid", v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOP: &str = r#"{"capacities": [1, 2], "types": [{"servers": [1], "p": 0.5}, {"servers": [0, 1], "p": 0.5}], "lambda": 1}"#;

    fn parse(text: &str) -> Result<Config, ConfigError> {
        Config::parse(text, Path::new("."))
    }

    #[test]
    fn inline_topology_and_sim_defaults() {
        let c = parse(&format!(r#"{{"topology": {TOP}, "sim": {{"seed": 4}}}}"#)).unwrap();
        let cfg = c.sim_config().unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.busy_periods, 100_000);
        assert_eq!(cfg.topology.capacities, vec![1.0, 2.0]);
    }

    #[test]
    fn unknown_keys_name_the_field() {
        let e = parse(&format!(r#"{{"topology": {TOP}, "simm": {{}}}}"#)).unwrap_err();
        assert!(e.0.contains("simm"), "{e}");
        let c = parse(&format!(r#"{{"topology": {TOP}, "sim": {{"sead": 1}}}}"#)).unwrap();
        let e = c.sim_config().unwrap_err();
        assert!(e.0.starts_with("sim:") && e.0.contains("sead"), "{e}");
    }

    #[test]
    fn invalid_topology_is_reported() {
        let bad = r#"{"topology": {"capacities": [1], "types": [{"servers": [0], "p": 0.9}]}}"#;
        let e = parse(bad).unwrap_err();
        assert!(e.0.contains("probabilities sum to 0.9"), "{e}");
        let bad = r#"{"topology": {"capacities": [1], "types": [{"servers": [1], "p": 1}]}}"#;
        assert!(parse(bad).unwrap_err().0.contains("server index out of range"));
    }

    #[test]
    fn only_one_block() {
        let e = parse(&format!(r#"{{"topology": {TOP}, "sim": {{}}, "fluid": {{"initial_mass": [1, 1]}}}}"#)).unwrap_err();
        assert!(e.0.contains("sim, fluid"), "{e}");
        let c = parse(&format!(r#"{{"topology": {TOP}, "fluid": {{"initial_mass": [1, 1]}}}}"#)).unwrap();
        assert!(c.expect_blocks("simulate", &[Block::Sim]).unwrap_err().0.starts_with("fluid:"));
        assert_eq!(c.fluid().unwrap().initial_mass, vec![1.0, 1.0]);
    }

    #[test]
    fn topology_from_a_path() {
        let dir = std::env::temp_dir().join(format!("redlab-config-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("top.json"), TOP).unwrap();
        let c = Config::parse(r#"{"topology": "top.json"}"#, &dir).unwrap();
        assert_eq!(c.topology().unwrap().lambda, 1.0);
        fs::remove_dir_all(&dir).unwrap();
    }
}
