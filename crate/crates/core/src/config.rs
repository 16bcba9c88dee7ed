//! Run configuration (TOML). Unknown keys are rejected at every level.
//!
//! ```toml
//! [generator]
//! model = "gbm"            # or "jump_diffusion"
//! s0 = 100.0
//! mu = 0.08
//! sigma = 0.2
//! seed = 42
//! n_paths = 100000
//! jump_intensity = 1.0     # jump_diffusion only
//! jumps = [{ log_jump = -0.4, prob = 1.0 }]
//!
//! [mesh]
//! kind = "uniform"         # or "geometric" (uses delta)
//! t0 = 0.0
//! t_end = 1.0
//! k = 256
//!
//! [diagnostics]            # see DiagnosticsConfig
//! [pricing]                # see PricingConfig
//! [output]
//! dir = "out"
//! formats = ["csv"]        # "csv" and/or "bin"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsConfig;
use crate::error::{Error, Result};
use crate::market_sim::{gen_gbm, gen_jump_diffusion, JumpSize, Mesh, PathEnsemble};
use crate::pricing::PricingConfig;
use crate::report::sha256_str;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    #[default]
    Gbm,
    JumpDiffusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub model: Model,
    pub s0: f64,
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub jump_intensity: f64,
    pub jumps: Vec<JumpSize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            model: Model::Gbm,
            s0: 100.0,
            mu: 0.08,
            sigma: 0.2,
            seed: 42,
            n_paths: 100_000,
            jump_intensity: 0.0,
            jumps: vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshChoice {
    #[default]
    Uniform,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    pub kind: MeshChoice,
    pub t0: f64,
    pub t_end: f64,
    pub k: usize,
    pub delta: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            kind: MeshChoice::Uniform,
            t0: 0.0,
            t_end: 1.0,
            k: 256,
            delta: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Bin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub mesh: MeshConfig,
    pub diagnostics: DiagnosticsConfig,
    pub pricing: PricingConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parses TOML text, applies `section.key=value` overrides (values in
    /// TOML syntax, bare words taken as strings) and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        RunConfig::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        let bad = |m: String| Err(Error::Config(m));
        if !(g.s0 > 0.0) {
            return bad(format!("generator.s0 must be > 0, got {}", g.s0));
        }
        if !(g.sigma >= 0.0) {
            return bad(format!("generator.sigma must be >= 0, got {}", g.sigma));
        }
        if g.n_paths == 0 {
            return bad("generator.n_paths must be >= 1".into());
        }
        if g.model == Model::JumpDiffusion && g.jumps.is_empty() {
            return bad("generator.jumps must be non-empty for jump_diffusion".into());
        }
        if !(self.mesh.t_end > self.mesh.t0) {
            return bad("mesh.t_end must exceed mesh.t0".into());
        }
        if self.mesh.kind == MeshChoice::Uniform && self.mesh.k == 0 {
            return bad("mesh.k must be >= 1".into());
        }
        if self.output.formats.is_empty() {
            return bad("output.formats must list at least one format".into());
        }
        self.diagnostics
            .validate()
            .map_err(|e| Error::Config(format!("diagnostics: {e}")))?;
        self.pricing
            .validate()
            .map_err(|e| Error::Config(format!("pricing: {e}")))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        sha256_str(&serde_json::to_string(self).expect("config serializes"))
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        let m = &self.mesh;
        match m.kind {
            MeshChoice::Uniform => Mesh::uniform(m.t0, m.t_end, m.k),
            MeshChoice::Geometric => Mesh::geometric(m.t0, m.t_end, m.delta),
        }
    }

    pub fn generate(&self) -> Result<PathEnsemble> {
        let g = &self.generator;
        let mesh = self.build_mesh()?;
        match g.model {
            Model::Gbm => gen_gbm(g.s0, g.mu, g.sigma, &mesh, g.n_paths, g.seed),
            Model::JumpDiffusion => gen_jump_diffusion(
                g.s0,
                g.mu,
                g.sigma,
                g.jump_intensity,
                &g.jumps,
                &mesh,
                g.n_paths,
                g.seed,
            ),
        }
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let value = parse_value(raw.trim());
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part} is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("[generator]\nsigmaa = 0.3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("sigmaa"), "{err}");
        let err = RunConfig::from_toml_str("[pricingg]\n", &[]).unwrap_err();
        assert!(err.to_string().contains("pricingg"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::from_toml_str(
            "[generator]\nseed = 1\n",
            &["generator.seed=7".into(), "mesh.k=64".into(), "output.dir=res".into()],
        )
        .unwrap();
        assert_eq!(c.generator.seed, 7);
        assert_eq!(c.mesh.k, 64);
        assert_eq!(c.output.dir, PathBuf::from("res"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.generator.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn jump_config_parses() {
        let c = RunConfig::from_toml_str(
            "[generator]\nmodel = \"jump_diffusion\"\njump_intensity = 1.0\njumps = [{ log_jump = -0.4, prob = 1.0 }]\n",
            &[],
        )
        .unwrap();
        assert_eq!(c.generator.jumps.len(), 1);
        assert!(RunConfig::from_toml_str("[generator]\nmodel = \"jump_diffusion\"\n", &[]).is_err());
    }
}
