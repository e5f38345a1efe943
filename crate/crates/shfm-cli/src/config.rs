use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use toml::Value;

use crate::error::{CliError, Result};
use shfm::model::{ModelSpec, ModelVariant};
use shfm::McmcConfig;

/// Parsed run configuration: a flat, typed key-value document (TOML scalars
/// and arrays only, no nested tables). Unknown keys are rejected.
#[derive(Debug, Clone)]
pub struct RunConfig {
    // Model selection.
    pub model: String,
    pub phi: f64,
    pub compare_models: Vec<String>,
    pub phi_grid: Vec<f64>,
    pub anchor: usize,
    pub lambda2: f64,

    // Inputs.
    pub panel_dir: Option<PathBuf>,
    pub city_centroids_file: Option<PathBuf>,
    pub tract_centroids_dir: Option<PathBuf>,
    pub adjacency_dir: Option<PathBuf>,
    pub new_centroids_file: Option<PathBuf>,
    pub has_header: bool,

    // Output.
    pub out_dir: PathBuf,

    // MCMC protocol.
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub mh_step_scale: f64,

    // Hyperprior overrides (defaults follow the library's vague settings).
    pub prior_variance: Option<f64>,
    pub ig_shape: Option<f64>,
    pub ig_scale: Option<f64>,
    pub lambda1_scale: Option<f64>,

    // Reporting.
    pub standardize: String,
    pub rank_target: String,

    // Simulation.
    pub preset: String,
    pub n_cities: usize,
    pub n_indicators: usize,
    pub tracts_min: usize,
    pub tracts_max: usize,
    pub huge_city_tracts: usize,

    /// SHA-256 of the raw config file, stamped into every artifact.
    pub config_hash: String,
}

const KNOWN_KEYS: &[&str] = &[
    "model",
    "phi",
    "compare_models",
    "phi_grid",
    "anchor",
    "lambda2",
    "panel_dir",
    "city_centroids_file",
    "tract_centroids_dir",
    "adjacency_dir",
    "new_centroids_file",
    "has_header",
    "out_dir",
    "n_iter",
    "burn_in",
    "thin",
    "n_chains",
    "seed",
    "mh_step_scale",
    "prior_variance",
    "ig_shape",
    "ig_scale",
    "lambda1_scale",
    "standardize",
    "rank_target",
    "preset",
    "n_cities",
    "n_indicators",
    "tracts_min",
    "tracts_max",
    "huge_city_tracts",
];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let hash = format!("{:x}", Sha256::digest(raw.as_bytes()));
        let table: toml::Table = raw
            .parse()
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        Self::from_table(table, hash)
    }

    fn from_table(table: toml::Table, config_hash: String) -> Result<Self> {
        for (key, value) in &table {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Input(format!("unknown config key {key:?}")));
            }
            if value.is_table() {
                return Err(CliError::Input(format!(
                    "config key {key:?} is a table; the config is flat"
                )));
            }
        }
        let g = Getter { table: &table };
        let config = Self {
            model: g.string("model", "shfm")?,
            phi: g.float("phi", 5.0)?,
            compare_models: g.string_array("compare_models", &["uhfm", "shfm"])?,
            phi_grid: g.float_array("phi_grid", &[5.0])?,
            anchor: g.usize("anchor", 0)?,
            lambda2: g.float("lambda2", 1.0)?,
            panel_dir: g.path("panel_dir")?,
            city_centroids_file: g.path("city_centroids_file")?,
            tract_centroids_dir: g.path("tract_centroids_dir")?,
            adjacency_dir: g.path("adjacency_dir")?,
            new_centroids_file: g.path("new_centroids_file")?,
            has_header: g.bool("has_header", false)?,
            out_dir: g
                .path("out_dir")?
                .ok_or_else(|| CliError::Input("config needs out_dir".into()))?,
            n_iter: g.usize("n_iter", 30_000)?,
            burn_in: g.usize("burn_in", 10_000)?,
            thin: g.usize("thin", 5)?,
            n_chains: g.usize("n_chains", 2)?,
            seed: g.u64("seed", 0)?,
            mh_step_scale: g.float("mh_step_scale", 0.3)?,
            prior_variance: g.opt_float("prior_variance")?,
            ig_shape: g.opt_float("ig_shape")?,
            ig_scale: g.opt_float("ig_scale")?,
            lambda1_scale: g.opt_float("lambda1_scale")?,
            standardize: g.string("standardize", "zscore")?,
            rank_target: g.string("rank_target", "theta")?,
            preset: g.string("preset", "spatial-strong")?,
            n_cities: g.usize("n_cities", 10)?,
            n_indicators: g.usize("n_indicators", 5)?,
            tracts_min: g.usize("tracts_min", 5)?,
            tracts_max: g.usize("tracts_max", 40)?,
            huge_city_tracts: g.usize("huge_city_tracts", 0)?,
            config_hash,
        };
        if config.model == "shfm" && config.phi_grid.is_empty() {
            return Err(CliError::Input("phi_grid must be nonempty for shfm".into()));
        }
        Ok(config)
    }

    /// The model spec selected by `model` / `phi` / `anchor` / `lambda2`.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        spec_for(&self.model, self.phi, self.anchor, self.lambda2)
    }

    pub fn mcmc(&self) -> McmcConfig {
        McmcConfig {
            n_iter: self.n_iter,
            burn_in: self.burn_in,
            thin: self.thin,
            n_chains: self.n_chains,
            seed: self.seed,
            mh_step_scale: self.mh_step_scale,
        }
    }
}

/// Variant lookup by CLI name.
pub fn spec_for(model: &str, phi: f64, anchor: usize, lambda2: f64) -> Result<ModelSpec> {
    let (variant, phi) = match model {
        "shfm" => (ModelVariant::Shfm, Some(phi)),
        "uhfm" => (ModelVariant::Uhfm, None),
        "uhfm-theta0" => (ModelVariant::UhfmTheta0, None),
        "asfm" => (ModelVariant::Asfm, None),
        "afm" => (ModelVariant::Afm, None),
        other => {
            return Err(CliError::Input(format!(
                "unknown model {other:?} (expected shfm, uhfm, uhfm-theta0, asfm, or afm)"
            )))
        }
    };
    let mut spec = ModelSpec::new(variant, phi)?;
    spec.anchor = anchor;
    spec.lambda2 = lambda2;
    spec.validate()?;
    Ok(spec)
}

struct Getter<'a> {
    table: &'a toml::Table,
}

impl Getter<'_> {
    fn string(&self, key: &str, default: &str) -> Result<String> {
        match self.table.get(key) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(v) => Err(type_error(key, "a string", v)),
        }
    }

    fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
            Some(v) => Err(type_error(key, "a path string", v)),
        }
    }

    fn bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.table.get(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(v) => Err(type_error(key, "a boolean", v)),
        }
    }

    fn float(&self, key: &str, default: f64) -> Result<f64> {
        self.opt_float(key).map(|v| v.unwrap_or(default))
    }

    fn opt_float(&self, key: &str) -> Result<Option<f64>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(type_error(key, "a number", v)),
        }
    }

    fn usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.table.get(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(v) => Err(type_error(key, "a nonnegative integer", v)),
        }
    }

    fn u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.table.get(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(v) => Err(type_error(key, "a nonnegative integer", v)),
        }
    }

    fn string_array(&self, key: &str, default: &[&str]) -> Result<Vec<String>> {
        match self.table.get(key) {
            None => Ok(default.iter().map(|s| s.to_string()).collect()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    other => Err(type_error(key, "an array of strings", other)),
                })
                .collect(),
            Some(v) => Err(type_error(key, "an array of strings", v)),
        }
    }

    fn float_array(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.table.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Float(f) => Ok(*f),
                    Value::Integer(i) => Ok(*i as f64),
                    other => Err(type_error(key, "an array of numbers", other)),
                })
                .collect(),
            Some(v) => Err(type_error(key, "an array of numbers", v)),
        }
    }
}

fn type_error(key: &str, expected: &str, got: &Value) -> CliError {
    CliError::Input(format!(
        "config key {key:?} must be {expected}, got {}",
        got.type_str()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(body: &str) -> Result<RunConfig> {
        RunConfig::from_table(body.parse().unwrap(), "hash".into())
    }

    #[test]
    fn minimal_config_gets_protocol_defaults() {
        let c = parse("out_dir = \"/tmp/x\"").unwrap();
        assert_eq!(c.n_iter, 30_000);
        assert_eq!(c.burn_in, 10_000);
        assert_eq!(c.thin, 5);
        assert_eq!(c.n_chains, 2);
        assert_eq!(c.model, "shfm");
        assert_eq!(c.mcmc().n_stored(), 4000);
    }

    #[test]
    fn unknown_and_nested_keys_are_rejected() {
        assert!(parse("out_dir = \"x\"\nbogus = 1").is_err());
        assert!(parse("out_dir = \"x\"\n[section]\nk = 1").is_err());
        assert!(parse("n_iter = 100").is_err(), "out_dir is required");
    }

    #[test]
    fn typed_keys_reject_wrong_types() {
        assert!(parse("out_dir = \"x\"\nn_iter = \"lots\"").is_err());
        assert!(parse("out_dir = \"x\"\nn_iter = -5").is_err());
        assert!(parse("out_dir = \"x\"\nphi_grid = [\"a\"]").is_err());
        let c = parse("out_dir = \"x\"\nphi = 3").unwrap();
        assert_eq!(c.phi, 3.0);
    }

    #[test]
    fn model_names_map_to_specs() {
        for (name, ok) in [
            ("shfm", true),
            ("uhfm", true),
            ("uhfm-theta0", true),
            ("asfm", true),
            ("afm", true),
            ("sphm", false),
        ] {
            assert_eq!(spec_for(name, 5.0, 0, 1.0).is_ok(), ok, "{name}");
        }
    }

    #[test]
    fn shfm_needs_a_phi_grid() {
        assert!(parse("out_dir = \"x\"\nphi_grid = []").is_err());
        assert!(parse("out_dir = \"x\"\nmodel = \"uhfm\"\nphi_grid = []").is_ok());
    }
}
