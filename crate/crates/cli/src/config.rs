//! Pipeline configuration file and scenario resolution.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use g2dyn::optics::OpticalSetup;
use g2dyn::EmitterScenario;
use serde::Deserialize;

/// TOML pipeline configuration. Every field is optional; command-line flags
/// take precedence. Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Preset name or scenario file.
    pub scenario: Option<String>,
    pub master_seed: Option<u64>,
    pub detect_seed: Option<u64>,
    pub n_cycles: Option<u64>,
    pub bin_width_ns: Option<f64>,
    #[serde(default)]
    pub optics: OpticalSetup,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(skip)]
    base: PathBuf,
}

/// Default output paths per command.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub photons: Option<PathBuf>,
    pub tags: Option<PathBuf>,
    pub surface: Option<PathBuf>,
    pub coalescence: Option<PathBuf>,
    /// Directory for the four analytic surfaces.
    pub analytic: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub export: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.optics.validate()?;
        for p in [
            &mut cfg.outputs.photons,
            &mut cfg.outputs.tags,
            &mut cfg.outputs.surface,
            &mut cfg.outputs.coalescence,
            &mut cfg.outputs.analytic,
            &mut cfg.outputs.fit,
            &mut cfg.outputs.export,
        ] {
            resolve(&cfg.base, p);
        }
        if let Some(s) = &cfg.scenario {
            let candidate = cfg.base.join(s);
            if candidate.is_file() {
                cfg.scenario = Some(candidate.to_string_lossy().into_owned());
            } else if EmitterScenario::preset(s).is_err() {
                bail!("config scenario '{s}' is neither a preset nor an existing file");
            }
        }
        Ok(cfg)
    }
}

fn resolve(base: &Path, path: &mut Option<PathBuf>) {
    if let Some(p) = path.as_mut() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

/// An existing file wins over a preset of the same name.
pub fn load_scenario(spec: &str) -> Result<EmitterScenario> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading scenario {spec}"))?;
        return EmitterScenario::from_toml_str(&text).with_context(|| format!("scenario {spec}"));
    }
    EmitterScenario::preset(spec).with_context(|| format!("'{spec}' is neither a scenario file nor a preset"))
}
