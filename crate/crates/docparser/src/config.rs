//! Pipeline configuration: TOML file, defaults, and environment overrides.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::PipelineError;

/// Commands stripped by the default noise policy. Each entry is a command
/// name optionally followed by `{n}` giving the number of brace arguments
/// to remove along with it.
const DEFAULT_NOISE_COMMANDS: &[&str] = &[
    "vspace{1}",
    "vspace*{1}",
    "hspace{1}",
    "hspace*{1}",
    "smallskip",
    "medskip",
    "bigskip",
    "noindent",
    "clearpage",
    "cleardoublepage",
    "newpage",
    "pagebreak",
    "nopagebreak",
    "linebreak",
    "nolinebreak",
    "sloppy",
    "fussy",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Identifier recorded on every flat source this policy is applied to.
    pub policy_id: String,
    /// Command entries, `name` or `name{argc}`.
    pub commands: Vec<String>,
    /// Environments whose bodies are never edited.
    pub verbatim_envs: Vec<String>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            policy_id: "default-v1".to_string(),
            commands: DEFAULT_NOISE_COMMANDS.iter().map(|s| s.to_string()).collect(),
            verbatim_envs: crate::latex::VERBATIM_ENVS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// One parsed noise entry: command name plus number of brace args to drop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseCommand {
    pub name: String,
    pub argc: usize,
}

impl NoiseConfig {
    pub fn parsed_commands(&self) -> Vec<NoiseCommand> {
        self.commands
            .iter()
            .map(|entry| match entry.find('{') {
                Some(i) if entry.ends_with('}') => NoiseCommand {
                    name: entry[..i].to_string(),
                    argc: entry[i + 1..entry.len() - 1].parse().unwrap_or(0),
                },
                _ => NoiseCommand {
                    name: entry.clone(),
                    argc: 0,
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Rasterization density in dots per inch.
    pub dpi: u32,
    /// Grayscale difference (0-255) above which a pixel counts as changed.
    pub diff_threshold: u8,
    /// Horizontal gap, as a fraction of page width, that splits one unit's
    /// diff into separate boxes (column detection).
    pub column_gap_fraction: f64,
    /// Engine selection: "builtin" or "external".
    pub engine: String,
    /// External compile command template; `{main}` is the main file name,
    /// run with the document directory as working directory.
    pub latex_cmd: String,
    /// External raster command template; placeholders `{pdf}`, `{dpi}`,
    /// `{out}`. Must write one grayscale PNG per page into `{out}`.
    pub raster_cmd: String,
    /// Optional image conversion template with `{in}` and `{out}`
    /// placeholders; empty means no converter is available.
    pub figure_convert_cmd: String,
    pub compile_timeout_secs: u64,
    pub raster_timeout_secs: u64,
    /// Scratch directory for intermediate files; empty means a fresh
    /// temporary directory per run.
    pub scratch_dir: String,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            dpi: 150,
            diff_threshold: 16,
            column_gap_fraction: 0.05,
            engine: "builtin".to_string(),
            latex_cmd: "pdflatex -interaction=nonstopmode {main}".to_string(),
            raster_cmd: "pdftoppm -gray -r {dpi} -png {pdf} {out}/page".to_string(),
            figure_convert_cmd: String::new(),
            compile_timeout_secs: 300,
            raster_timeout_secs: 60,
            scratch_dir: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub noise: NoiseConfig,
    pub render: RenderConfig,
}

impl Config {
    /// Loads a TOML config file. Unknown keys are rejected so typos fail
    /// loudly rather than silently using defaults.
    pub fn from_path(path: &Path) -> Result<Config, PipelineError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let mut cfg: Config = toml::from_str(&raw)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        cfg.apply_env_overrides();
        Ok(cfg)
    }

    pub fn with_env_overrides() -> Config {
        let mut cfg = Config::default();
        cfg.apply_env_overrides();
        cfg
    }

    /// Environment variables override file values:
    /// `DOCPARSER_ENGINE`, `DOCPARSER_LATEX_CMD`, `DOCPARSER_RASTER_CMD`,
    /// `DOCPARSER_SCRATCH`.
    fn apply_env_overrides(&mut self) {
        if let Ok(v) = std::env::var("DOCPARSER_ENGINE") {
            self.render.engine = v;
        }
        if let Ok(v) = std::env::var("DOCPARSER_LATEX_CMD") {
            self.render.latex_cmd = v;
            if self.render.engine == "builtin" {
                self.render.engine = "external".to_string();
            }
        }
        if let Ok(v) = std::env::var("DOCPARSER_RASTER_CMD") {
            self.render.raster_cmd = v;
        }
        if let Ok(v) = std::env::var("DOCPARSER_SCRATCH") {
            self.render.scratch_dir = v;
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.render.dpi == 0 || self.render.dpi > 1200 {
            return Err(PipelineError::Config(format!(
                "dpi must be in 1..=1200, got {}",
                self.render.dpi
            )));
        }
        if !(0.0..1.0).contains(&self.render.column_gap_fraction) {
            return Err(PipelineError::Config(format!(
                "column_gap_fraction must be in [0,1), got {}",
                self.render.column_gap_fraction
            )));
        }
        match self.render.engine.as_str() {
            "builtin" | "external" => {}
            other => {
                return Err(PipelineError::Config(format!(
                    "engine must be \"builtin\" or \"external\", got {other:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn scratch_dir(&self) -> Option<PathBuf> {
        if self.render.scratch_dir.is_empty() {
            None
        } else {
            Some(PathBuf::from(&self.render.scratch_dir))
        }
    }
}
