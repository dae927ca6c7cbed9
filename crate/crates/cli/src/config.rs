//! TOML run configuration, resolved and validated before any computation.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use fracid::diagnostics::DiagnosticsSettings;
use fracid::{
    EnsembleConfig, InitialData, OptimizerConfig, Penalty, SpectralModel, TargetField, TargetProvenance, TimeGrid,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: SpectralModel,
    pub grid: TimeGrid,
    pub initial_data: InitialDataSpec,
    pub penalty: Option<Penalty>,
    pub target: Option<TargetProvenance>,
    pub optimizer: Option<OptimizerConfig>,
    pub ensemble: Option<EnsembleSection>,
    pub simulate: Option<SimulateSection>,
    pub diagnostics: Option<DiagnosticsSection>,
    pub admissible: Option<AdmissibleSection>,
}

/// Exactly one of `values`, `file` or `preset`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDataSpec {
    pub values: Option<Vec<f64>>,
    pub file: Option<PathBuf>,
    pub preset: Option<Preset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `y_{0,j} = 1/j`.
    InverseMode,
    Zeros,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_paths: usize,
    pub master_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub s: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub s: Option<f64>,
    pub n_paths: Option<usize>,
    pub checkpoints: Option<Vec<f64>>,
    pub hs_time: Option<f64>,
    pub holder_lags: Option<Vec<usize>>,
    pub bootstrap_samples: Option<usize>,
    pub semigroup_beta: Option<f64>,
    pub semigroup_cutoff: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibleSection {
    pub upper: Option<f64>,
}

/// A parsed configuration with its directory (for relative paths) and hash.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub hash: String,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Read and parse `path`. The hash is SHA-256 of the configuration as
/// key-sorted JSON, without `output_dir`, so formatting, comments and output
/// location do not change it.
pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let config: RunConfig =
        toml::from_str(&text).map_err(|e| config_error(format!("{}: {}", path.display(), e.message().trim())))?;
    config.grid.validate().map_err(|e| config_error(format!("grid: {e}")))?;
    let entries = config.model.n_modes().saturating_mul(config.grid.n_steps + 1);
    if entries > fracid::noise::DEFAULT_MAX_ENTRIES {
        return Err(config_error(format!(
            "model.n_modes × (grid.n_steps + 1) = {entries} exceeds the lattice cap {}",
            fracid::noise::DEFAULT_MAX_ENTRIES
        )));
    }
    let mut canonical = serde_json::to_value(&table).map_err(|e| config_error(e.to_string()))?;
    if let Some(obj) = canonical.as_object_mut() {
        obj.remove("output_dir");
    }
    let hash = hex::encode(Sha256::digest(canonical.to_string().as_bytes()));
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base_dir, hash })
}

impl Loaded {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn model(&self) -> &SpectralModel {
        &self.config.model
    }

    pub fn grid(&self) -> TimeGrid {
        self.config.grid
    }

    pub fn initial_data(&self) -> Result<InitialData, CliError> {
        let spec = &self.config.initial_data;
        let n = self.config.model.n_modes();
        let given = [spec.values.is_some(), spec.file.is_some(), spec.preset.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(config_error("initial_data: set exactly one of values, file, preset"));
        }
        let y0 = if let Some(v) = &spec.values {
            InitialData::new(v.clone()).map_err(|e| config_error(format!("initial_data.values: {e}")))?
        } else if let Some(f) = &spec.file {
            let path = self.resolve(f);
            let text = fs::read_to_string(&path)
                .map_err(|e| config_error(format!("initial_data.file: cannot read {}: {e}", path.display())))?;
            let values = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| l.parse::<f64>().map_err(|e| config_error(format!("initial_data.file: {:?}: {e}", l))))
                .collect::<Result<Vec<_>, _>>()?;
            InitialData::new(values).map_err(|e| config_error(format!("initial_data.file: {e}")))?
        } else {
            match spec.preset.unwrap_or(Preset::Zeros) {
                Preset::InverseMode => InitialData::inverse_mode(n),
                Preset::Zeros => InitialData::zeros(n),
            }
        };
        if y0.len() != n {
            return Err(config_error(format!("initial_data: {} coefficients for model.n_modes = {n}", y0.len())));
        }
        Ok(y0)
    }

    pub fn penalty(&self) -> Result<Penalty, CliError> {
        let p = self.config.penalty.clone().ok_or_else(|| config_error("missing [penalty] section"))?;
        p.validate().map_err(|e| config_error(format!("penalty: {e}")))?;
        Ok(p)
    }

    /// Optimizer settings, checked against the penalty's domain.
    pub fn optimizer(&self, penalty: &Penalty) -> Result<OptimizerConfig, CliError> {
        let o = self.config.optimizer.ok_or_else(|| config_error("missing [optimizer] section"))?;
        o.validate().map_err(|e| config_error(format!("optimizer: {e}")))?;
        if !(penalty.in_domain(o.s_lo) && penalty.in_domain(o.s_hi)) {
            let (lo, hi, _) = penalty.domain();
            return Err(config_error(format!(
                "optimizer: [s_lo, s_hi] = [{}, {}] must lie inside the penalty domain ({lo}, {hi})",
                o.s_lo, o.s_hi
            )));
        }
        Ok(o)
    }

    /// The target field. Shape and provenance are validated here; a
    /// synthetic target is computed, which is cheap next to any solve.
    pub fn target(&self, y0: &InitialData) -> Result<TargetField, CliError> {
        let spec = self.config.target.clone().ok_or_else(|| config_error("missing [target] section"))?;
        let model = &self.config.model;
        let grid = self.config.grid;
        match spec {
            TargetProvenance::Constant { value } => {
                if !value.is_finite() {
                    return Err(config_error("target.value must be finite"));
                }
                Ok(TargetField::constant(model.n_modes(), grid, value))
            }
            TargetProvenance::FromSolution { s_true, seed } => {
                if !(s_true > 0.0 && s_true.is_finite()) {
                    return Err(config_error(format!("target.s_true must be positive, got {s_true}")));
                }
                fracid::target_from_solution(model, y0, grid, seed, s_true).map_err(CliError::Runtime)
            }
            TargetProvenance::FromFile { path } => {
                let full = self.resolve(Path::new(&path));
                let file = fs::File::open(&full)
                    .map_err(|e| config_error(format!("target.path: cannot open {}: {e}", full.display())))?;
                TargetField::read_csv(BufReader::new(file), model.n_modes(), grid.n_steps, TargetProvenance::FromFile { path })
                    .map_err(|e| config_error(format!("target.path: {e}")))
            }
        }
    }

    pub fn master_seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.config.ensemble.as_ref().and_then(|e| e.master_seed)).or(self.config.seed).unwrap_or(0)
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.config.seed).unwrap_or(0)
    }

    pub fn ensemble(&self, flag_seed: Option<u64>) -> Result<EnsembleConfig, CliError> {
        let e = self.config.ensemble.as_ref().ok_or_else(|| config_error("missing [ensemble] section"))?;
        let cfg = EnsembleConfig { n_paths: e.n_paths, master_seed: self.master_seed(flag_seed) };
        cfg.validate().map_err(|e| config_error(format!("ensemble: {e}")))?;
        Ok(cfg)
    }

    /// Exponent for `simulate`, flag first.
    pub fn simulate_s(&self, flag: Option<f64>) -> Result<f64, CliError> {
        let (s, field) = match flag {
            Some(s) => (s, "--s"),
            None => (
                self.config.simulate.as_ref().and_then(|x| x.s).ok_or_else(|| config_error("no exponent: pass --s or set simulate.s"))?,
                "simulate.s",
            ),
        };
        positive_exponent(s, field)
    }

    pub fn diagnostics(&self, flag_s: Option<f64>, flag_seed: Option<u64>) -> Result<DiagnosticsSettings, CliError> {
        let d = self.config.diagnostics.clone().unwrap_or_default();
        let s = match flag_s {
            Some(s) => positive_exponent(s, "--s")?,
            None => positive_exponent(d.s.ok_or_else(|| config_error("no exponent: pass --s or set diagnostics.s"))?, "diagnostics.s")?,
        };
        let mut cfg = DiagnosticsSettings::new(s);
        cfg.master_seed = self.seed(flag_seed);
        if let Some(n) = d.n_paths {
            cfg.n_paths = n;
        }
        cfg.checkpoints = d.checkpoints;
        cfg.hs_time = d.hs_time;
        if let Some(l) = d.holder_lags {
            cfg.holder_lags = l;
        }
        if let Some(b) = d.bootstrap_samples {
            cfg.bootstrap_samples = b;
        }
        if let Some(b) = d.semigroup_beta {
            cfg.semigroup_beta = b;
        }
        if let Some(c) = d.semigroup_cutoff {
            cfg.semigroup_cutoff = c;
        }
        let grid = self.config.grid;
        if cfg.n_paths < fracid::diagnostics::MIN_PATHS {
            return Err(config_error(format!(
                "diagnostics.n_paths must be at least {}, got {}",
                fracid::diagnostics::MIN_PATHS,
                cfg.n_paths
            )));
        }
        if let Some(cp) = &cfg.checkpoints {
            if let Some(t) = cp.iter().find(|t| !(**t >= 0.0 && **t <= grid.t_final)) {
                return Err(config_error(format!("diagnostics.checkpoints: {t} outside [0, {}]", grid.t_final)));
            }
        }
        if let Some(t) = cfg.hs_time {
            if !(t > 0.0 && t <= grid.t_final) {
                return Err(config_error(format!("diagnostics.hs_time must lie in (0, {}], got {t}", grid.t_final)));
            }
        }
        if cfg.holder_lags.len() < 3 || cfg.holder_lags.iter().any(|&l| l == 0 || 4 * l > grid.n_steps) {
            return Err(config_error(format!(
                "diagnostics.holder_lags: need at least 3 lags in [1, {}]",
                grid.n_steps / 4
            )));
        }
        if cfg.bootstrap_samples < 2 {
            return Err(config_error("diagnostics.bootstrap_samples must be at least 2"));
        }
        if !(cfg.semigroup_beta >= 0.0) {
            return Err(config_error("diagnostics.semigroup_beta must be non-negative"));
        }
        if !(cfg.semigroup_cutoff > 0.0 && cfg.semigroup_cutoff < grid.t_final) {
            return Err(config_error(format!("diagnostics.semigroup_cutoff must lie in (0, {})", grid.t_final)));
        }
        Ok(cfg)
    }

    /// Upper end of the admissible interval: `admissible.upper`, else the
    /// barrier limit, else unbounded.
    pub fn admissible_upper(&self) -> Result<f64, CliError> {
        if let Some(u) = self.config.admissible.as_ref().and_then(|a| a.upper) {
            if !(u > 0.0) {
                return Err(config_error(format!("admissible.upper must be positive, got {u}")));
            }
            return Ok(u);
        }
        Ok(match &self.config.penalty {
            Some(Penalty::Barrier { limit, .. }) => *limit,
            _ => f64::INFINITY,
        })
    }

    /// `--output`, then `output_dir`, then `FRACID_OUTPUT_DIR`, then `./output`.
    pub fn output_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.config.output_dir.as_ref().map(|p| self.resolve(p)))
            .or_else(|| std::env::var_os("FRACID_OUTPUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("output"))
    }
}

fn positive_exponent(s: f64, field: &str) -> Result<f64, CliError> {
    if s.is_finite() && s > 0.0 {
        Ok(s)
    } else {
        Err(config_error(format!("{field} must be a positive exponent, got {s}")))
    }
}
