use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use skewembed::curve::Breakpoint;
use skewembed::{
    quantize, CenteredAtomicMeasure, CurvePreset, DensitySpec, EmbeddingCurve, GridControl, Psi,
    Scheme, SimConfig,
};

use crate::Invalid;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub measure: MeasureBlock,
    #[serde(default)]
    pub curve: Option<CurveBlock>,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub sim: SimBlock,
    #[serde(default)]
    pub outputs: OutputsBlock,
    #[serde(default)]
    pub compare: Option<CompareBlock>,
}

/// Exactly one of `atoms` or `density` (with `n_atoms`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureBlock {
    #[serde(default)]
    pub atoms: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub density: Option<DensitySpec>,
    #[serde(default)]
    pub n_atoms: Option<usize>,
}

/// Exactly one of `preset` or `custom` (breakpoints `[s, F, h]`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveBlock {
    #[serde(default)]
    pub preset: Option<CurvePreset>,
    #[serde(default)]
    pub custom: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(default)]
    pub ds_max: Option<f64>,
    #[serde(default)]
    pub gamma_floor: Option<f64>,
    #[serde(default)]
    pub max_survival_drop: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    #[serde(default = "default_dx")]
    pub dx: f64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub record_levels: Vec<f64>,
    #[serde(default)]
    pub coupling_dx: Option<f64>,
    /// Grid points of the local-time ECDF table.
    #[serde(default = "default_ecdf_points")]
    pub ecdf_points: usize,
}

fn default_dx() -> f64 {
    0.01
}

fn default_paths() -> usize {
    100_000
}

fn default_ecdf_points() -> usize {
    200
}

impl Default for SimBlock {
    fn default() -> Self {
        Self {
            dx: default_dx(),
            n_paths: default_paths(),
            seed: 0,
            max_steps: None,
            record_levels: Vec::new(),
            coupling_dx: None,
            ecdf_points: default_ecdf_points(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsBlock {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Rows of `paths.csv`; 0 skips the file.
    #[serde(default)]
    pub paths_csv_cap: usize,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputsBlock {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            paths_csv_cap: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareBlock {
    pub curves: Vec<CurveBlock>,
    /// `0`, `l`, `l^p` or `exp(k)`.
    pub psi: String,
    pub level: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        if cfg.schema != SCHEMA {
            bail!(Invalid(format!(
                "schema {} is not supported (expected {SCHEMA})",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn measure(&self) -> Result<CenteredAtomicMeasure> {
        let m = &self.measure;
        match (&m.atoms, &m.density) {
            (Some(atoms), None) => {
                if m.n_atoms.is_some() {
                    bail!(Invalid("measure.n_atoms only applies to a density".into()));
                }
                Ok(CenteredAtomicMeasure::new(atoms)?)
            }
            (None, Some(density)) => {
                let n = m
                    .n_atoms
                    .ok_or_else(|| Invalid("measure.density needs measure.n_atoms".into()))?;
                Ok(quantize(density, n)?)
            }
            _ => bail!(Invalid(
                "measure needs exactly one of atoms or density".into()
            )),
        }
    }

    pub fn curve_block(&self) -> Result<&CurveBlock> {
        self.curve
            .as_ref()
            .ok_or_else(|| Invalid("missing curve block".into()).into())
    }

    pub fn grid(&self) -> GridControl {
        let mut g = GridControl::default();
        g.ds_max = self.grid.ds_max.or(g.ds_max);
        if let Some(v) = self.grid.gamma_floor {
            g.gamma_floor = v;
        }
        if let Some(v) = self.grid.max_survival_drop {
            g.max_survival_drop = v;
        }
        g
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        let mut cfg = SimConfig::new(s.dx, s.n_paths, s.seed);
        if let Some(m) = s.max_steps {
            cfg.max_steps = m;
        }
        cfg.record_levels = s.record_levels.clone();
        cfg.coupling_dx = s.coupling_dx;
        cfg.scheme = Scheme::SkewWalk;
        cfg
    }
}

impl CurveBlock {
    pub fn curve(&self, measure: &CenteredAtomicMeasure) -> Result<EmbeddingCurve> {
        match (&self.preset, &self.custom) {
            (Some(CurvePreset::Custom), None) => {
                bail!(Invalid("use curve.custom for custom breakpoints".into()))
            }
            (Some(tag), None) => Ok(EmbeddingCurve::preset(*tag, measure)?),
            (None, Some(points)) => Ok(EmbeddingCurve::custom(
                points
                    .iter()
                    .map(|p| Breakpoint::new(p[0], p[1], p[2]))
                    .collect(),
            )?),
            _ => bail!(Invalid(
                "curve needs exactly one of preset or custom".into()
            )),
        }
    }

    pub fn label(&self) -> String {
        match (&self.preset, &self.custom) {
            (Some(CurvePreset::Vallois), _) => "vallois".into(),
            (Some(CurvePreset::AzemaYor), _) => "azema_yor".into(),
            (Some(CurvePreset::LocalTime { level }), _) => format!("local_time({level})"),
            _ => "custom".into(),
        }
    }
}

impl CompareBlock {
    pub fn psi(&self) -> Result<Psi> {
        Ok(self.psi.parse::<Psi>()?)
    }
}
