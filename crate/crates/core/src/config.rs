//! Run configuration: a TOML file with one table per stage. Unknown keys are
//! rejected and every value is range-checked at load. An optional top-level
//! `preset = "desk" | "full"` picks the base values the file overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{AdamConfig, DenoiserDims, NoiseSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::recon::{ChamferAlignConfig, FitOptimizer, ObjectFitConfig, TriangulationConfig};
use crate::sds::{SdsConfig, SdsOptimizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub depth: usize,
    pub embed: usize,
    /// Views generated per lift (input included).
    pub views: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            depth: 2,
            embed: 16,
            views: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub sv_steps: usize,
    pub mv_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Global-to-local sampling ratio (2 means 2:1).
    pub hybrid_ratio: f64,
    pub drop_rate: f64,
    /// Share of training cameras drawn from the predefined modes.
    pub predefined_fraction: f64,
    pub line_weight: f64,
    /// Held-out loss is evaluated (and the best weights kept) this often.
    pub validation_every: usize,
    /// Share of training sequences held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            sv_steps: 2000,
            mv_steps: 1000,
            batch_size: 16,
            lr: 1e-3,
            hybrid_ratio: 2.0,
            drop_rate: 0.1,
            predefined_fraction: 0.7,
            line_weight: 0.1,
            validation_every: 250,
            validation_fraction: 0.125,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdsSection {
    pub iterations: usize,
    pub lr: f64,
    pub cosine_decay: bool,
    pub sds_weight: f64,
    pub line_weight: f64,
    /// Step band as fractions of the schedule length.
    pub band_low: f64,
    pub band_high: f64,
    pub draws: usize,
    pub subject_depth: f64,
}

impl Default for SdsSection {
    fn default() -> Self {
        let d = SdsConfig::default();
        Self {
            iterations: d.iterations,
            lr: d.lr,
            cosine_decay: d.cosine_decay,
            sds_weight: d.sds_weight,
            line_weight: d.line_weight,
            band_low: d.band.0,
            band_high: d.band.1,
            draws: d.draws,
            subject_depth: d.subject_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    pub triangulation_iters: usize,
    pub min_ray_angle_deg: f64,
    pub object_iters: usize,
    pub object_lr: f64,
    pub smooth_weight: f64,
    pub chamfer_samples: usize,
    pub chamfer_restarts: usize,
    pub chamfer_iters: usize,
    pub chamfer_lr: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        let t = TriangulationConfig::default();
        let o = ObjectFitConfig::default();
        let c = ChamferAlignConfig::default();
        Self {
            triangulation_iters: t.iterations,
            min_ray_angle_deg: t.min_angle_deg,
            object_iters: o.iterations,
            object_lr: o.lr,
            smooth_weight: o.smooth_weight,
            chamfer_samples: c.samples,
            chamfer_restarts: c.restarts,
            chamfer_iters: c.iterations,
            chamfer_lr: c.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Foot-contact height threshold in meters.
    pub foot_height: f64,
    /// Length unit of 3D files: "m", "cm" or "mm".
    pub units: String,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            foot_height: crate::metrics::DEFAULT_FOOT_HEIGHT,
            units: "m".into(),
        }
    }
}

impl MetricsConfig {
    /// Factor converting file units to meters.
    pub fn to_meters(&self) -> Result<f64> {
        match self.units.as_str() {
            "m" => Ok(1.0),
            "cm" => Ok(0.01),
            "mm" => Ok(0.001),
            other => Err(Error::schema("config", format!("field `metrics.units`: unknown unit `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub frames: usize,
    pub fps: f64,
    pub width: f64,
    pub height: f64,
    pub train_cameras: usize,
    pub test_cameras: usize,
    pub distance_min: f64,
    pub distance_max: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            train_sequences: 16,
            test_sequences: 4,
            frames: 16,
            fps: 30.0,
            width: 1000.0,
            height: 1000.0,
            train_cameras: 6,
            test_cameras: 3,
            distance_min: 4.0,
            distance_max: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub preset: String,
    pub seed: u64,
    /// Worker threads for stages that parallelize; 1 keeps runs sequential.
    pub threads: usize,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub sds: SdsSection,
    pub recon: ReconConfig,
    pub metrics: MetricsConfig,
    pub simulate: SimulateConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            preset: "desk".into(),
            seed: 0,
            threads: 1,
            schedule: ScheduleConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            sds: SdsSection::default(),
            recon: ReconConfig::default(),
            metrics: MetricsConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

fn check(ok: bool, field: &str, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::schema("config", format!("field `{field}` {what}")))
    }
}

fn positive(v: f64, field: &str) -> Result<()> {
    check(v > 0.0 && v.is_finite(), field, "must be positive and finite")
}

fn fraction(v: f64, field: &str) -> Result<()> {
    check((0.0..=1.0).contains(&v), field, "must lie in [0, 1]")
}

fn nonzero(v: usize, field: &str) -> Result<()> {
    check(v > 0, field, "must be at least 1")
}

/// Recursively overlays `top` on `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl Config {
    /// Named base configuration. `full` carries the full-scale training
    /// scale (300k/120k steps, lr 1e-4, batch 64); `desk` shrinks the step
    /// counts so a run fits on a laptop.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Config::default();
        match name {
            "desk" => {}
            "full" => {
                c.preset = "full".into();
                c.training.sv_steps = 300_000;
                c.training.mv_steps = 120_000;
                c.training.lr = 1e-4;
                c.training.batch_size = 64;
                c.training.validation_every = 20_000;
            }
            other => {
                return Err(Error::schema("config", format!("field `preset`: unknown preset `{other}`")));
            }
        }
        Ok(c)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::schema("config", e.to_string()))?;
        let preset = match table.get("preset") {
            None => "desk".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::schema("config", "field `preset` must be a string")),
        };
        let base = Self::preset(&preset)?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::schema("config", e.to_string()))?;
        merge(&mut merged, table);
        let cfg: Config = merged.try_into().map_err(|e: toml::de::Error| Error::schema("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Schema { message, .. } => Error::schema(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::schema("config", e.to_string()))
    }

    /// SHA-256 of the resolved configuration in canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml_string()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        Self::preset(&self.preset)?;
        nonzero(self.threads, "threads")?;

        let s = &self.schedule;
        nonzero(s.steps, "schedule.steps")?;
        check(
            s.beta_start > 0.0 && s.beta_start <= s.beta_end && s.beta_end < 1.0,
            "schedule.beta_end",
            "must satisfy 0 < beta_start <= beta_end < 1",
        )?;

        let m = &self.model;
        nonzero(m.hidden, "model.hidden")?;
        check(m.embed > 0 && m.embed % 2 == 0, "model.embed", "must be even and positive")?;
        check(m.views >= 2, "model.views", "must be at least 2")?;

        let t = &self.training;
        nonzero(t.batch_size, "training.batch_size")?;
        positive(t.lr, "training.lr")?;
        check(t.hybrid_ratio >= 0.0 && t.hybrid_ratio.is_finite(), "training.hybrid_ratio", "must be non-negative")?;
        check((0.0..1.0).contains(&t.drop_rate), "training.drop_rate", "must lie in [0, 1)")?;
        fraction(t.predefined_fraction, "training.predefined_fraction")?;
        check(t.line_weight >= 0.0 && t.line_weight.is_finite(), "training.line_weight", "must be non-negative")?;
        nonzero(t.validation_every, "training.validation_every")?;
        check(
            (0.0..1.0).contains(&t.validation_fraction),
            "training.validation_fraction",
            "must lie in [0, 1)",
        )?;

        let d = &self.sds;
        nonzero(d.iterations, "sds.iterations")?;
        positive(d.lr, "sds.lr")?;
        check(d.sds_weight >= 0.0, "sds.sds_weight", "must be non-negative")?;
        check(d.line_weight >= 0.0, "sds.line_weight", "must be non-negative")?;
        fraction(d.band_low, "sds.band_low")?;
        fraction(d.band_high, "sds.band_high")?;
        check(d.band_low <= d.band_high, "sds.band_high", "must not be below sds.band_low")?;
        nonzero(d.draws, "sds.draws")?;
        positive(d.subject_depth, "sds.subject_depth")?;

        let r = &self.recon;
        positive(r.min_ray_angle_deg, "recon.min_ray_angle_deg")?;
        nonzero(r.object_iters, "recon.object_iters")?;
        positive(r.object_lr, "recon.object_lr")?;
        check(r.smooth_weight >= 0.0, "recon.smooth_weight", "must be non-negative")?;
        nonzero(r.chamfer_samples, "recon.chamfer_samples")?;
        nonzero(r.chamfer_restarts, "recon.chamfer_restarts")?;
        nonzero(r.chamfer_iters, "recon.chamfer_iters")?;
        positive(r.chamfer_lr, "recon.chamfer_lr")?;

        positive(self.metrics.foot_height, "metrics.foot_height")?;
        self.metrics.to_meters()?;

        let sim = &self.simulate;
        nonzero(sim.train_sequences, "simulate.train_sequences")?;
        check(sim.frames >= 2, "simulate.frames", "must be at least 2")?;
        positive(sim.fps, "simulate.fps")?;
        positive(sim.width, "simulate.width")?;
        positive(sim.height, "simulate.height")?;
        nonzero(sim.train_cameras, "simulate.train_cameras")?;
        nonzero(sim.test_cameras, "simulate.test_cameras")?;
        positive(sim.distance_min, "simulate.distance_min")?;
        check(sim.distance_max >= sim.distance_min, "simulate.distance_max", "must not be below distance_min")?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end)
    }

    pub fn dims(&self, joints: usize) -> DenoiserDims {
        DenoiserDims::new(joints, self.model.hidden, self.model.depth, self.model.embed)
    }

    /// Probability of drawing a global item for a `r : 1` ratio.
    pub fn global_fraction(&self) -> f64 {
        let r = self.training.hybrid_ratio;
        r / (r + 1.0)
    }

    pub fn train_config(&self, steps: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: self.training.batch_size,
            adam: AdamConfig::with_lr(self.training.lr),
            line_weight: self.training.line_weight,
            global_fraction: self.global_fraction(),
            drop_rate: self.training.drop_rate,
            seed,
        }
    }

    pub fn sds_config(&self, seed: u64) -> SdsConfig {
        let d = &self.sds;
        SdsConfig {
            views: self.model.views,
            iterations: d.iterations,
            lr: d.lr,
            cosine_decay: d.cosine_decay,
            sds_weight: d.sds_weight,
            line_weight: d.line_weight,
            band: (d.band_low, d.band_high),
            draws: d.draws,
            subject_depth: d.subject_depth,
            radius: None,
            optimizer: SdsOptimizer::Adam,
            seed,
        }
    }

    pub fn triangulation(&self) -> TriangulationConfig {
        TriangulationConfig {
            iterations: self.recon.triangulation_iters,
            min_angle_deg: self.recon.min_ray_angle_deg,
        }
    }

    pub fn object_fit(&self) -> ObjectFitConfig {
        ObjectFitConfig {
            iterations: self.recon.object_iters,
            lr: self.recon.object_lr,
            smooth_weight: self.recon.smooth_weight,
            optimizer: FitOptimizer::Adam,
            ..ObjectFitConfig::default()
        }
    }

    pub fn chamfer(&self) -> ChamferAlignConfig {
        ChamferAlignConfig {
            samples: self.recon.chamfer_samples,
            restarts: self.recon.chamfer_restarts,
            iterations: self.recon.chamfer_iters,
            lr: self.recon.chamfer_lr,
            threads: self.threads,
            ..ChamferAlignConfig::default()
        }
    }
}
