//! Config-driven orchestration: sample, optimize, evaluate, report.
//!
//! Every stage reads its inputs from and writes its outputs to one output
//! directory. Each artifact carries the run seed and the config hash;
//! tables start with a `# seed=... config_hash=...` line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{SurrogateConfig, SurrogateDetector, TemplateBank};
use crate::error::{Error, Result};
use crate::eval::{compute_asr, compute_metrics, run_episode, sample_starts, AsrReport, NavConfig, NavMetrics};
use crate::optimize::{optimize_stage, LossTrace, OptimizeConfig, Stage, ViewSet};
use crate::patch::{init_patch, Patch, PatchMetadata, INIT_MEAN, INIT_STD};
use crate::sampler::{candidates, score_viewpoints, retain_confident, split_views, write_viewpoints, SamplerConfig, Viewpoint};
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub height: usize,
    pub width: usize,
    pub vertical_fov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            vertical_fov_deg: 79.0,
        }
    }
}

impl CameraConfig {
    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn vertical_fov(&self) -> f64 {
        self.vertical_fov_deg.to_radians()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub height: usize,
    pub width: usize,
    pub init_opacity: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            init_opacity: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub step_size: f64,
    pub iterations: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        let d = OptimizeConfig::new(Stage::Texture);
        Self {
            step_size: d.step_size,
            iterations: d.iterations,
        }
    }
}

impl StageConfig {
    pub fn with_stage(&self, stage: Stage) -> OptimizeConfig {
        OptimizeConfig {
            step_size: self.step_size,
            iterations: self.iterations,
            stage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub threshold: f64,
    pub opacity_sweep: bool,
    pub sweep_opacities: Vec<f64>,
    pub navigation: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            opacity_sweep: true,
            sweep_opacities: vec![0.2, 0.4, 0.6, 0.8],
            navigation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Scene file, relative to the config file.
    pub scene: PathBuf,
    /// Directory of class templates, relative to the config file.
    pub templates: PathBuf,
    /// Worker threads; 0 picks one per core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub patch: PatchConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub detector: SurrogateConfig,
    #[serde(default)]
    pub stage1: StageConfig,
    #[serde(default)]
    pub stage2: StageConfig,
    /// Replaces the two-stage schedule with a single joint stage.
    #[serde(default)]
    pub experimental_joint: bool,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub navigation: NavConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Hash of the settings that sampling and optimization depend on;
    /// evaluation and navigation settings are left out so they can change
    /// without invalidating views and checkpoints.
    pub fn inputs_hash(&self) -> String {
        Self {
            evaluation: EvaluationConfig::default(),
            navigation: NavConfig::default(),
            ..self.clone()
        }
        .hash()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.camera.height == 0 || self.camera.width == 0 {
            return bad("camera resolution must be positive");
        }
        if !(self.camera.vertical_fov_deg > 0.0 && self.camera.vertical_fov_deg < 180.0) {
            return bad("camera vertical_fov_deg must lie in (0, 180)");
        }
        if self.patch.height == 0 || self.patch.width == 0 {
            return bad("patch dimensions must be positive");
        }
        if !(0.0..=1.0).contains(&self.patch.init_opacity) {
            return bad("patch init_opacity must lie in [0, 1]");
        }
        self.sampler.validate()?;
        self.detector.validate()?;
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            s.with_stage(Stage::Texture)
                .validate()
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        if !(self.evaluation.threshold >= 0.0) {
            return bad("evaluation threshold must be non-negative");
        }
        if self.evaluation.sweep_opacities.iter().any(|o| !(0.0..=1.0).contains(o)) {
            return bad("sweep opacities must lie in [0, 1]");
        }
        self.navigation.validate()
    }
}

/// Seeds of the independent random draws, derived from the run seed.
#[derive(Debug, Clone, Copy)]
struct Seeds {
    split: u64,
    patch: u64,
    starts: u64,
}

impl Seeds {
    fn new(seed: u64) -> Self {
        Self {
            split: seed,
            patch: seed.wrapping_add(1),
            starts: seed.wrapping_add(2),
        }
    }
}

/// Provenance stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub seed: u64,
    pub config_hash: String,
}

impl Stamp {
    fn header(&self) -> String {
        format!("# seed={} config_hash={}\n", self.seed, self.config_hash)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleOutput {
    pub stamp: Stamp,
    pub n_candidates: usize,
    pub retained: Vec<Viewpoint>,
    pub train: Vec<Viewpoint>,
    pub test: Vec<Viewpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrRow {
    pub condition: String,
    /// `None` when the condition renders no patch.
    pub patch: Option<String>,
    pub n_views: usize,
    pub n_attacked: usize,
    pub asr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub opacity: f64,
    pub optimized_asr: f64,
    pub random_asr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavRow {
    pub condition: String,
    pub episodes: usize,
    pub metrics: NavMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub stamp: Stamp,
    /// Stamp of the views and checkpoints that were evaluated.
    pub inputs: Stamp,
    pub threshold: f64,
    pub ablation: Vec<AsrRow>,
    pub opacity_sweep: Vec<SweepRow>,
    pub navigation: Vec<NavRow>,
}

impl EvaluationReport {
    pub fn row(&self, condition: &str) -> Option<&AsrRow> {
        self.ablation.iter().find(|r| r.condition == condition)
    }

    pub fn nav(&self, condition: &str) -> Option<&NavRow> {
        self.navigation.iter().find(|r| r.condition == condition)
    }

    /// Plain-text summary tables.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "viewpatch report");
        let _ = writeln!(s, "seed {}  config {}", self.stamp.seed, self.stamp.config_hash);
        let _ = writeln!(s, "detection threshold {}", self.threshold);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<30} {:<14} {:>6} {:>9} {:>7}", "condition", "patch", "views", "attacked", "ASR");
        for r in &self.ablation {
            let _ = writeln!(
                s,
                "{:<30} {:<14} {:>6} {:>9} {:>7.3}",
                r.condition,
                r.patch.as_deref().unwrap_or("absent"),
                r.n_views,
                r.n_attacked,
                r.asr
            );
        }
        if !self.opacity_sweep.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "{:<8} {:>14} {:>14}", "opacity", "optimized ASR", "random ASR");
            for r in &self.opacity_sweep {
                let _ = writeln!(s, "{:<8.2} {:>14.3} {:>14.3}", r.opacity, r.optimized_asr, r.random_asr);
            }
        }
        if !self.navigation.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "{:<30} {:>8} {:>6} {:>6} {:>7}", "navigation", "episodes", "SR", "SPL", "DTS");
            for r in &self.navigation {
                let _ = writeln!(
                    s,
                    "{:<30} {:>8} {:>6.3} {:>6.3} {:>7.3}",
                    r.condition, r.episodes, r.metrics.sr, r.metrics.spl, r.metrics.dts
                );
            }
        }
        s
    }
}

pub const NO_ATTACK: &str = "no attack";
pub const RANDOM_TEXTURE: &str = "random texture";
pub const SINGLE_VIEW: &str = "single-view texture";
pub const MULTI_VIEW: &str = "multi-view texture";
pub const MULTI_VIEW_OPACITY: &str = "multi-view texture + opacity";
pub const JOINT: &str = "joint (experimental)";

/// Names of patch checkpoints in the output directory.
pub mod files {
    pub const VIEWS: &str = "views.json";
    pub const INIT: &str = "patch_init";
    pub const SINGLE_VIEW: &str = "single_view";
    pub const STAGE1: &str = "stage1";
    pub const STAGE2: &str = "stage2";
    pub const JOINT: &str = "joint";
    pub const EVALUATION: &str = "evaluation.json";
    pub const REPORT_TEXT: &str = "report.txt";
    pub const REPORT_JSON: &str = "report.json";
}

/// Where [`Pipeline::optimize`] starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resume {
    /// Run every optimization from the initial patch.
    Start,
    /// Reuse the stage-1 checkpoint and run stage 2 only.
    Stage2,
}

pub struct Pipeline {
    config: RunConfig,
    stamp: Stamp,
    inputs: Stamp,
    scene: Scene,
    detector: SurrogateDetector,
}

impl Pipeline {
    /// Loads and validates `path`; any problem is a configuration error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::new(config, base)
    }

    /// Builds a pipeline from a parsed config whose paths are relative to
    /// `base_dir`.
    pub fn new(config: RunConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let as_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        let scene = Scene::load(&base_dir.join(&config.scene)).map_err(as_config)?;
        let bank = TemplateBank::load_dir(&base_dir.join(&config.templates)).map_err(as_config)?;
        if bank.get(&scene.target_label).is_none() {
            return Err(Error::Config(format!(
                "template bank has no template for target `{}`",
                scene.target_label
            )));
        }
        if scene.placements().is_empty() {
            return Err(Error::Config("scene defines no patch placement".into()));
        }
        let detector = SurrogateDetector::new(&bank, config.detector.clone()).map_err(as_config)?;
        let stamp = Stamp {
            seed: config.seed,
            config_hash: config.hash(),
        };
        let inputs = Stamp {
            seed: config.seed,
            config_hash: config.inputs_hash(),
        };
        Ok(Self {
            config,
            stamp,
            inputs,
            scene,
            detector,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn stamp(&self) -> &Stamp {
        &self.stamp
    }

    /// Stamp carried by views and checkpoints.
    pub fn inputs_stamp(&self) -> &Stamp {
        &self.inputs
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn detector(&self) -> &SurrogateDetector {
        &self.detector
    }

    fn views<'a>(&self, views: &'a [Viewpoint]) -> ViewSet<'a> {
        ViewSet {
            views,
            resolution: self.config.camera.resolution(),
            vertical_fov: self.config.camera.vertical_fov(),
        }
    }

    /// Candidate rings, confidence filter, and train/test split.
    pub fn sample(&self, out: &Path) -> Result<SampleOutput> {
        ensure_dir(out)?;
        let cfg = &self.config;
        let cands = candidates(self.scene.object_center, &cfg.sampler)?;
        let scored = score_viewpoints(
            &self.scene,
            &cands,
            &self.detector,
            cfg.camera.resolution(),
            cfg.camera.vertical_fov(),
        )?;
        self.write_views(&out.join("candidates.tsv"), &scored, "candidate")?;
        let retained = retain_confident(scored.clone(), cfg.sampler.confidence_threshold)?;
        log::info!("{} of {} candidate viewpoints retained", retained.len(), scored.len());
        let (train, test) = split_views(&retained, cfg.sampler.n_train, Seeds::new(cfg.seed).split)?;
        self.write_views(&out.join("retained.tsv"), &retained, "retained")?;
        self.write_views(&out.join("train.tsv"), &train, "train")?;
        self.write_views(&out.join("test.tsv"), &test, "test")?;
        let output = SampleOutput {
            stamp: self.inputs.clone(),
            n_candidates: scored.len(),
            retained,
            train,
            test,
        };
        write_json(&out.join(files::VIEWS), &output)?;
        Ok(output)
    }

    fn write_views(&self, path: &Path, views: &[Viewpoint], tag: &str) -> Result<()> {
        let mut buf = self.inputs.header().into_bytes();
        write_viewpoints(&mut buf, views, tag).expect("in-memory write");
        write_file(path, &buf)
    }

    /// Reads the sampling output, checking it belongs to this config.
    pub fn load_views(&self, out: &Path) -> Result<SampleOutput> {
        let views: SampleOutput = read_json(&out.join(files::VIEWS))?;
        self.check_stamp(&views.stamp, files::VIEWS)?;
        Ok(views)
    }

    fn check_stamp(&self, stamp: &Stamp, what: &str) -> Result<()> {
        if *stamp != self.inputs {
            return Err(Error::MissingInput(format!(
                "{what} was produced by a different configuration (config hash {})",
                stamp.config_hash
            )));
        }
        Ok(())
    }

    fn save_checkpoint(&self, out: &Path, name: &str, patch: &Patch, stage: &str, iterations: usize, trace: Option<&LossTrace>) -> Result<()> {
        patch.save(&out.join(format!("{name}.vpatch")))?;
        patch.save_preview(&out.join(format!("{name}.png")))?;
        PatchMetadata {
            seed: self.inputs.seed,
            stage: stage.to_string(),
            iterations,
            init_mean: INIT_MEAN,
            init_std: INIT_STD,
            init_opacity: self.config.patch.init_opacity,
            config_hash: self.inputs.config_hash.clone(),
        }
        .save(&out.join(format!("{name}.json")))?;
        if let Some(t) = trace {
            let mut buf = self.inputs.header().into_bytes();
            t.write_table(&mut buf).expect("in-memory write");
            write_file(&out.join(format!("{name}_trace.tsv")), &buf)?;
        }
        Ok(())
    }

    /// Loads a checkpoint written by this configuration.
    pub fn load_checkpoint(&self, out: &Path, name: &str) -> Result<Patch> {
        let path = out.join(format!("{name}.vpatch"));
        if !path.exists() {
            return Err(Error::MissingInput(format!("checkpoint {} not found", path.display())));
        }
        let meta = PatchMetadata::load(&out.join(format!("{name}.json")))?;
        self.check_stamp(
            &Stamp {
                seed: meta.seed,
                config_hash: meta.config_hash,
            },
            name,
        )?;
        Patch::load(&path)
    }

    fn initial_patch(&self) -> Result<Patch> {
        let p = &self.config.patch;
        init_patch(p.height, p.width, Seeds::new(self.config.seed).patch, p.init_opacity)
    }

    /// Single-view baseline, stage 1 and stage 2 (or the experimental joint
    /// stage). Returns the final patch.
    pub fn optimize(&self, out: &Path, resume: Resume) -> Result<Patch> {
        ensure_dir(out)?;
        let views = self.load_views(out)?;
        let cfg = &self.config;
        let train = self.views(&views.train);
        if cfg.experimental_joint {
            let p0 = self.initial_patch()?;
            self.save_checkpoint(out, files::INIT, &p0, "init", 0, None)?;
            let joint = cfg.stage1.with_stage(Stage::Joint);
            let (p, t) = optimize_stage(&self.scene, &p0, train, &self.detector, &joint)?;
            self.save_checkpoint(out, files::JOINT, &p, "joint", joint.iterations, Some(&t))?;
            return Ok(p);
        }
        let stage1 = cfg.stage1.with_stage(Stage::Texture);
        let p1 = match resume {
            Resume::Start => {
                let p0 = self.initial_patch()?;
                self.save_checkpoint(out, files::INIT, &p0, "init", 0, None)?;
                let (single, ts) = optimize_stage(&self.scene, &p0, self.views(&views.train[..1]), &self.detector, &stage1)?;
                self.save_checkpoint(out, files::SINGLE_VIEW, &single, "texture", stage1.iterations, Some(&ts))?;
                log::info!("single-view stage: loss {:.4} -> {:.4}", ts.first().unwrap_or(0.0), ts.last().unwrap_or(0.0));
                let (p1, t1) = optimize_stage(&self.scene, &p0, train, &self.detector, &stage1)?;
                self.save_checkpoint(out, files::STAGE1, &p1, "texture", stage1.iterations, Some(&t1))?;
                log::info!("texture stage: loss {:.4} -> {:.4}", t1.first().unwrap_or(0.0), t1.last().unwrap_or(0.0));
                p1
            }
            Resume::Stage2 => self.load_checkpoint(out, files::STAGE1)?,
        };
        let stage2 = cfg.stage2.with_stage(Stage::Opacity);
        let (p2, t2) = optimize_stage(&self.scene, &p1, train, &self.detector, &stage2)?;
        self.save_checkpoint(out, files::STAGE2, &p2, "opacity", stage2.iterations, Some(&t2))?;
        log::info!("opacity stage: loss {:.4} -> {:.4}", t2.first().unwrap_or(0.0), t2.last().unwrap_or(0.0));
        Ok(p2)
    }

    fn asr(&self, patch: Option<&Patch>, views: &[Viewpoint]) -> Result<AsrReport> {
        compute_asr(
            &self.scene,
            patch,
            views,
            &self.detector,
            self.config.evaluation.threshold,
            self.config.camera.resolution(),
            self.config.camera.vertical_fov(),
        )
    }

    fn asr_row(&self, out: &Path, condition: &str, patch: Option<(&str, &Patch)>, views: &[Viewpoint]) -> Result<AsrRow> {
        let report = self.asr(patch.map(|p| p.1), views)?;
        let slug: String = condition
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        let mut buf = self.stamp.header().into_bytes();
        report.write_table(&mut buf).expect("in-memory write");
        write_file(&out.join(format!("asr_{slug}.tsv")), &buf)?;
        log::info!("{condition}: ASR {:.3}", report.asr);
        Ok(AsrRow {
            condition: condition.to_string(),
            patch: patch.map(|p| p.0.to_string()),
            n_views: report.n_views,
            n_attacked: report.n_attacked,
            asr: report.asr,
        })
    }

    /// Navigation metrics over the seeded start set.
    pub fn navigation(&self, patch: Option<&Patch>) -> Result<NavMetrics> {
        let nav = &self.config.navigation;
        let starts = sample_starts(&self.scene, nav, nav.episodes, Seeds::new(self.config.seed).starts)?;
        let results = starts
            .par_iter()
            .map(|s| {
                run_episode(
                    &self.scene,
                    patch,
                    *s,
                    nav,
                    &self.detector,
                    self.config.camera.resolution(),
                    self.config.camera.vertical_fov(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        compute_metrics(&results)
    }

    /// ASR ablation rows, opacity sweep and navigation metrics. With
    /// `clean_only` only the unpatched scene is evaluated and no
    /// checkpoints are needed.
    pub fn evaluate(&self, out: &Path, clean_only: bool) -> Result<EvaluationReport> {
        ensure_dir(out)?;
        let views = self.load_views(out)?;
        let test = &views.test;
        let cfg = &self.config.evaluation;
        let mut report = EvaluationReport {
            stamp: self.stamp.clone(),
            inputs: self.inputs.clone(),
            threshold: cfg.threshold,
            ablation: vec![self.asr_row(out, NO_ATTACK, None, test)?],
            opacity_sweep: Vec::new(),
            navigation: Vec::new(),
        };
        if clean_only {
            if cfg.navigation {
                report.navigation.push(self.nav_row(NO_ATTACK, None)?);
            }
            write_json(&out.join(files::EVALUATION), &report)?;
            return Ok(report);
        }

        let p0 = self.load_checkpoint(out, files::INIT)?;
        report.ablation.push(self.asr_row(out, RANDOM_TEXTURE, Some((files::INIT, &p0)), test)?);
        let final_patch = if self.config.experimental_joint {
            let pj = self.load_checkpoint(out, files::JOINT)?;
            report.ablation.push(self.asr_row(out, JOINT, Some((files::JOINT, &pj)), test)?);
            pj
        } else {
            let single = self.load_checkpoint(out, files::SINGLE_VIEW)?;
            let p1 = self.load_checkpoint(out, files::STAGE1)?;
            let p2 = self.load_checkpoint(out, files::STAGE2)?;
            report.ablation.push(self.asr_row(out, SINGLE_VIEW, Some((files::SINGLE_VIEW, &single)), test)?);
            report.ablation.push(self.asr_row(out, MULTI_VIEW, Some((files::STAGE1, &p1)), test)?);
            report.ablation.push(self.asr_row(out, MULTI_VIEW_OPACITY, Some((files::STAGE2, &p2)), test)?);
            if cfg.opacity_sweep {
                for &o in &cfg.sweep_opacities {
                    let opt = self.asr(Some(&p1.with_constant_opacity(o)?), test)?;
                    let rnd = self.asr(Some(&p0.with_constant_opacity(o)?), test)?;
                    log::info!("opacity {o}: optimized ASR {:.3}, random ASR {:.3}", opt.asr, rnd.asr);
                    report.opacity_sweep.push(SweepRow {
                        opacity: o,
                        optimized_asr: opt.asr,
                        random_asr: rnd.asr,
                    });
                }
            }
            p2
        };
        if cfg.navigation {
            report.navigation.push(self.nav_row(NO_ATTACK, None)?);
            let name = if self.config.experimental_joint { JOINT } else { MULTI_VIEW_OPACITY };
            report.navigation.push(self.nav_row(name, Some(&final_patch))?);
        }
        write_json(&out.join(files::EVALUATION), &report)?;
        Ok(report)
    }

    fn nav_row(&self, condition: &str, patch: Option<&Patch>) -> Result<NavRow> {
        let metrics = self.navigation(patch)?;
        log::info!(
            "navigation, {condition}: SR {:.3} SPL {:.3} DTS {:.3}",
            metrics.sr,
            metrics.spl,
            metrics.dts
        );
        Ok(NavRow {
            condition: condition.to_string(),
            episodes: self.config.navigation.episodes,
            metrics,
        })
    }

    /// Writes the plain-text and JSON summaries of a finished evaluation.
    pub fn report(&self, out: &Path) -> Result<EvaluationReport> {
        let report: EvaluationReport = read_json(&out.join(files::EVALUATION))?;
        self.check_stamp(&report.inputs, files::EVALUATION)?;
        write_file(&out.join(files::REPORT_TEXT), report.to_text().as_bytes())?;
        write_json(&out.join(files::REPORT_JSON), &report)?;
        Ok(report)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|_| Error::MissingInput(format!("{} not found; run the earlier stages first", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 3
        scene = "scene.toml"
        templates = "templates"
    "#;

    #[test]
    fn defaults_fill_every_section() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert!(c.validate().is_ok());
        assert_eq!(c.sampler.radii, vec![1.0, 1.5, 2.0]);
        assert_eq!(c.stage1.iterations, 100);
        assert_eq!(c.stage2.step_size, 1.0 / 255.0);
        assert_eq!(c.navigation.step_budget, 500);
        assert_eq!(c.evaluation.sweep_opacities, vec![0.2, 0.4, 0.6, 0.8]);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 4;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = a.clone();
        c.evaluation.opacity_sweep = !c.evaluation.opacity_sweep;
        c.navigation.episodes += 1;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.inputs_hash(), c.inputs_hash());
        assert_ne!(a.inputs_hash(), b.inputs_hash());
    }

    #[test]
    fn validation_failures() {
        let mut c = RunConfig::from_toml(MINIMAL).unwrap();
        c.stage1.iterations = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::from_toml(MINIMAL).unwrap();
        c.patch.init_opacity = 1.5;
        assert!(c.validate().is_err());
        assert!(RunConfig::from_toml("seed = 1").is_err());
        assert!(RunConfig::from_toml(&format!("{MINIMAL}\nbogus = 1")).is_err());
    }

    #[test]
    fn missing_scene_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert!(matches!(Pipeline::new(c, dir.path()), Err(Error::Config(_))));
    }
}
