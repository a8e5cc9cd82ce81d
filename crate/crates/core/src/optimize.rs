//! Multi-view sign-gradient ascent on the patch, with the two-stage
//! texture-then-opacity schedule.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::patch::Patch;
use crate::render::{render, render_backward, PatchGradient};
use crate::sampler::Viewpoint;
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Texture,
    Opacity,
    /// Both channels at once. Experimental; not part of the standard
    /// schedule.
    Joint,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Texture => "texture",
            Stage::Opacity => "opacity",
            Stage::Joint => "joint",
        }
    }

    fn updates_texture(self) -> bool {
        matches!(self, Stage::Texture | Stage::Joint)
    }

    fn updates_opacity(self) -> bool {
        matches!(self, Stage::Opacity | Stage::Joint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    pub stage: Stage,
}

fn default_step() -> f64 {
    1.0 / 255.0
}

fn default_iterations() -> usize {
    100
}

impl OptimizeConfig {
    pub fn new(stage: Stage) -> Self {
        Self {
            step_size: default_step(),
            iterations: default_iterations(),
            stage,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::OptimizeConfig(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.iterations == 0 {
            return Err(Error::OptimizeConfig("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean combined attack loss over the optimization views, one entry for the
/// initial patch and one after every iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub losses: Vec<f64>,
}

impl LossTrace {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn first(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// Two-column `iteration<TAB>loss` table.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration\tloss")?;
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(out, "{i}\t{l:?}")?;
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `p + step * sign(g)` on the stage's active channels, projected onto the
/// unit box. Frozen channels are copied bit for bit.
pub fn pgd_step(p: &Patch, g: &PatchGradient, cfg: &OptimizeConfig) -> Result<Patch> {
    if (g.height, g.width) != (p.height(), p.width())
        || g.d_texture.len() != p.texture().len()
        || g.d_opacity.len() != p.opacity().len()
    {
        return Err(Error::Shape(format!(
            "gradient is {}x{}, patch is {}x{}",
            g.height,
            g.width,
            p.height(),
            p.width()
        )));
    }
    let a = cfg.step_size;
    Ok(p.map_buffers(|tex, op| {
        if cfg.stage.updates_texture() {
            for (v, d) in tex.iter_mut().zip(&g.d_texture) {
                *v += a * sign(*d);
            }
        }
        if cfg.stage.updates_opacity() {
            for (v, d) in op.iter_mut().zip(&g.d_opacity) {
                *v += a * sign(*d);
            }
        }
    }))
}

/// Mean combined loss and mean patch gradient over `views`. Views are
/// evaluated in parallel and reduced in input order.
pub fn multi_view_gradient(
    scene: &Scene,
    patch: &Patch,
    views: &[Viewpoint],
    detector: &dyn Detector,
    resolution: (usize, usize),
    vertical_fov: f64,
) -> Result<(f64, PatchGradient)> {
    if views.is_empty() {
        return Err(Error::EmptyViews);
    }
    let per_view: Vec<(f64, PatchGradient)> = views
        .par_iter()
        .map(|v| {
            let cam = v.camera(resolution, vertical_fov)?;
            let img = render(scene, Some(patch), &cam).image;
            let (b, d_image) = detector.attack_loss(&img, &scene.target_label)?;
            let g = render_backward(scene, patch, &cam, &d_image)?;
            Ok((b.combined()?, g))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grad = PatchGradient::zeros_like(patch);
    for (l, g) in &per_view {
        total += l;
        grad.add_assign(g)?;
    }
    let n = views.len() as f64;
    grad.scale(1.0 / n);
    Ok((total / n, grad))
}

/// What the optimizer saw and did in one iteration.
pub struct StepRecord<'a> {
    pub iteration: usize,
    pub before: &'a Patch,
    pub gradient: &'a PatchGradient,
    pub after: &'a Patch,
    pub loss: f64,
}

/// Rendering parameters and views shared by every optimizer call.
#[derive(Clone, Copy)]
pub struct ViewSet<'a> {
    pub views: &'a [Viewpoint],
    pub resolution: (usize, usize),
    pub vertical_fov: f64,
}

/// Runs `cfg.iterations` ascent steps; `observe` is called after each.
pub fn optimize_stage_with(
    scene: &Scene,
    patch: &Patch,
    views: ViewSet<'_>,
    detector: &dyn Detector,
    cfg: &OptimizeConfig,
    mut observe: impl FnMut(StepRecord<'_>),
) -> Result<(Patch, LossTrace)> {
    cfg.validate()?;
    if views.views.is_empty() {
        return Err(Error::EmptyViews);
    }
    let eval = |p: &Patch| multi_view_gradient(scene, p, views.views, detector, views.resolution, views.vertical_fov);
    let mut current = patch.clone();
    let (mut loss, mut grad) = eval(&current)?;
    let mut trace = LossTrace { losses: vec![loss] };
    for it in 0..cfg.iterations {
        let next = pgd_step(&current, &grad, cfg)?;
        observe(StepRecord {
            iteration: it,
            before: &current,
            gradient: &grad,
            after: &next,
            loss,
        });
        current = next;
        (loss, grad) = eval(&current)?;
        trace.losses.push(loss);
        log::debug!("{} iteration {}: loss {loss:.6}", cfg.stage.name(), it + 1);
    }
    Ok((current, trace))
}

pub fn optimize_stage(
    scene: &Scene,
    patch: &Patch,
    views: ViewSet<'_>,
    detector: &dyn Detector,
    cfg: &OptimizeConfig,
) -> Result<(Patch, LossTrace)> {
    optimize_stage_with(scene, patch, views, detector, cfg, |_| {})
}

/// Texture stage followed by an opacity stage on its output.
pub fn two_stage_optimize(
    scene: &Scene,
    patch: &Patch,
    views: ViewSet<'_>,
    detector: &dyn Detector,
    stage1: &OptimizeConfig,
    stage2: &OptimizeConfig,
) -> Result<(Patch, LossTrace, LossTrace)> {
    if stage1.stage != Stage::Texture || stage2.stage != Stage::Opacity {
        return Err(Error::StageOrder(format!(
            "expected texture then opacity, got {} then {}",
            stage1.stage.name(),
            stage2.stage.name()
        )));
    }
    let (p1, t1) = optimize_stage(scene, patch, views, detector, stage1)?;
    let (p2, t2) = optimize_stage(scene, &p1, views, detector, stage2)?;
    Ok((p2, t1, t2))
}
