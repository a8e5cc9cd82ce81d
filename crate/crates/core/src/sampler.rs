//! Object-aware viewpoint sampling: rings of cameras around the target,
//! kept only where the clean object is confidently detected.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Orientation};
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::render::render;
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub radii: Vec<f64>,
    pub cameras_per_ring: usize,
    pub confidence_threshold: f64,
    pub n_train: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            radii: vec![1.0, 1.5, 2.0],
            cameras_per_ring: 40,
            confidence_threshold: 0.5,
            n_train: 20,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("sampler: radii must be non-empty and positive".into()));
        }
        if self.cameras_per_ring == 0 {
            return Err(Error::Config("sampler: cameras_per_ring must be at least 1".into()));
        }
        if !(self.confidence_threshold >= 0.0) {
            return Err(Error::Config("sampler: confidence_threshold must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub position: Vec3,
    pub orientation: Orientation,
    pub ring_index: usize,
    pub radius: f64,
    pub clean_confidence: f64,
}

impl Viewpoint {
    pub fn camera(&self, resolution: (usize, usize), vertical_fov: f64) -> Result<Camera> {
        Camera::new(self.position, self.orientation, resolution, vertical_fov)
    }
}

/// `N` cameras on a horizontal circle of radius `r` around `center`, each
/// looking at the center.
pub fn generate_ring(center: Vec3, r: f64, n: usize) -> Result<Vec<(Vec3, Orientation)>> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Range(format!("ring radius must be positive, got {r}")));
    }
    if n == 0 {
        return Err(Error::Range("ring must have at least one camera".into()));
    }
    Ok((0..n)
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / n as f64;
            let pos = Vec3::new(center.x + r * theta.cos(), center.y, center.z + r * theta.sin());
            (pos, Orientation::new(0.0, theta - FRAC_PI_2, PI))
        })
        .collect())
}

/// Every ring of the configuration, ordered by radius (as listed) then ring
/// index. Confidences are left at 0.
pub fn candidates(center: Vec3, config: &SamplerConfig) -> Result<Vec<Viewpoint>> {
    let mut out = Vec::new();
    for &r in &config.radii {
        for (i, (position, orientation)) in generate_ring(center, r, config.cameras_per_ring)?
            .into_iter()
            .enumerate()
        {
            out.push(Viewpoint {
                position,
                orientation,
                ring_index: i,
                radius: r,
                clean_confidence: 0.0,
            });
        }
    }
    Ok(out)
}

/// Clean-scene confidence of every candidate, in input order.
pub fn score_viewpoints(
    scene: &Scene,
    candidates: &[Viewpoint],
    detector: &dyn Detector,
    resolution: (usize, usize),
    vertical_fov: f64,
) -> Result<Vec<Viewpoint>> {
    let clean = scene.without_patches();
    candidates
        .par_iter()
        .map(|v| {
            let cam = v.camera(resolution, vertical_fov)?;
            let img = render(&clean, None, &cam).image;
            Ok(Viewpoint {
                clean_confidence: detector.confidence(&img, &scene.target_label)?,
                ..*v
            })
        })
        .collect()
}

/// Candidates whose clean render yields a target detection with confidence
/// at least `tau`.
pub fn filter_viewpoints(
    scene: &Scene,
    candidates: &[Viewpoint],
    detector: &dyn Detector,
    tau: f64,
    resolution: (usize, usize),
    vertical_fov: f64,
) -> Result<Vec<Viewpoint>> {
    if candidates.is_empty() {
        return Err(Error::EmptyViews);
    }
    let scored = score_viewpoints(scene, candidates, detector, resolution, vertical_fov)?;
    retain_confident(scored, tau)
}

/// Threshold already-scored viewpoints.
pub fn retain_confident(scored: Vec<Viewpoint>, tau: f64) -> Result<Vec<Viewpoint>> {
    let kept: Vec<Viewpoint> = scored
        .into_iter()
        .filter(|v| v.clean_confidence >= tau)
        .collect();
    if kept.is_empty() {
        return Err(Error::NoVisibleViewpoint);
    }
    Ok(kept)
}

/// Seeded disjoint split into `n_train` optimization views and the rest.
/// Both halves keep the input order.
pub fn split_views(views: &[Viewpoint], n_train: usize, seed: u64) -> Result<(Vec<Viewpoint>, Vec<Viewpoint>)> {
    if n_train >= views.len() {
        return Err(Error::InvalidSplit(format!(
            "n_train {n_train} must be smaller than the {} available views",
            views.len()
        )));
    }
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; views.len()];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = views.iter().zip(&is_train).partition(|(_, t)| **t);
    Ok((
        train.into_iter().map(|(v, _)| *v).collect(),
        test.into_iter().map(|(v, _)| *v).collect(),
    ))
}

/// Tab-separated table of viewpoints with a split tag per row.
pub fn write_viewpoints<W: Write>(mut out: W, views: &[Viewpoint], tag: &str) -> std::io::Result<()> {
    writeln!(out, "radius\tring_index\tx\ty\tz\tpitch\tyaw\troll\tclean_confidence\tsplit")?;
    for v in views {
        writeln!(
            out,
            "{:?}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{}",
            v.radius,
            v.ring_index,
            v.position.x,
            v.position.y,
            v.position.z,
            v.orientation.pitch,
            v.orientation.yaw,
            v.orientation.roll,
            v.clean_confidence,
            tag
        )?;
    }
    Ok(())
}
