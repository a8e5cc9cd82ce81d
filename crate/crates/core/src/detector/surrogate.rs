//! Deterministic, differentiable template-correlation detector.
//!
//! Each class template is slid (stride 1) over the image at every configured
//! scale. A window's normalized cross-correlation against the zero-mean,
//! unit-norm template is
//!
//! ```text
//! ncc = <t, x> / sqrt(|x - mean(x)|^2 + n * floor^2)
//! ```
//!
//! over all `n` window values (three channels jointly), and its score is
//! `((ncc + 1) / 2) ^ sharpness`. Windows with (numerically) zero variance
//! score 0. The attack loss is built from these score maps:
//!
//! * `L1 = -ln(smooth-max of target scores)` (softmax-weighted mean),
//! * `L2 = -ln(mean target score in the 3x3 neighborhood of the arg-max)`,
//! * `L3 = -ln(mean score over all classes and windows)`,
//! * `L4 = -ln(mean of the top-k scores over all classes)`,
//!
//! each as `-ln((x + 1e-6) / (1 + 1e-6))` so the terms are non-negative.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_weights, AttackLossBreakdown, Detection, Detector, DEFAULT_WEIGHTS};
use crate::error::{Error, Result};
use crate::raster::Image;

const EPS: f64 = 1e-6;
const VARIANCE_GUARD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    /// Template sizes, relative to the stored template.
    pub scales: Vec<f64>,
    /// Exponent applied to `(ncc + 1) / 2`.
    pub sharpness: f64,
    /// Per-value standard deviation added to every window's variance.
    pub contrast_floor: f64,
    /// Softmax temperature of the smooth maximum.
    pub temperature: f64,
    pub top_k: usize,
    pub weights: [f64; 4],
    /// Boxes of one class overlapping a stronger box above this IoU are
    /// suppressed.
    pub nms_iou: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            scales: vec![1.0, 0.5],
            sharpness: 6.0,
            contrast_floor: 0.005,
            temperature: 0.05,
            top_k: 10,
            weights: DEFAULT_WEIGHTS,
            nms_iou: 0.5,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("detector: {m}")));
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0)) {
            return bad("scales must be non-empty and positive");
        }
        if !(self.sharpness >= 1.0) {
            return bad("sharpness must be at least 1");
        }
        if !(self.contrast_floor >= 0.0) {
            return bad("contrast_floor must be non-negative");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if self.top_k == 0 {
            return bad("top_k must be positive");
        }
        check_weights(&self.weights)
    }
}

/// One template image per class, keyed by label.
#[derive(Debug, Clone)]
pub struct TemplateBank {
    entries: Vec<(String, Image)>,
}

impl TemplateBank {
    pub fn new(mut entries: Vec<(String, Image)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("template bank is empty".into()));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self { entries })
    }

    /// Loads every `*.png` in `dir`; the file stem is the class label.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for ent in rd {
            let path = ent.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let label = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Config(format!("bad template name {}", path.display())))?
                .to_string();
            entries.push((label, Image::load(&path)?));
        }
        Self::new(entries)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }

    pub fn get(&self, label: &str) -> Option<&Image> {
        self.entries.iter().find(|(l, _)| l == label).map(|(_, i)| i)
    }
}

#[derive(Debug, Clone)]
struct ScaledTemplate {
    h: usize,
    w: usize,
    /// Zero-mean, unit-norm values, row-major RGB.
    values: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ClassTemplates {
    label: String,
    scaled: Vec<ScaledTemplate>,
}

#[derive(Debug, Clone)]
pub struct SurrogateDetector {
    config: SurrogateConfig,
    classes: Vec<ClassTemplates>,
}

/// Scores of one class template at one scale, plus the per-window
/// quantities needed for the backward pass.
#[derive(Debug, Clone)]
struct ScoreMap {
    class: usize,
    template: usize,
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
    ncc: Vec<f64>,
    /// `<t, x>` per window.
    dot: Vec<f64>,
    /// Regularized centered energy per window; 0 marks a guarded window.
    energy: Vec<f64>,
    mean: Vec<f64>,
}

fn resample(img: &Image, h: usize, w: usize) -> Image {
    if (img.height(), img.width()) == (h, w) {
        return img.clone();
    }
    let buf: image::Rgb32FImage = image::ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        image::Rgb(img.pixel(y as usize, x as usize).map(|v| v as f32))
    });
    let out = image::imageops::resize(&buf, w as u32, h as u32, image::imageops::FilterType::Triangle);
    let mut res = Image::zeros(h, w);
    for (x, y, p) in out.enumerate_pixels() {
        res.set_pixel(y as usize, x as usize, p.0.map(|v| (v as f64).clamp(0.0, 1.0)));
    }
    res
}

fn normalize_template(label: &str, img: &Image) -> Result<ScaledTemplate> {
    let vals = img.as_slice();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let centered: Vec<f64> = vals.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-9) {
        return Err(Error::Config(format!("template `{label}` has no contrast")));
    }
    Ok(ScaledTemplate {
        h: img.height(),
        w: img.width(),
        values: centered.into_iter().map(|v| v / norm).collect(),
    })
}

/// Element-wise neighbourhood mean helper for `L2`.
fn neighbourhood(rows: usize, cols: usize, idx: usize) -> Vec<usize> {
    let (r, c) = ((idx / cols) as isize, (idx % cols) as isize);
    let mut out = Vec::with_capacity(9);
    for dr in -1..=1 {
        for dc in -1..=1 {
            let (rr, cc) = (r + dr, c + dc);
            if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                out.push(rr as usize * cols + cc as usize);
            }
        }
    }
    out
}

fn neg_log(x: f64) -> (f64, f64) {
    (-((x + EPS) / (1.0 + EPS)).ln(), -1.0 / (x + EPS))
}

/// Softmax-weighted mean of `s` at temperature `t` and its gradient.
fn smooth_max(s: &[f64], t: f64) -> (f64, Vec<f64>) {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = s.iter().map(|v| ((v - m) / t).exp()).collect();
    let z: f64 = w.iter().sum();
    let value: f64 = s.iter().zip(&w).map(|(v, wi)| v * wi).sum::<f64>() / z;
    let grad = s
        .iter()
        .zip(&w)
        .map(|(v, wi)| wi / z * (1.0 + (v - value) / t))
        .collect();
    (value, grad)
}

/// Scores-only part of the attack loss, exposed for property tests:
/// returns the four components for `target` score maps (`target_maps`,
/// each `(rows, cols, scores)`) and all-class maps.
pub fn loss_from_scores(
    target_maps: &[(usize, usize, Vec<f64>)],
    all_maps: &[(usize, usize, Vec<f64>)],
    temperature: f64,
    top_k: usize,
) -> [f64; 4] {
    let target: Vec<f64> = target_maps.iter().flat_map(|m| m.2.iter().copied()).collect();
    let all: Vec<f64> = all_maps.iter().flat_map(|m| m.2.iter().copied()).collect();
    let (smax, _) = smooth_max(&target, temperature);
    let (mi, ci) = argmax_in_maps(target_maps.iter().map(|m| m.2.as_slice()));
    let (rows, cols, scores) = &target_maps[mi];
    let nb = neighbourhood(*rows, *cols, ci);
    let local = nb.iter().map(|&i| scores[i]).sum::<f64>() / nb.len() as f64;
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let top = top_k_indices(&all, top_k);
    let top_mean = top.iter().map(|&i| all[i]).sum::<f64>() / top.len() as f64;
    [neg_log(smax).0, neg_log(local).0, neg_log(mean).0, neg_log(top_mean).0]
}

fn argmax_in_maps<'a>(maps: impl Iterator<Item = &'a [f64]>) -> (usize, usize) {
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (m, s) in maps.enumerate() {
        for (i, &v) in s.iter().enumerate() {
            if v > best.2 {
                best = (m, i, v);
            }
        }
    }
    (best.0, best.1)
}

fn top_k_indices(all: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&a, &b| all[b].total_cmp(&all[a]).then(a.cmp(&b)));
    order.truncate(k.min(all.len()));
    order
}

fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area = |r: &[f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    inter / (area(a) + area(b) - inter)
}

impl SurrogateDetector {
    pub fn new(bank: &TemplateBank, config: SurrogateConfig) -> Result<Self> {
        config.validate()?;
        let classes = bank
            .entries
            .iter()
            .map(|(label, img)| {
                let scaled = config
                    .scales
                    .iter()
                    .map(|&s| {
                        let h = ((img.height() as f64 * s).round() as usize).max(1);
                        let w = ((img.width() as f64 * s).round() as usize).max(1);
                        normalize_template(label, &resample(img, h, w))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ClassTemplates {
                    label: label.clone(),
                    scaled,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, classes })
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.label.as_str())
    }

    fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.label == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    fn score_maps(&self, image: &Image) -> Result<Vec<ScoreMap>> {
        let mut maps = Vec::new();
        for (ci, class) in self.classes.iter().enumerate() {
            for (ti, t) in class.scaled.iter().enumerate() {
                if t.h > image.height() || t.w > image.width() {
                    return Err(Error::TemplateTooLarge {
                        label: class.label.clone(),
                        th: t.h,
                        tw: t.w,
                        ih: image.height(),
                        iw: image.width(),
                    });
                }
                maps.push(self.score_map(image, ci, ti, t));
            }
        }
        Ok(maps)
    }

    fn score_map(&self, image: &Image, class: usize, template: usize, t: &ScaledTemplate) -> ScoreMap {
        let rows = image.height() - t.h + 1;
        let cols = image.width() - t.w + 1;
        let n = (t.h * t.w * 3) as f64;
        let floor = n * self.config.contrast_floor * self.config.contrast_floor;
        let k = self.config.sharpness;
        let px = image.as_slice();
        let iw = image.width();
        let per_row: Vec<Vec<[f64; 5]>> = (0..rows)
            .into_par_iter()
            .map(|wy| {
                (0..cols)
                    .map(|wx| {
                        let (mut dot, mut s1, mut s2) = (0.0, 0.0, 0.0);
                        for ty in 0..t.h {
                            let img_row = &px[((wy + ty) * iw + wx) * 3..((wy + ty) * iw + wx + t.w) * 3];
                            let tpl_row = &t.values[ty * t.w * 3..(ty + 1) * t.w * 3];
                            for (x, tv) in img_row.iter().zip(tpl_row) {
                                dot += tv * x;
                                s1 += x;
                                s2 += x * x;
                            }
                        }
                        let mean = s1 / n;
                        let centered = (s2 - s1 * mean).max(0.0);
                        if centered <= VARIANCE_GUARD {
                            return [0.0, 0.0, dot, 0.0, mean];
                        }
                        let energy = centered + floor;
                        let ncc = dot / energy.sqrt();
                        let score = (0.5 * (ncc + 1.0)).max(0.0).powf(k);
                        [score, ncc, dot, energy, mean]
                    })
                    .collect()
            })
            .collect();
        let cells = rows * cols;
        let mut m = ScoreMap {
            class,
            template,
            rows,
            cols,
            scores: Vec::with_capacity(cells),
            ncc: Vec::with_capacity(cells),
            dot: Vec::with_capacity(cells),
            energy: Vec::with_capacity(cells),
            mean: Vec::with_capacity(cells),
        };
        for v in per_row.into_iter().flatten() {
            m.scores.push(v[0]);
            m.ncc.push(v[1]);
            m.dot.push(v[2]);
            m.energy.push(v[3]);
            m.mean.push(v[4]);
        }
        m
    }

    /// Maps a loss gradient over window scores back onto the image.
    fn backward(&self, image: &Image, maps: &[ScoreMap], d_scores: &[Vec<f64>]) -> Image {
        let k = self.config.sharpness;
        // Per-window coefficients of t / sqrt(E) and (x - mean) * dot / E^1.5.
        let coeffs: Vec<Vec<(f64, f64)>> = maps
            .iter()
            .zip(d_scores)
            .map(|(m, ds)| {
                (0..m.scores.len())
                    .map(|i| {
                        if m.energy[i] == 0.0 || ds[i] == 0.0 {
                            return (0.0, 0.0);
                        }
                        let base = (0.5 * (m.ncc[i] + 1.0)).max(0.0);
                        let d_ncc = ds[i] * 0.5 * k * base.powf(k - 1.0);
                        let e = m.energy[i];
                        (d_ncc / e.sqrt(), d_ncc * m.dot[i] / (e * e.sqrt()))
                    })
                    .collect()
            })
            .collect();
        let (h, w) = (image.height(), image.width());
        let px = image.as_slice();
        let rows: Vec<Vec<f64>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut out = vec![0.0; w * 3];
                for (m, cf) in maps.iter().zip(&coeffs) {
                    let t = &self.classes[m.class].scaled[m.template];
                    let wy_lo = (y + 1).saturating_sub(t.h);
                    let wy_hi = y.min(m.rows - 1);
                    if wy_lo > wy_hi {
                        continue;
                    }
                    for wy in wy_lo..=wy_hi {
                        let ty = y - wy;
                        let tpl_row = &t.values[ty * t.w * 3..(ty + 1) * t.w * 3];
                        for wx in 0..m.cols {
                            let i = wy * m.cols + wx;
                            let (g1, g2) = cf[i];
                            if g1 == 0.0 && g2 == 0.0 {
                                continue;
                            }
                            let mean = m.mean[i];
                            let base = (y * w + wx) * 3;
                            for (j, tv) in tpl_row.iter().enumerate() {
                                out[wx * 3 + j] += g1 * tv - g2 * (px[base + j] - mean);
                            }
                        }
                    }
                }
                out
            })
            .collect();
        Image::from_vec(h, w, rows.into_iter().flatten().collect()).expect("sized by construction")
    }
}

impl Detector for SurrogateDetector {
    fn detect(&self, image: &Image, threshold: f64) -> Result<Vec<Detection>> {
        let maps = self.score_maps(image)?;
        let mut candidates: Vec<(usize, usize, Detection)> = Vec::new();
        for (mi, m) in maps.iter().enumerate() {
            let t = &self.classes[m.class].scaled[m.template];
            for i in 0..m.scores.len() {
                let s = m.scores[i];
                if s < threshold {
                    continue;
                }
                // Strictly above earlier neighbours, at least later ones, so
                // a plateau yields its first cell.
                let is_peak = neighbourhood(m.rows, m.cols, i)
                    .into_iter()
                    .all(|j| j == i || if j < i { s > m.scores[j] } else { s >= m.scores[j] });
                if !is_peak {
                    continue;
                }
                let (y, x) = ((i / m.cols) as f64, (i % m.cols) as f64);
                candidates.push((
                    mi,
                    i,
                    Detection {
                        bbox: [x, y, x + t.w as f64, y + t.h as f64],
                        score: s,
                        label: self.classes[m.class].label.clone(),
                    },
                ));
            }
        }
        candidates.sort_by(|a, b| {
            b.2.score
                .total_cmp(&a.2.score)
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        let mut kept: Vec<Detection> = Vec::new();
        for (_, _, d) in candidates {
            if kept
                .iter()
                .all(|k| k.label != d.label || iou(&k.bbox, &d.bbox) <= self.config.nms_iou)
            {
                kept.push(d);
            }
        }
        Ok(kept)
    }

    fn confidence(&self, image: &Image, target: &str) -> Result<f64> {
        let class = self.class_index(target)?;
        let maps = self.score_maps(image)?;
        Ok(maps
            .iter()
            .filter(|m| m.class == class)
            .flat_map(|m| m.scores.iter().copied())
            .fold(0.0, f64::max))
    }

    fn attack_loss(&self, image: &Image, target: &str) -> Result<(AttackLossBreakdown, Image)> {
        let class = self.class_index(target)?;
        let maps = self.score_maps(image)?;
        let lam = self.config.weights;
        let mut d_scores: Vec<Vec<f64>> = maps.iter().map(|m| vec![0.0; m.scores.len()]).collect();
        let target_ids: Vec<usize> = (0..maps.len()).filter(|&i| maps[i].class == class).collect();

        // L1: smooth maximum over all target windows.
        let target_scores: Vec<f64> = target_ids
            .iter()
            .flat_map(|&i| maps[i].scores.iter().copied())
            .collect();
        let (smax, d_smax) = smooth_max(&target_scores, self.config.temperature);
        let (l1, g1) = neg_log(smax);
        let mut off = 0;
        for &mi in &target_ids {
            for (j, d) in d_scores[mi].iter_mut().enumerate() {
                *d += lam[0] * g1 * d_smax[off + j];
            }
            off += maps[mi].scores.len();
        }

        // L2: 3x3 neighbourhood of the strongest target window.
        let (best_map, best_idx) = argmax_in_maps(target_ids.iter().map(|&i| maps[i].scores.as_slice()));
        let bm = target_ids[best_map];
        let nb = neighbourhood(maps[bm].rows, maps[bm].cols, best_idx);
        let local = nb.iter().map(|&i| maps[bm].scores[i]).sum::<f64>() / nb.len() as f64;
        let (l2, g2) = neg_log(local);
        for &i in &nb {
            d_scores[bm][i] += lam[1] * g2 / nb.len() as f64;
        }

        // L3: mean over every class and window.
        let total: usize = maps.iter().map(|m| m.scores.len()).sum();
        let mean = maps.iter().flat_map(|m| m.scores.iter()).sum::<f64>() / total as f64;
        let (l3, g3) = neg_log(mean);
        for d in d_scores.iter_mut().flatten() {
            *d += lam[2] * g3 / total as f64;
        }

        // L4: top-k mean over every class and window.
        let all: Vec<(usize, usize)> = maps
            .iter()
            .enumerate()
            .flat_map(|(mi, m)| (0..m.scores.len()).map(move |i| (mi, i)))
            .collect();
        let flat: Vec<f64> = all.iter().map(|&(mi, i)| maps[mi].scores[i]).collect();
        let top = top_k_indices(&flat, self.config.top_k);
        let top_mean = top.iter().map(|&i| flat[i]).sum::<f64>() / top.len() as f64;
        let (l4, g4) = neg_log(top_mean);
        for &t in &top {
            let (mi, i) = all[t];
            d_scores[mi][i] += lam[3] * g4 / top.len() as f64;
        }

        let grad = self.backward(image, &maps, &d_scores);
        Ok((
            AttackLossBreakdown {
                components: [l1, l2, l3, l4],
                weights: lam,
            },
            grad,
        ))
    }
}

/// Detections of every bank class in `image` with the default detector
/// settings.
pub fn surrogate_detect(image: &Image, bank: &TemplateBank, threshold: f64) -> Result<Vec<Detection>> {
    SurrogateDetector::new(bank, SurrogateConfig::default())?.detect(image, threshold)
}
