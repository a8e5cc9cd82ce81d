//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criteria 6, 7, 9 and 10 share two full runs of the demo
//! pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use viewpatch::camera::{Camera, Orientation, DEFAULT_VFOV};
use viewpatch::detector::{AttackLossBreakdown, Detection, Detector, SurrogateConfig, SurrogateDetector, TemplateBank};
use viewpatch::eval::{compute_metrics, EpisodeResult};
use viewpatch::geometry::Vec3;
use viewpatch::optimize::{optimize_stage_with, OptimizeConfig, Stage, ViewSet};
use viewpatch::patch::{Patch, PatchPlacement};
use viewpatch::pipeline::{files, EvaluationReport, Pipeline, Resume, MULTI_VIEW, MULTI_VIEW_OPACITY, NO_ATTACK, RANDOM_TEXTURE, SINGLE_VIEW};
use viewpatch::raster::Image;
use viewpatch::render::{render, render_backward};
use viewpatch::sampler::generate_ring;
use viewpatch::sampling::Footprint;
use viewpatch::scene::{Quad, Scene, TextureSpec};

/// Criteria 1 and 4: relative L-infinity error bound.
const GRAD_TOL: f64 = 1e-4;
/// Criterion 1: finite-difference step.
const RENDER_FD_STEP: f64 = 1e-4;
/// Criterion 1: minimum number of random instances.
const RENDER_INSTANCES: usize = 20;
/// Criterion 3.
const RING_TRIALS: usize = 1000;
const RING_TOL: f64 = 1e-9;
const FACING_TOL_FRAC: f64 = 1e-3;
/// Criterion 4.
const DETECTOR_FD_STEP: f64 = 1e-5;
const DETECTOR_INSTANCES: usize = 10;
/// Criterion 5.
const PGD_ITERATIONS: usize = 100;
/// Criterion 6.
const ABLATION_SLACK: f64 = 0.02;
const ABLATION_MARGIN: f64 = 0.20;
/// Criterion 7.
const SR_DROP: f64 = 0.15;
/// Criterion 10.
const SWEEP_MARGIN: f64 = 0.20;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: u32, name: &'static str, pass: bool, detail: String) -> Outcome {
    let o = Outcome { id, name, pass, detail };
    println!(
        "{} criterion {:>2}: {} ({})",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.detail
    );
    o
}

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn random_scene(rng: &mut ChaCha8Rng, placements: usize, light: f64) -> Scene {
    let half_w = rng.random_range(0.4..0.8);
    let half_h = rng.random_range(0.4..0.8);
    let yaw: f64 = rng.random_range(-0.6..0.6);
    let (s, c) = yaw.sin_cos();
    let right = Vec3::new(c, 0.0, -s);
    let up = Vec3::new(0.0, 1.0, 0.0);
    let center = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0);
    let corner = |a: f64, b: f64| center + right * (a * half_w) + up * (b * half_h);
    let texels: Vec<f64> = (0..4 * 4 * 3).map(|_| rng.random::<f64>()).collect();
    let target = Quad::new(
        "target",
        [corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0)],
        None,
        true,
        TextureSpec::Pixels {
            height: 4,
            width: 4,
            data: texels,
        },
        Path::new("."),
    )
    .unwrap();
    let back = Quad::new(
        "back",
        [
            Vec3::new(-5.0, -5.0, -1.5),
            Vec3::new(5.0, -5.0, -1.5),
            Vec3::new(5.0, 5.0, -1.5),
            Vec3::new(-5.0, 5.0, -1.5),
        ],
        None,
        false,
        TextureSpec::Solid {
            color: [rng.random(), rng.random(), rng.random()],
        },
        Path::new("."),
    )
    .unwrap();
    let mut scene = Scene::new(vec![target, back], center, light, "obj", None).unwrap();
    for _ in 0..placements {
        let u0 = rng.random_range(0.0..0.4);
        let v0 = rng.random_range(0.0..0.4);
        let rect = [u0, v0, rng.random_range(u0 + 0.3..1.0), rng.random_range(v0 + 0.3..1.0)];
        scene = scene.attach_patch(PatchPlacement::new("target", rect)).unwrap();
    }
    scene
}

fn random_camera(rng: &mut ChaCha8Rng, size: usize) -> Camera {
    let pos = Vec3::new(
        rng.random_range(-0.4..0.4),
        rng.random_range(-0.3..0.3),
        rng.random_range(1.5..2.5),
    );
    let mut o = Orientation::looking_along(-pos.x, -pos.z);
    o.pitch = rng.random_range(-0.1..0.1);
    Camera::new(pos, o, (size, size), 1.0).unwrap()
}

fn random_patch(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Patch {
    Patch::from_parts(
        h,
        w,
        (0..h * w * 3).map(|_| rng.random_range(0.1..0.9)).collect(),
        (0..h * w).map(|_| rng.random_range(0.1..0.9)).collect(),
    )
    .unwrap()
}

fn linf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn rel_linf(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    linf(&diff) / linf(numeric).max(1e-12)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < RENDER_INSTANCES {
        let (count, light) = (rng.random_range(1..=2), rng.random_range(20.0..60.0));
        let scene = random_scene(&mut rng, count, light);
        let cam = random_camera(&mut rng, 16);
        let patch = random_patch(&mut rng, 8, 8);
        let weights = Image::from_vec(16, 16, (0..16 * 16 * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let loss = |p: &Patch| -> f64 {
            let img = render(&scene, Some(p), &cam).image;
            img.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
        };
        let g = render_backward(&scene, &patch, &cam, &weights).unwrap();
        let mut fd_tex = vec![0.0; patch.texture().len()];
        let mut fd_op = vec![0.0; patch.opacity().len()];
        for k in 0..fd_tex.len() + fd_op.len() {
            let shifted = |d: f64| {
                patch.map_buffers(|t, o| {
                    if k < t.len() {
                        t[k] += d;
                    } else {
                        o[k - t.len()] += d;
                    }
                })
            };
            let fd = (loss(&shifted(RENDER_FD_STEP)) - loss(&shifted(-RENDER_FD_STEP))) / (2.0 * RENDER_FD_STEP);
            if k < fd_tex.len() {
                fd_tex[k] = fd;
            } else {
                fd_op[k - fd_tex.len()] = fd;
            }
        }
        if linf(&fd_tex) == 0.0 {
            // Patch not visible from this camera; draw another instance.
            continue;
        }
        let an: Vec<f64> = g.d_texture.iter().chain(&g.d_opacity).copied().collect();
        let num: Vec<f64> = fd_tex.iter().chain(&fd_op).copied().collect();
        worst = worst.max(rel_linf(&an, &num));
        done += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        1,
        "renderer patch gradient matches central differences",
        worst < GRAD_TOL && secs < 60.0,
        format!("{done} instances, max rel L-inf error {worst:.2e} < {GRAD_TOL:e}, {secs:.1}s < 60s"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut transparent_ok = true;
    let mut opaque_ok = true;
    let mut covered = 0usize;
    for _ in 0..20 {
        let light = rng.random_range(40.0..80.0);
        let scene = random_scene(&mut rng, 1, light);
        assert_eq!(scene.shade(), 1.0);
        let cam = random_camera(&mut rng, 24);
        let p = random_patch(&mut rng, 8, 8);

        let clean = render(&scene.without_patches(), None, &cam).image;
        let clear = render(&scene, Some(&p.with_constant_opacity(0.0).unwrap()), &cam).image;
        transparent_ok &= clean.as_slice() == clear.as_slice();

        let opaque = p.with_constant_opacity(1.0).unwrap();
        let img = render(&scene, Some(&opaque), &cam).image;
        let pl = &scene.placements()[0];
        for r in 0..24 {
            for c in 0..24 {
                let Some((q, hit)) = scene.trace(&cam.ray(r, c)) else { continue };
                if q != pl.quad_index {
                    continue;
                }
                let Some((u, v)) = pl.placement.local_uv(hit.u, hit.v) else { continue };
                let expect = Footprint::new(u, v, 8, 8).rgb(opaque.texture());
                covered += 1;
                opaque_ok &= img.pixel(r, c) == expect;
            }
        }
    }
    outcome(
        2,
        "compositing identities hold exactly",
        transparent_ok && opaque_ok && covered > 0,
        format!("opacity 0 equals clean render: {transparent_ok}; opacity 1 equals texture samples on {covered} pixels: {opaque_ok}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (w, h) = (64usize, 48usize);
    let mut ring_err: f64 = 0.0;
    let mut face_err: f64 = 0.0;
    let mut cameras = 0;
    for _ in 0..RING_TRIALS {
        let c = Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-3.0..3.0), rng.random_range(-10.0..10.0));
        let r = rng.random_range(0.05..20.0);
        let n = rng.random_range(1..=64);
        for (p, o) in generate_ring(c, r, n).unwrap() {
            let radial = ((p.x - c.x).powi(2) + (p.z - c.z).powi(2)).sqrt();
            ring_err = ring_err.max((radial - r).abs()).max((p.y - c.y).abs());
            let cam = Camera::new(p, o, (h, w), DEFAULT_VFOV).unwrap();
            let (u, v) = cam.project(c).unwrap();
            face_err = face_err.max((u - w as f64 / 2.0).abs().max((v - h as f64 / 2.0).abs()));
            cameras += 1;
        }
    }
    let face_tol = FACING_TOL_FRAC * w as f64;
    outcome(
        3,
        "ring sampling geometry and facing",
        ring_err <= RING_TOL && face_err <= face_tol,
        format!("{RING_TRIALS} rings / {cameras} cameras, ring error {ring_err:.1e} <= {RING_TOL:e}, center offset {face_err:.1e} px <= {face_tol} px"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for _ in 0..DETECTOR_INSTANCES {
        let tpl = Image::from_vec(6, 5, (0..90).map(|_| rng.random::<f64>()).collect()).unwrap();
        let bank = TemplateBank::new(vec![("obj".into(), tpl)]).unwrap();
        let det = SurrogateDetector::new(&bank, SurrogateConfig::default()).unwrap();
        let img = Image::from_vec(16, 16, (0..768).map(|_| rng.random::<f64>()).collect()).unwrap();
        let (_, grad) = det.attack_loss(&img, "obj").unwrap();
        let loss = |im: &Image| det.attack_loss(im, "obj").unwrap().0.combined().unwrap();
        let mut fd = vec![0.0; 768];
        for (k, slot) in fd.iter_mut().enumerate() {
            let mut a = img.clone();
            a.as_mut_slice()[k] += DETECTOR_FD_STEP;
            let mut b = img.clone();
            b.as_mut_slice()[k] -= DETECTOR_FD_STEP;
            *slot = (loss(&a) - loss(&b)) / (2.0 * DETECTOR_FD_STEP);
        }
        worst = worst.max(rel_linf(grad.as_slice(), &fd));
    }
    outcome(
        4,
        "surrogate attack-loss image gradient matches central differences",
        worst < GRAD_TOL,
        format!("{DETECTOR_INSTANCES} random 16x16 images, max rel L-inf error {worst:.2e} < {GRAD_TOL:e}"),
    )
}

/// Detector whose loss never changes with the image.
struct Flat;

impl Detector for Flat {
    fn detect(&self, _: &Image, _: f64) -> viewpatch::Result<Vec<Detection>> {
        Ok(Vec::new())
    }

    fn attack_loss(&self, image: &Image, _: &str) -> viewpatch::Result<(AttackLossBreakdown, Image)> {
        Ok((AttackLossBreakdown::new([0.5; 4]), Image::zeros(image.height(), image.width())))
    }
}

fn criterion_5() -> Outcome {
    let pipeline = Pipeline::load(&demo_dir().join("demo.toml")).unwrap();
    let scene = pipeline.scene();
    let views: Vec<_> = viewpatch::sampler::candidates(scene.object_center, &pipeline.config().sampler).unwrap();
    let train = [views[0], views[47], views[93]];
    let set = ViewSet {
        views: &train,
        resolution: pipeline.config().camera.resolution(),
        vertical_fov: pipeline.config().camera.vertical_fov(),
    };
    let p0 = viewpatch::patch::init_patch(16, 16, 5, 0.6).unwrap();
    let mut violations = Vec::new();
    let mut steps = 0;
    let mut moved = 0usize;
    let mut current = p0.clone();
    for stage in [Stage::Texture, Stage::Opacity] {
        let cfg = OptimizeConfig {
            iterations: PGD_ITERATIONS,
            ..OptimizeConfig::new(stage)
        };
        let a = cfg.step_size;
        let (out, _) = optimize_stage_with(scene, &current, set, pipeline.detector(), &cfg, |rec| {
            steps += 1;
            let (active_b, active_g, active_a, frozen_b, frozen_a) = match stage {
                Stage::Texture => (rec.before.texture(), &rec.gradient.d_texture, rec.after.texture(), rec.before.opacity(), rec.after.opacity()),
                _ => (rec.before.opacity(), &rec.gradient.d_opacity, rec.after.opacity(), rec.before.texture(), rec.after.texture()),
            };
            if frozen_b.iter().zip(frozen_a).any(|(x, y)| x.to_bits() != y.to_bits()) {
                violations.push(format!("{stage:?} iteration {}: frozen channel changed", rec.iteration));
            }
            for ((b, g), after) in active_b.iter().zip(active_g).zip(active_a) {
                let s = if *g > 0.0 { 1.0 } else if *g < 0.0 { -1.0 } else { 0.0 };
                let pre = b + a * s;
                let delta = (pre - b).abs();
                if !(delta == 0.0 || (delta - a).abs() <= 1e-15) {
                    violations.push(format!("{stage:?} iteration {}: pre-projection delta {delta}", rec.iteration));
                }
                if *after != pre.clamp(0.0, 1.0) {
                    violations.push(format!("{stage:?} iteration {}: projection mismatch", rec.iteration));
                }
                moved += (after != b) as usize;
            }
            if rec.after.texture().iter().chain(rec.after.opacity()).any(|v| !(0.0..=1.0).contains(v)) {
                violations.push(format!("{stage:?} iteration {}: entry outside [0, 1]", rec.iteration));
            }
        })
        .unwrap();
        current = out;
    }
    let zero_cfg = OptimizeConfig {
        iterations: PGD_ITERATIONS,
        ..OptimizeConfig::new(Stage::Joint)
    };
    let (fixed, _) = optimize_stage_with(scene, &current, set, &Flat, &zero_cfg, |_| {}).unwrap();
    let fixed_point = fixed == current;
    outcome(
        5,
        "PGD box, step, freeze and fixed-point contract",
        violations.is_empty() && fixed_point && steps == 2 * PGD_ITERATIONS && moved > 0,
        format!(
            "{steps} checked iterations, {moved} entry updates, {} violations{}, zero-gradient fixed point: {fixed_point}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    )
}

fn run_demo(out: &Path) -> (EvaluationReport, Patch) {
    let p = Pipeline::load(&demo_dir().join("demo.toml")).unwrap();
    p.sample(out).unwrap();
    p.optimize(out, Resume::Start).unwrap();
    p.evaluate(out, false).unwrap();
    let report = p.report(out).unwrap();
    (report, p.load_checkpoint(out, files::STAGE2).unwrap())
}

fn criterion_6(r: &EvaluationReport, secs: f64) -> Outcome {
    let asr = |c: &str| r.row(c).map(|x| x.asr).unwrap_or(f64::NAN);
    let (none, rnd, single, multi, full) = (asr(NO_ATTACK), asr(RANDOM_TEXTURE), asr(SINGLE_VIEW), asr(MULTI_VIEW), asr(MULTI_VIEW_OPACITY));
    let views = r.row(MULTI_VIEW).map_or(0, |x| x.n_views);
    let pass = rnd < single && single <= multi && multi <= full + ABLATION_SLACK && multi - rnd >= ABLATION_MARGIN && views == 100;
    outcome(
        6,
        "ablation ordering on the demo scene",
        pass,
        format!(
            "{views} held-out views; no attack {none:.3}, random {rnd:.3} < single-view {single:.3} <= multi-view {multi:.3} <= multi-view+opacity {full:.3} + {ABLATION_SLACK}; multi - random = {:.3} >= {ABLATION_MARGIN}; pipeline {secs:.0}s",
            multi - rnd
        ),
    )
}

fn criterion_7(r: &EvaluationReport) -> Outcome {
    let (Some(clean), Some(att)) = (r.nav(NO_ATTACK), r.nav(MULTI_VIEW_OPACITY)) else {
        return outcome(7, "navigation degradation", false, "navigation rows missing".into());
    };
    let (c, a) = (clean.metrics, att.metrics);
    outcome(
        7,
        "navigation degradation",
        a.sr <= c.sr - SR_DROP && a.spl < c.spl && a.dts >= c.dts && clean.episodes == 20,
        format!(
            "{} episodes; SR {:.3} -> {:.3} (drop >= {SR_DROP}), SPL {:.3} -> {:.3}, DTS {:.3} -> {:.3}",
            clean.episodes, c.sr, a.sr, c.spl, a.spl, c.dts, a.dts
        ),
    )
}

fn criterion_8() -> Outcome {
    let ep = |success, l, p, d| EpisodeResult {
        success,
        path_length: p,
        shortest_path: l,
        final_distance: d,
        steps_used: 0,
    };
    let cases: Vec<(Vec<EpisodeResult>, [f64; 3])> = vec![
        (vec![ep(true, 5.0, 10.0, 0.0), ep(false, 3.0, 4.0, 2.0)], [0.5, 0.25, 1.0]),
        (vec![ep(true, 4.0, 4.0, 0.0)], [1.0, 1.0, 0.0]),
        (vec![ep(false, 1.0, 3.0, 2.0), ep(false, 2.0, 5.0, 2.0), ep(false, 6.0, 9.0, 2.0)], [0.0, 0.0, 2.0]),
        (vec![ep(true, 2.0, 8.0, 0.0), ep(true, 3.0, 3.0, 0.0), ep(false, 1.0, 1.0, 1.5), ep(false, 5.0, 7.0, 0.5)], [0.5, 0.3125, 0.5]),
    ];
    let mut mismatches = Vec::new();
    for (i, (eps, [sr, spl, dts])) in cases.iter().enumerate() {
        let m = compute_metrics(eps).unwrap();
        if m.sr != *sr || m.spl != *spl || m.dts != *dts {
            mismatches.push(format!("case {i}: got ({}, {}, {})", m.sr, m.spl, m.dts));
        }
    }
    outcome(
        8,
        "SR/SPL/DTS match hand-computed values exactly",
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{} hand-evaluated sets, including SPL = 0.25 for {{success l=5 p=10; failure}}", cases.len())
        } else {
            mismatches.join("; ")
        },
    )
}

fn criterion_9(a: &Path, b: &Path) -> Outcome {
    let same = |name: &str| fs::read(a.join(name)).ok().is_some_and(|x| Some(x) == fs::read(b.join(name)).ok());
    let names = ["stage2.vpatch", "stage1.vpatch", files::EVALUATION, files::REPORT_TEXT, files::REPORT_JSON];
    let differing: Vec<&str> = names.iter().copied().filter(|n| !same(n)).collect();
    outcome(
        9,
        "two identical runs are bit-identical",
        differing.is_empty(),
        if differing.is_empty() {
            format!("compared {}", names.join(", "))
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn criterion_10(r: &EvaluationReport) -> Outcome {
    let at = |o: f64| r.opacity_sweep.iter().find(|s| (s.opacity - o).abs() < 1e-12).map(|s| s.optimized_asr);
    let (Some(lo), Some(hi)) = (at(0.2), at(0.6)) else {
        return outcome(10, "opacity sweep", false, "sweep rows missing".into());
    };
    let random: Vec<String> = r.opacity_sweep.iter().map(|s| format!("{}:{:.2}", s.opacity, s.random_asr)).collect();
    outcome(
        10,
        "opacity sweep with the optimized texture",
        hi - lo >= SWEEP_MARGIN,
        format!(
            "ASR at 0.6 = {hi:.3}, at 0.2 = {lo:.3}, difference {:.3} >= {SWEEP_MARGIN}; random texture (no ordering asserted) {}",
            hi - lo,
            random.join(" ")
        ),
    )
}

fn main() {
    let mut results = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5()];

    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    let start = Instant::now();
    let (report, _) = run_demo(&a);
    let secs = start.elapsed().as_secs_f64();
    let _ = run_demo(&b);
    results.push(criterion_6(&report, secs));
    results.push(criterion_7(&report));
    results.push(criterion_8());
    results.push(criterion_9(&a, &b));
    results.push(criterion_10(&report));

    results.sort_by_key(|o| o.id);
    let failed: Vec<String> = results.iter().filter(|o| !o.pass).map(|o| format!("{} ({})", o.id, o.name)).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
