//! Renders the demo target from its nearest ring and crops a class template.
//!
//! Usage: `make_template <scene.toml> <out.png> [radius] [margin_rows]`

use std::env;
use std::path::PathBuf;

use viewpatch::camera::DEFAULT_VFOV;
use viewpatch::render::render;
use viewpatch::sampler::generate_ring;
use viewpatch::scene::Scene;
use viewpatch::camera::Camera;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = env::args().collect();
    if args.len() < 3 {
        return Err("usage: make_template <scene.toml> <out.png> [radius] [margin_rows]".into());
    }
    let scene = Scene::load(&PathBuf::from(&args[1]))?;
    let radius: f64 = args.get(3).map_or(Ok(1.0), |s| s.parse())?;
    let margin: usize = args.get(4).map_or(Ok(2), |s| s.parse())?;
    let (pos, orient) = generate_ring(scene.object_center, radius, 1)?[0];
    let cam = Camera::new(pos, orient, (64, 64), DEFAULT_VFOV)?;
    let out = render(&scene.without_patches(), None, &cam);

    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for (i, hit) in out.hit_map.iter().enumerate() {
        if hit.is_some_and(|q| scene.quads()[q].is_target) {
            let (r, c) = (i / 64, i % 64);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
    }
    if r0 == usize::MAX {
        return Err("target not visible".into());
    }
    // Central 60% of the width, full height plus a margin of context.
    let w = c1 - c0 + 1;
    let inset = w / 5;
    let (top, bottom) = (r0.saturating_sub(margin), (r1 + margin).min(63));
    let crop = out.image.crop(top, c0 + inset, bottom - top + 1, w - 2 * inset)?;
    crop.save_png(&PathBuf::from(&args[2]))?;
    println!(
        "target rows {r0}..={r1}, cols {c0}..={c1}; template {}x{}",
        crop.height(),
        crop.width()
    );
    Ok(())
}
