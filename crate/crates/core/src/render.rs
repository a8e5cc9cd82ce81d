//! Ray-cast renderer over textured quads with patch alpha compositing, and
//! its exact adjoint with respect to the patch texture and opacity.
//!
//! One ray per pixel center. The nearest quad wins; its texture is sampled
//! bilinearly, every patch placement on that quad covering the hit UV is
//! composited in placement order (`c = a*P + (1-a)*c`), and the result is
//! multiplied by the scene shade. Rays that miss render constant gray.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::patch::Patch;
use crate::raster::Image;
use crate::sampling::Footprint;
use crate::scene::Scene;

pub const BACKGROUND: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub image: Image,
    /// Quad index hit by each pixel's ray, row-major.
    pub hit_map: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGradient {
    pub height: usize,
    pub width: usize,
    pub d_texture: Vec<f64>,
    pub d_opacity: Vec<f64>,
}

impl PatchGradient {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            d_texture: vec![0.0; height * width * 3],
            d_opacity: vec![0.0; height * width],
        }
    }

    pub fn zeros_like(p: &Patch) -> Self {
        Self::zeros(p.height(), p.width())
    }

    pub fn add_assign(&mut self, o: &PatchGradient) -> Result<()> {
        if (self.height, self.width) != (o.height, o.width) {
            return Err(Error::Shape(format!(
                "gradient {}x{} vs {}x{}",
                self.height, self.width, o.height, o.width
            )));
        }
        for (a, b) in self.d_texture.iter_mut().zip(&o.d_texture) {
            *a += b;
        }
        for (a, b) in self.d_opacity.iter_mut().zip(&o.d_opacity) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.d_texture.iter_mut().chain(self.d_opacity.iter_mut()).for_each(|v| *v *= s);
    }
}

struct Layer {
    fp: Footprint,
    alpha: f64,
    color: [f64; 3],
    below: [f64; 3],
}

struct Shaded {
    quad: usize,
    base: [f64; 3],
    layers: Vec<Layer>,
}

fn shade_pixel(scene: &Scene, patch: Option<&Patch>, cam: &Camera, row: usize, col: usize) -> Option<Shaded> {
    let (quad, hit) = scene.trace(&cam.ray(row, col))?;
    let base = scene.quads()[quad].sample(hit.u, hit.v);
    let mut layers = Vec::new();
    if let Some(p) = patch {
        let mut c = base;
        for pl in scene.placements().iter().filter(|pl| pl.quad_index == quad) {
            let Some((pu, pv)) = pl.placement.local_uv(hit.u, hit.v) else {
                continue;
            };
            let fp = Footprint::new(pu, pv, p.height(), p.width());
            let alpha = fp.scalar(p.opacity());
            let color = fp.rgb(p.texture());
            let below = c;
            c = [0, 1, 2].map(|i| alpha * color[i] + (1.0 - alpha) * below[i]);
            layers.push(Layer {
                fp,
                alpha,
                color,
                below,
            });
        }
    }
    Some(Shaded { quad, base, layers })
}

impl Shaded {
    fn composite(&self) -> [f64; 3] {
        match self.layers.last() {
            None => self.base,
            Some(l) => [0, 1, 2].map(|i| l.alpha * l.color[i] + (1.0 - l.alpha) * l.below[i]),
        }
    }
}

/// Renders `scene` from `cam`, compositing `patch` at every placement when
/// given. Pure and deterministic.
pub fn render(scene: &Scene, patch: Option<&Patch>, cam: &Camera) -> RenderedImage {
    let (h, w) = cam.resolution;
    let shade = scene.shade();
    let rows: Vec<(Vec<f64>, Vec<Option<usize>>)> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut px = Vec::with_capacity(w * 3);
            let mut hits = Vec::with_capacity(w);
            for c in 0..w {
                match shade_pixel(scene, patch, cam, r, c) {
                    Some(s) => {
                        let out = s.composite().map(|v| shade * v);
                        px.extend_from_slice(&out);
                        hits.push(Some(s.quad));
                    }
                    None => {
                        px.extend_from_slice(&[BACKGROUND; 3]);
                        hits.push(None);
                    }
                }
            }
            (px, hits)
        })
        .collect();
    let mut data = Vec::with_capacity(h * w * 3);
    let mut hit_map = Vec::with_capacity(h * w);
    for (px, hits) in rows {
        data.extend(px);
        hit_map.extend(hits);
    }
    RenderedImage {
        image: Image::from_vec(h, w, data).expect("row buffers sized by construction"),
        hit_map,
    }
}

/// Adjoint of [`render`] with respect to the patch: given the gradient of a
/// loss with respect to every output pixel, returns the gradient with
/// respect to each patch texel. Pixels are accumulated in row-major order.
pub fn render_backward(
    scene: &Scene,
    patch: &Patch,
    cam: &Camera,
    d_image: &Image,
) -> Result<PatchGradient> {
    let (h, w) = cam.resolution;
    if (d_image.height(), d_image.width()) != (h, w) {
        return Err(Error::Shape(format!(
            "image gradient is {}x{}, camera renders {h}x{w}",
            d_image.height(),
            d_image.width()
        )));
    }
    let shade = scene.shade();
    let per_row: Vec<Vec<Shaded>> = (0..h)
        .into_par_iter()
        .map(|r| {
            (0..w)
                .filter_map(|c| {
                    // Skip pixels with no incoming gradient or no patch cover.
                    let g = d_image.pixel(r, c);
                    if g == [0.0; 3] {
                        return None;
                    }
                    shade_pixel(scene, Some(patch), cam, r, c)
                        .filter(|s| !s.layers.is_empty())
                        .map(|mut s| {
                            // Reuse `base` to carry the pixel gradient.
                            s.base = g;
                            s
                        })
                })
                .collect()
        })
        .collect();

    let mut grad = PatchGradient::zeros_like(patch);
    for s in per_row.iter().flatten() {
        let mut dc = s.base.map(|g| shade * g);
        for l in s.layers.iter().rev() {
            let d_alpha: f64 = (0..3).map(|i| dc[i] * (l.color[i] - l.below[i])).sum();
            for k in 0..4 {
                let (idx, wk) = (l.fp.index[k], l.fp.weight[k]);
                grad.d_opacity[idx] += wk * d_alpha;
                for ch in 0..3 {
                    grad.d_texture[idx * 3 + ch] += wk * l.alpha * dc[ch];
                }
            }
            dc = dc.map(|v| (1.0 - l.alpha) * v);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Orientation;
    use crate::geometry::Vec3;
    use crate::patch::{init_patch, PatchPlacement};
    use crate::scene::{Quad, TextureSpec};
    use std::f64::consts::PI;
    use std::path::Path;

    /// A 1 m square at z = 0 facing +z, textured with a 2x2 pixel image.
    fn square_scene() -> Scene {
        let q = Quad::new(
            "sq",
            [
                Vec3::new(-0.5, -0.5, 0.0),
                Vec3::new(0.5, -0.5, 0.0),
                Vec3::new(0.5, 0.5, 0.0),
                Vec3::new(-0.5, 0.5, 0.0),
            ],
            None,
            true,
            TextureSpec::Pixels {
                height: 2,
                width: 2,
                data: vec![
                    1.0, 0.0, 0.0, /**/ 0.0, 1.0, 0.0, //
                    0.0, 0.0, 1.0, /**/ 1.0, 1.0, 1.0,
                ],
            },
            Path::new("."),
        )
        .unwrap();
        Scene::new(vec![q], Vec3::default(), 40.0, "sq", None).unwrap()
    }

    /// Camera at z = 1 looking at the square's center; with a 90 degree
    /// field of view the 1 m square exactly spans the middle half of the
    /// image.
    fn front_camera(res: usize) -> Camera {
        Camera::new(
            Vec3::new(0.0, 0.0, 1.0),
            Orientation::new(0.0, 0.0, PI),
            (res, res),
            PI / 2.0,
        )
        .unwrap()
    }

    #[test]
    fn hand_evaluated_pixels() {
        let s = square_scene();
        let cam = front_camera(8);
        let img = render(&s, None, &cam).image;
        // Pixel (0,0) looks at (-0.875, 0.875) and misses.
        assert_eq!(img.pixel(0, 0), [BACKGROUND; 3]);
        // Pixel (2,2): ray hits (-0.375, 0.375) -> u = 0.125, v = 0.125,
        // which clamps onto the top-left texel (red).
        let p = img.pixel(2, 2);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12 && p[2].abs() < 1e-12, "{p:?}");
        // Pixel (3,3): hit (-0.125, 0.125) -> u = v = 0.375; normalized
        // texel coords x = y = 0.25, weights 0.5625/0.1875/0.1875/0.0625.
        let p = img.pixel(3, 3);
        let want = [0.5625 + 0.0625, 0.1875 + 0.0625, 0.1875 + 0.0625];
        for i in 0..3 {
            assert!((p[i] - want[i]).abs() < 1e-12, "{p:?} vs {want:?}");
        }
        // Pixel (4,5): hit (0.375, -0.125) -> u = 0.875, v = 0.625;
        // x clamps to column 1, y = 0.75 blends rows 0/1 as 0.25/0.75.
        let p = img.pixel(4, 5);
        let want = [0.75, 1.0, 0.75];
        for i in 0..3 {
            assert!((p[i] - want[i]).abs() < 1e-12, "{p:?} vs {want:?}");
        }
    }

    #[test]
    fn transparent_patch_is_identity() {
        let s = square_scene().attach_patch(PatchPlacement::new("sq", [0.0, 0.0, 1.0, 1.0])).unwrap();
        let cam = front_camera(16);
        let p = init_patch(4, 4, 7, 0.0).unwrap();
        assert_eq!(render(&s, Some(&p), &cam), render(&s, None, &cam));
    }

    #[test]
    fn opaque_patch_replaces_surface() {
        let s = square_scene().attach_patch(PatchPlacement::new("sq", [0.0, 0.0, 1.0, 1.0])).unwrap();
        let cam = front_camera(16);
        let p = Patch::uniform(4, 4, [1.0, 0.0, 0.0], 1.0).unwrap();
        let r = render(&s, Some(&p), &cam);
        for (i, hit) in r.hit_map.iter().enumerate() {
            let px = r.image.pixel(i / 16, i % 16);
            if hit.is_some() {
                assert_eq!(px, [1.0, 0.0, 0.0]);
            } else {
                assert_eq!(px, [BACKGROUND; 3]);
            }
        }
    }

    #[test]
    fn later_placement_composites_over_earlier() {
        let s = square_scene()
            .attach_patch(PatchPlacement::new("sq", [0.0, 0.0, 1.0, 1.0]))
            .unwrap()
            .attach_patch(PatchPlacement::new("sq", [0.0, 0.0, 0.5, 0.5]))
            .unwrap();
        let cam = front_camera(8);
        let p = Patch::uniform(2, 2, [0.0, 0.0, 0.0], 0.5).unwrap();
        let img = render(&s, Some(&p), &cam).image;
        // Pixel (3,3) at u = v = 0.375 lies in both rectangles: base
        // (0.625, 0.25, 0.25) halves twice.
        let px = img.pixel(3, 3);
        let want = [0.625 / 4.0, 0.25 / 4.0, 0.25 / 4.0];
        for i in 0..3 {
            assert!((px[i] - want[i]).abs() < 1e-12, "{px:?}");
        }
        // Pixel (4,5) at u = 0.875 is only under the first placement.
        let px = img.pixel(4, 5);
        let want = [0.375, 0.5, 0.375];
        for i in 0..3 {
            assert!((px[i] - want[i]).abs() < 1e-12, "{px:?}");
        }
    }

    #[test]
    fn backward_of_zero_is_zero() {
        let s = square_scene().attach_patch(PatchPlacement::new("sq", [0.0, 0.0, 1.0, 1.0])).unwrap();
        let cam = front_camera(16);
        let p = init_patch(4, 4, 1, 0.6).unwrap();
        let g = render_backward(&s, &p, &cam, &Image::zeros(16, 16)).unwrap();
        assert!(g.d_texture.iter().chain(&g.d_opacity).all(|&v| v == 0.0));
        assert!(matches!(
            render_backward(&s, &p, &cam, &Image::zeros(8, 16)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn invisible_texture_has_no_gradient() {
        let s = square_scene().attach_patch(PatchPlacement::new("sq", [0.0, 0.0, 1.0, 1.0])).unwrap();
        let cam = front_camera(16);
        let p = init_patch(4, 4, 1, 0.0).unwrap();
        let g = render_backward(&s, &p, &cam, &Image::filled(16, 16, [1.0, -0.5, 0.25])).unwrap();
        assert!(g.d_texture.iter().all(|&v| v == 0.0));
        assert!(g.d_opacity.iter().any(|&v| v != 0.0));
    }
}
