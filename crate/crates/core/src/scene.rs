//! Quad-soup scenes: textured planar quads, a designated target object,
//! scalar lighting, patch placements and an optional occupancy grid used by
//! the navigation evaluation.
//!
//! Scene files are TOML. Units are meters. A quad lists its four vertices in
//! counter-clockwise order (seen from the side the texture faces); per-vertex
//! UVs default to `[[0,1],[1,1],[1,0],[0,0]]`, which shows a texture image
//! upright when the first vertex is the bottom-left corner.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};
use crate::grid::{GridSpec, OccupancyGrid};
use crate::patch::PatchPlacement;
use crate::raster::Image;
use crate::sampling::Footprint;

/// Light intensity that maps to a unit shading multiplier.
pub const REFERENCE_LIGHT: f64 = 40.0;

const COPLANAR_TOL: f64 = 1e-6;
const MIN_AREA: f64 = 1e-12;
const CENTER_SLACK: f64 = 0.5;
const DEFAULT_UV: [[f64; 2]; 4] = [[0.0, 1.0], [1.0, 1.0], [1.0, 0.0], [0.0, 0.0]];

/// How a quad's texture is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextureSpec {
    Solid {
        color: [f64; 3],
    },
    /// Alternating squares; `cells = [cols, rows]`.
    Checker {
        colors: [[f64; 3]; 2],
        cells: [usize; 2],
        #[serde(default = "default_texels_per_cell")]
        texels_per_cell: usize,
    },
    /// Horizontal bands stacked from the top (`v = 0`) downwards, with
    /// relative heights `weights` (equal when omitted).
    Bands {
        colors: Vec<[f64; 3]>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        #[serde(default = "default_profile_height")]
        height: usize,
    },
    /// Vertical profile linearly interpolated between `(v, color)` stops.
    Gradient {
        stops: Vec<(f64, [f64; 3])>,
        #[serde(default = "default_profile_height")]
        height: usize,
    },
    /// An image file, relative to the scene file.
    Image {
        path: PathBuf,
    },
    /// Inline row-major RGB values.
    Pixels {
        height: usize,
        width: usize,
        data: Vec<f64>,
    },
}

fn default_texels_per_cell() -> usize {
    8
}

fn default_profile_height() -> usize {
    64
}

impl TextureSpec {
    fn materialize(&self, base_dir: &Path) -> Result<Image> {
        let bad = |m: String| Error::InvalidScene(m);
        let img = match self {
            TextureSpec::Solid { color } => Image::filled(1, 1, *color),
            TextureSpec::Checker {
                colors,
                cells,
                texels_per_cell,
            } => {
                let (cols, rows, k) = (cells[0], cells[1], *texels_per_cell);
                if cols == 0 || rows == 0 || k == 0 {
                    return Err(bad("checker needs positive cells and texels_per_cell".into()));
                }
                let mut img = Image::zeros(rows * k, cols * k);
                for r in 0..rows * k {
                    for c in 0..cols * k {
                        img.set_pixel(r, c, colors[(r / k + c / k) % 2]);
                    }
                }
                img
            }
            TextureSpec::Bands {
                colors,
                weights,
                height,
            } => {
                if colors.is_empty() || *height == 0 {
                    return Err(bad("bands need at least one color and a positive height".into()));
                }
                let w = match weights {
                    Some(w) if w.len() != colors.len() || w.iter().any(|x| *x <= 0.0) => {
                        return Err(bad("band weights must be positive, one per color".into()))
                    }
                    Some(w) => w.clone(),
                    None => vec![1.0; colors.len()],
                };
                let total: f64 = w.iter().sum();
                let mut img = Image::zeros(*height, 1);
                for r in 0..*height {
                    let v = (r as f64 + 0.5) / *height as f64 * total;
                    let mut acc = 0.0;
                    let mut idx = colors.len() - 1;
                    for (i, wi) in w.iter().enumerate() {
                        acc += wi;
                        if v < acc {
                            idx = i;
                            break;
                        }
                    }
                    img.set_pixel(r, 0, colors[idx]);
                }
                img
            }
            TextureSpec::Gradient { stops, height } => {
                if stops.is_empty() || *height == 0 {
                    return Err(bad("gradient needs at least one stop and a positive height".into()));
                }
                if stops.windows(2).any(|s| s[1].0 < s[0].0) {
                    return Err(bad("gradient stops must be sorted by v".into()));
                }
                let mut img = Image::zeros(*height, 1);
                for r in 0..*height {
                    let v = (r as f64 + 0.5) / *height as f64;
                    img.set_pixel(r, 0, gradient_at(stops, v));
                }
                img
            }
            TextureSpec::Image { path } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                Image::load(&full)?
            }
            TextureSpec::Pixels {
                height,
                width,
                data,
            } => Image::from_vec(*height, *width, data.clone())
                .map_err(|e| bad(format!("inline pixels: {e}")))?,
        };
        if img.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(bad("texture values must lie in [0, 1]".into()));
        }
        Ok(img)
    }

    fn absolutized(&self, base_dir: &Path) -> TextureSpec {
        match self {
            TextureSpec::Image { path } if !path.is_absolute() => TextureSpec::Image {
                path: base_dir.join(path),
            },
            other => other.clone(),
        }
    }
}

fn gradient_at(stops: &[(f64, [f64; 3])], v: f64) -> [f64; 3] {
    if v <= stops[0].0 {
        return stops[0].1;
    }
    for w in stops.windows(2) {
        let ((v0, c0), (v1, c1)) = (w[0], w[1]);
        if v <= v1 {
            let t = if v1 > v0 { (v - v0) / (v1 - v0) } else { 1.0 };
            return [0, 1, 2].map(|i| c0[i] + t * (c1[i] - c0[i]));
        }
    }
    stops[stops.len() - 1].1
}

/// A textured planar quad.
#[derive(Debug, Clone)]
pub struct Quad {
    pub id: String,
    pub vertices: [Vec3; 4],
    pub uv: [[f64; 2]; 4],
    pub is_target: bool,
    pub texture: Image,
    pub texture_spec: TextureSpec,
    normal: Vec3,
    axis_u: Vec3,
    axis_v: Vec3,
}

/// Where a ray meets a quad: distance along the ray and the interpolated UV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadHit {
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

impl Quad {
    pub fn new(
        id: impl Into<String>,
        vertices: [Vec3; 4],
        uv: Option<[[f64; 2]; 4]>,
        is_target: bool,
        texture_spec: TextureSpec,
        base_dir: &Path,
    ) -> Result<Self> {
        let id = id.into();
        let [a, b, c, d] = vertices;
        let diag = (c - a).cross(d - b);
        let area = 0.5 * diag.norm();
        if !(area > MIN_AREA) {
            return Err(Error::DegenerateQuad(id, format!("area {area:e}")));
        }
        let normal = diag.normalized();
        let centroid = (a + b + c + d) * 0.25;
        for v in vertices {
            let off = (v - centroid).dot(normal).abs();
            if off > COPLANAR_TOL {
                return Err(Error::DegenerateQuad(
                    id,
                    format!("vertices are not coplanar (offset {off:e} m)"),
                ));
            }
        }
        let edge = b - a;
        if !(edge.norm() > 1e-9) {
            return Err(Error::DegenerateQuad(id, "first edge has zero length".into()));
        }
        let axis_u = edge.normalized();
        let axis_v = normal.cross(axis_u);
        let texture = texture_spec.materialize(base_dir)?;
        Ok(Self {
            id,
            vertices,
            uv: uv.unwrap_or(DEFAULT_UV),
            is_target,
            texture,
            texture_spec,
            normal,
            axis_u,
            axis_v,
        })
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    fn to_plane(&self, p: Vec3) -> [f64; 2] {
        [p.dot(self.axis_u), p.dot(self.axis_v)]
    }

    /// Nearest intersection with `t > 1e-9`, if the ray crosses the quad.
    pub fn intersect(&self, ray: &Ray) -> Option<QuadHit> {
        let denom = ray.dir.dot(self.normal);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = (self.vertices[0] - ray.origin).dot(self.normal) / denom;
        if !(t > 1e-9) {
            return None;
        }
        let p = ray.at(t);
        let [a, b, c, d] = self.vertices;
        let (s, r) = inverse_bilinear(
            self.to_plane(p - a),
            self.to_plane(b - a),
            self.to_plane(d - a),
            self.to_plane(a - b + c - d),
        )?;
        let w = [(1.0 - s) * (1.0 - r), s * (1.0 - r), s * r, (1.0 - s) * r];
        let u = (0..4).map(|k| w[k] * self.uv[k][0]).sum::<f64>();
        let v = (0..4).map(|k| w[k] * self.uv[k][1]).sum::<f64>();
        Some(QuadHit {
            t,
            u: u.clamp(0.0, 1.0),
            v: v.clamp(0.0, 1.0),
        })
    }

    /// Unshaded bilinear texture sample.
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        Footprint::new(u, v, self.texture.height(), self.texture.width()).rgb(self.texture.as_slice())
    }
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Solves `h = s*e + r*f + s*r*g` for `(s, r)` in the unit square.
fn inverse_bilinear(h: [f64; 2], e: [f64; 2], f: [f64; 2], g: [f64; 2]) -> Option<(f64, f64)> {
    const EPS: f64 = 1e-9;
    let k2 = cross2(g, f);
    let k1 = cross2(e, f) + cross2(h, g);
    let k0 = cross2(h, e);
    let scale = cross2(e, f).abs().max(1e-300);
    let solve_s = |r: f64| {
        let dir = [e[0] + g[0] * r, e[1] + g[1] * r];
        let rem = [h[0] - f[0] * r, h[1] - f[1] * r];
        let n2 = dir[0] * dir[0] + dir[1] * dir[1];
        (rem[0] * dir[0] + rem[1] * dir[1]) / n2
    };
    let inside = |s: f64, r: f64| (-EPS..=1.0 + EPS).contains(&s) && (-EPS..=1.0 + EPS).contains(&r);
    let candidates: Vec<f64> = if k2.abs() < 1e-12 * scale {
        if k1.abs() < 1e-300 {
            return None;
        }
        vec![-k0 / k1]
    } else {
        let disc = k1 * k1 - 4.0 * k0 * k2;
        if disc < 0.0 {
            return None;
        }
        let w = disc.sqrt();
        vec![(-k1 - w) / (2.0 * k2), (-k1 + w) / (2.0 * k2)]
    };
    candidates.into_iter().find_map(|r| {
        let s = solve_s(r);
        inside(s, r).then(|| (s.clamp(0.0, 1.0), r.clamp(0.0, 1.0)))
    })
}

/// A placement resolved against the scene's quad list.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPlacement {
    pub quad_index: usize,
    pub placement: PatchPlacement,
}

#[derive(Debug, Clone)]
pub struct Scene {
    quads: Arc<Vec<Quad>>,
    pub object_center: Vec3,
    pub light_intensity: f64,
    pub target_label: String,
    placements: Vec<ResolvedPlacement>,
    pub occupancy: Option<OccupancyGrid>,
}

impl Scene {
    pub fn new(
        quads: Vec<Quad>,
        object_center: Vec3,
        light_intensity: f64,
        target_label: impl Into<String>,
        occupancy: Option<OccupancyGrid>,
    ) -> Result<Self> {
        let mut ids = HashSet::new();
        for q in &quads {
            if !ids.insert(q.id.as_str()) {
                return Err(Error::InvalidScene(format!("duplicate quad id `{}`", q.id)));
            }
        }
        if !(light_intensity > 0.0) {
            return Err(Error::InvalidScene(format!(
                "light_intensity must be positive, got {light_intensity}"
            )));
        }
        let targets: Vec<&Quad> = quads.iter().filter(|q| q.is_target).collect();
        if targets.is_empty() {
            return Err(Error::MissingTarget);
        }
        let (lo, hi) = targets.iter().flat_map(|q| q.vertices).fold(
            (Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY), Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY)),
            |(lo, hi), v| (lo.min(v), hi.max(v)),
        );
        let slack = Vec3::new(CENTER_SLACK, CENTER_SLACK, CENTER_SLACK);
        let (lo, hi) = (lo - slack, hi + slack);
        let c = object_center;
        if c.x < lo.x || c.y < lo.y || c.z < lo.z || c.x > hi.x || c.y > hi.y || c.z > hi.z {
            return Err(Error::InvalidScene(format!(
                "object_center {:?} is more than {CENTER_SLACK} m outside the target quads' bounds",
                <[f64; 3]>::from(c)
            )));
        }
        Ok(Self {
            quads: Arc::new(quads),
            object_center,
            light_intensity,
            target_label: target_label.into(),
            placements: Vec::new(),
            occupancy,
        })
    }

    pub fn quads(&self) -> &[Quad] {
        &self.quads
    }

    pub fn placements(&self) -> &[ResolvedPlacement] {
        &self.placements
    }

    pub fn quad_index(&self, id: &str) -> Option<usize> {
        self.quads.iter().position(|q| q.id == id)
    }

    /// Shading multiplier `min(1, L / 40)`.
    pub fn shade(&self) -> f64 {
        (self.light_intensity / REFERENCE_LIGHT).min(1.0)
    }

    /// Returns a copy of the scene with `pl` recorded after any existing
    /// placements. Geometry is shared, not modified.
    pub fn attach_patch(&self, pl: PatchPlacement) -> Result<Scene> {
        pl.validate_rect()?;
        let quad_index = self
            .quad_index(&pl.host_quad_id)
            .ok_or_else(|| Error::UnknownQuad(pl.host_quad_id.clone()))?;
        let mut out = self.clone();
        out.placements.push(ResolvedPlacement {
            quad_index,
            placement: pl,
        });
        Ok(out)
    }

    /// Scene without any patch placements.
    pub fn without_patches(&self) -> Scene {
        Scene {
            placements: Vec::new(),
            ..self.clone()
        }
    }

    /// SHA-256 over all vertex coordinates, in quad order.
    pub fn geometry_hash(&self) -> String {
        let mut h = Sha256::new();
        for q in self.quads.iter() {
            h.update(q.id.as_bytes());
            for v in q.vertices {
                for x in [v.x, v.y, v.z] {
                    h.update(x.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// Nearest hit along `ray`; ties in distance go to the lower quad index.
    pub fn trace(&self, ray: &Ray) -> Option<(usize, QuadHit)> {
        let mut best: Option<(usize, QuadHit)> = None;
        for (i, q) in self.quads.iter().enumerate() {
            if let Some(hit) = q.intersect(ray) {
                if best.map_or(true, |(_, b)| hit.t < b.t) {
                    best = Some((i, hit));
                }
            }
        }
        best
    }

    pub fn load(path: &Path) -> Result<Scene> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Scene> {
        let file: SceneFile =
            toml::from_str(text).map_err(|e| Error::Parse(format!("scene file: {e}")))?;
        file.build(base_dir)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(&self.to_file()).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    fn to_file(&self) -> SceneFile {
        SceneFile {
            target_label: self.target_label.clone(),
            light_intensity: self.light_intensity,
            object_center: self.object_center.into(),
            quads: self
                .quads
                .iter()
                .map(|q| QuadFile {
                    id: q.id.clone(),
                    vertices: q.vertices.map(Into::into),
                    uv: Some(q.uv),
                    is_target: q.is_target,
                    texture: q.texture_spec.clone(),
                })
                .collect(),
            placements: self.placements.iter().map(|p| p.placement.clone()).collect(),
            occupancy: self.occupancy.as_ref().map(OccupancyGrid::spec),
        }
    }
}

/// Free-function form of [`OccupancyGrid::shortest_path_length`].
pub fn shortest_path_length(
    grid: &OccupancyGrid,
    start: [f64; 2],
    goal: [f64; 2],
) -> Result<f64> {
    grid.shortest_path_length(start, goal)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneFile {
    target_label: String,
    light_intensity: f64,
    object_center: [f64; 3],
    quads: Vec<QuadFile>,
    #[serde(default)]
    placements: Vec<PatchPlacement>,
    #[serde(default)]
    occupancy: Option<GridSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuadFile {
    id: String,
    vertices: [[f64; 3]; 4],
    #[serde(default)]
    uv: Option<[[f64; 2]; 4]>,
    #[serde(default)]
    is_target: bool,
    texture: TextureSpec,
}

impl SceneFile {
    fn build(self, base_dir: &Path) -> Result<Scene> {
        let quads = self
            .quads
            .into_iter()
            .map(|q| {
                let spec = q.texture.absolutized(base_dir);
                Quad::new(q.id, q.vertices.map(Vec3::from), q.uv, q.is_target, spec, base_dir)
            })
            .collect::<Result<Vec<_>>>()?;
        let occupancy = self.occupancy.map(OccupancyGrid::from_spec).transpose()?;
        let mut scene = Scene::new(
            quads,
            self.object_center.into(),
            self.light_intensity,
            self.target_label,
            occupancy,
        )?;
        for pl in self.placements {
            scene = scene.attach_patch(pl)?;
        }
        Ok(scene)
    }
}
