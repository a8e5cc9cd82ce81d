//! Pinhole camera.
//!
//! Orientation is `(pitch, yaw, roll)` in radians, applied to a base frame
//! that looks down world `-z` with image-up along world `-y`:
//! `world = Ry(-yaw) * Rx(pitch) * Rz(roll) * base`. A roll of `pi`
//! therefore gives an upright image, and yaw turns the view from `-z`
//! towards `+x`. Under this convention the ring orientation
//! `(0, theta - pi/2, pi)` for a camera at angle `theta` around an object
//! looks straight at the object center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};

/// Default vertical field of view (79 degrees).
pub const DEFAULT_VFOV: f64 = 79.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

impl Orientation {
    pub const fn new(pitch: f64, yaw: f64, roll: f64) -> Self {
        Self { pitch, yaw, roll }
    }

    /// Level, upright orientation whose forward axis points along the
    /// horizontal direction `(dx, dz)`.
    pub fn looking_along(dx: f64, dz: f64) -> Self {
        Self::new(0.0, dx.atan2(-dz), std::f64::consts::PI)
    }

    /// `(right, up, forward)` unit vectors in world space.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let apply = |v: Vec3| {
            let v = rot_z(v, self.roll);
            let v = rot_x(v, self.pitch);
            rot_y(v, -self.yaw)
        };
        (
            apply(Vec3::new(-1.0, 0.0, 0.0)),
            apply(Vec3::new(0.0, -1.0, 0.0)),
            apply(Vec3::new(0.0, 0.0, -1.0)),
        )
    }
}

fn rot_x(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    Vec3::new(v.x, c * v.y - s * v.z, s * v.y + c * v.z)
}

fn rot_y(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    Vec3::new(c * v.x + s * v.z, v.y, -s * v.x + c * v.z)
}

fn rot_z(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub orientation: Orientation,
    /// `(height, width)` in pixels.
    pub resolution: (usize, usize),
    pub vertical_fov: f64,
    right: Vec3,
    up: Vec3,
    forward: Vec3,
}

impl Camera {
    pub fn new(
        position: Vec3,
        orientation: Orientation,
        resolution: (usize, usize),
        vertical_fov: f64,
    ) -> Result<Self> {
        if resolution.0 == 0 || resolution.1 == 0 {
            return Err(Error::Dimension(format!(
                "camera resolution must be positive, got {resolution:?}"
            )));
        }
        if !(vertical_fov > 0.0 && vertical_fov < std::f64::consts::PI) {
            return Err(Error::Range(format!(
                "vertical field of view {vertical_fov} must lie in (0, pi)"
            )));
        }
        let (right, up, forward) = orientation.basis();
        Ok(Self {
            position,
            orientation,
            resolution,
            vertical_fov,
            right,
            up,
            forward,
        })
    }

    pub fn height(&self) -> usize {
        self.resolution.0
    }

    pub fn width(&self) -> usize {
        self.resolution.1
    }

    pub fn forward(&self) -> Vec3 {
        self.forward
    }

    pub fn up(&self) -> Vec3 {
        self.up
    }

    pub fn right(&self) -> Vec3 {
        self.right
    }

    fn half_extents(&self) -> (f64, f64) {
        let ty = (0.5 * self.vertical_fov).tan();
        (ty * self.width() as f64 / self.height() as f64, ty)
    }

    /// Ray through the center of pixel `(row, col)`.
    pub fn ray(&self, row: usize, col: usize) -> Ray {
        let (tx, ty) = self.half_extents();
        let (h, w) = (self.height() as f64, self.width() as f64);
        let x = (2.0 * (col as f64 + 0.5) / w - 1.0) * tx;
        let y = (1.0 - 2.0 * (row as f64 + 0.5) / h) * ty;
        Ray {
            origin: self.position,
            dir: self.forward + self.right * x + self.up * y,
        }
    }

    /// Continuous image coordinates `(col, row)` of a world point, where the
    /// image center is `(w/2, h/2)`; `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let d = p - self.position;
        let z = d.dot(self.forward);
        if z <= 0.0 {
            return None;
        }
        let (tx, ty) = self.half_extents();
        let x = d.dot(self.right) / z / tx;
        let y = d.dot(self.up) / z / ty;
        let (h, w) = (self.height() as f64, self.width() as f64);
        Some(((x + 1.0) * 0.5 * w, (1.0 - y) * 0.5 * h))
    }
}
