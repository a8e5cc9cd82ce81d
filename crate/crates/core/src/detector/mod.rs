//! Detection interface and the weighted four-term attack loss.
//!
//! Any perception model can drive the pipeline by implementing
//! [`Detector`]: it must return scored boxes for an image and, for the
//! attack, a scalar loss breakdown together with the exact gradient of the
//! weighted loss with respect to every image channel. A learned detector
//! used this way has to define its four loss terms without ground-truth
//! boxes (for example against its own clean-image predictions); the bundled
//! [`surrogate`] detector sidesteps that by scoring template correlation.

pub mod surrogate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

pub use surrogate::{SurrogateConfig, SurrogateDetector, TemplateBank};

/// Classification, box-regression, proposal-objectness and
/// proposal-localization weights.
pub const DEFAULT_WEIGHTS: [f64; 4] = [0.7, 0.1, 0.1, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// `[x0, y0, x1, y1]` in pixels.
    pub bbox: [f64; 4],
    pub score: f64,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackLossBreakdown {
    pub components: [f64; 4],
    pub weights: [f64; 4],
}

impl AttackLossBreakdown {
    pub fn new(components: [f64; 4]) -> Self {
        Self {
            components,
            weights: DEFAULT_WEIGHTS,
        }
    }

    pub fn combined(&self) -> Result<f64> {
        combine_attack_loss(self)
    }
}

/// `sum_i weight_i * component_i`; weights must sum to one within 1e-9.
pub fn combine_attack_loss(b: &AttackLossBreakdown) -> Result<f64> {
    check_weights(&b.weights)?;
    Ok(b.components.iter().zip(&b.weights).map(|(c, w)| c * w).sum())
}

pub(crate) fn check_weights(w: &[f64; 4]) -> Result<()> {
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || w.iter().any(|x| *x < 0.0) {
        return Err(Error::WeightSum(sum));
    }
    Ok(())
}

pub trait Detector: Send + Sync {
    /// Detections with score at least `threshold`.
    fn detect(&self, image: &Image, threshold: f64) -> Result<Vec<Detection>>;

    /// Loss breakdown for `target` and the gradient of the weighted loss
    /// with respect to the image.
    fn attack_loss(&self, image: &Image, target: &str) -> Result<(AttackLossBreakdown, Image)>;

    /// Highest score among `target` detections, 0 when there are none.
    fn confidence(&self, image: &Image, target: &str) -> Result<f64> {
        Ok(self
            .detect(image, 0.0)?
            .iter()
            .filter(|d| d.label == target)
            .map(|d| d.score)
            .fold(0.0, f64::max))
    }
}
