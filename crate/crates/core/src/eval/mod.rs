//! Attack success over viewpoint sets and navigation metrics.

pub mod nav;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::patch::Patch;
use crate::render::render;
use crate::sampler::Viewpoint;
use crate::scene::Scene;

pub use nav::{run_episode, sample_starts, EpisodeResult, NavConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub viewpoint: Viewpoint,
    /// Highest target score in the render.
    pub confidence: f64,
    pub attacked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrReport {
    pub n_views: usize,
    pub n_attacked: usize,
    pub asr: f64,
    pub records: Vec<ViewRecord>,
}

impl AsrReport {
    pub fn from_records(records: Vec<ViewRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyViews);
        }
        let n_attacked = records.iter().filter(|r| r.attacked).count();
        Ok(Self {
            n_views: records.len(),
            n_attacked,
            asr: n_attacked as f64 / records.len() as f64,
            records,
        })
    }

    /// Tab-separated per-view table.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "radius\tring_index\tconfidence\tattacked")?;
        for r in &self.records {
            writeln!(
                out,
                "{:?}\t{}\t{:?}\t{}",
                r.viewpoint.radius, r.viewpoint.ring_index, r.confidence, r.attacked as u8
            )?;
        }
        Ok(())
    }
}

/// Fraction of `views` in which no target detection reaches `tau`.
pub fn compute_asr(
    scene: &Scene,
    patch: Option<&Patch>,
    views: &[Viewpoint],
    detector: &dyn Detector,
    tau: f64,
    resolution: (usize, usize),
    vertical_fov: f64,
) -> Result<AsrReport> {
    if views.is_empty() {
        return Err(Error::EmptyViews);
    }
    let records = views
        .par_iter()
        .map(|v| {
            let cam = v.camera(resolution, vertical_fov)?;
            let img = render(scene, patch, &cam).image;
            let confidence = detector.confidence(&img, &scene.target_label)?;
            Ok(ViewRecord {
                viewpoint: *v,
                confidence,
                attacked: confidence < tau,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AsrReport::from_records(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavMetrics {
    pub sr: f64,
    pub spl: f64,
    pub dts: f64,
}

/// Success rate, success weighted by path length, and mean distance to the
/// goal at termination.
pub fn compute_metrics(results: &[EpisodeResult]) -> Result<NavMetrics> {
    if results.is_empty() {
        return Err(Error::EmptyEpisodes);
    }
    let n = results.len() as f64;
    let mut sr = 0.0;
    let mut spl = 0.0;
    let mut dts = 0.0;
    for r in results {
        if r.success {
            sr += 1.0;
            let denom = r.path_length.max(r.shortest_path);
            spl += if denom > 0.0 { r.shortest_path / denom } else { 1.0 };
        }
        dts += r.final_distance;
    }
    Ok(NavMetrics {
        sr: sr / n,
        spl: spl / n,
        dts: dts / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn episode(success: bool, l: f64, p: f64, d: f64) -> EpisodeResult {
        EpisodeResult {
            success,
            path_length: p,
            shortest_path: l,
            final_distance: d,
            steps_used: 0,
        }
    }

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&[episode(true, 3.0, 3.0, 0.0)]).unwrap();
        assert_eq!((m.sr, m.spl), (1.0, 1.0));
        let m = compute_metrics(&[episode(true, 5.0, 10.0, 0.0), episode(false, 4.0, 7.0, 1.5)]).unwrap();
        assert_eq!((m.sr, m.spl, m.dts), (0.5, 0.25, 0.75));
        let m = compute_metrics(&[episode(false, 1.0, 2.0, 2.0), episode(false, 3.0, 9.0, 2.0)]).unwrap();
        assert_eq!((m.sr, m.spl, m.dts), (0.0, 0.0, 2.0));
        assert!(matches!(compute_metrics(&[]), Err(Error::EmptyEpisodes)));
    }

    #[test]
    fn asr_arithmetic() {
        let v = crate::sampler::candidates(Default::default(), &Default::default()).unwrap();
        let records: Vec<ViewRecord> = (0..100)
            .map(|i| ViewRecord {
                viewpoint: v[i],
                confidence: 0.0,
                attacked: i < 89,
            })
            .collect();
        let r = AsrReport::from_records(records).unwrap();
        assert_eq!((r.n_attacked, r.asr), (89, 0.89));
        assert!(AsrReport::from_records(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn spl_never_exceeds_sr(eps in proptest::collection::vec((any::<bool>(), 0.0..20.0f64, 0.0..40.0f64, 0.0..5.0f64), 1..30)) {
            let rs: Vec<_> = eps.iter().map(|&(s, l, p, d)| {
                // Successful episodes never beat the shortest path.
                episode(s, l, if s { p.max(l) } else { p }, d)
            }).collect();
            let m = compute_metrics(&rs).unwrap();
            prop_assert!(m.spl <= m.sr + 1e-12);
            prop_assert!((0.0..=1.0).contains(&m.sr));
        }
    }
}
