//! Object-goal navigation on the scene's occupancy grid.
//!
//! The agent starts with an empty map. Every step it marks the cells it can
//! see (within `sensor_range` and line of sight; its eight neighbours always)
//! and, while the target has not been found, renders a view towards the
//! object whenever the object is within `perception_range` and in line of
//! sight. A detection at or above `threshold` commits the agent to the
//! object: it then follows the shortest path on the true grid to the goal
//! region, the free cells within `success_distance` of the object center.
//! Until then it walks towards the nearest reachable frontier (a seen free
//! cell next to an unseen one), ties broken by lower cell index. With no
//! frontier left it idles until the step budget runs out.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Orientation};
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::grid::OccupancyGrid;
use crate::patch::Patch;
use crate::render::render;
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavConfig {
    pub step_budget: usize,
    pub success_distance: f64,
    pub threshold: f64,
    pub perception_range: f64,
    pub sensor_range: f64,
    pub episodes: usize,
    /// Minimum geodesic distance from a start cell to the goal region.
    pub min_start_distance: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            step_budget: 500,
            success_distance: 1.0,
            threshold: 0.5,
            perception_range: 3.0,
            sensor_range: 1.5,
            episodes: 20,
            min_start_distance: 2.0,
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("success_distance", self.success_distance),
            ("perception_range", self.perception_range),
            ("sensor_range", self.sensor_range),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("navigation: {name} must be positive")));
            }
        }
        if self.step_budget == 0 || self.episodes == 0 {
            return Err(Error::Config("navigation: step_budget and episodes must be positive".into()));
        }
        if !(self.min_start_distance >= 0.0) {
            return Err(Error::Config("navigation: min_start_distance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub path_length: f64,
    pub shortest_path: f64,
    pub final_distance: f64,
    pub steps_used: usize,
}

fn grid_of(scene: &Scene) -> Result<&OccupancyGrid> {
    scene
        .occupancy
        .as_ref()
        .ok_or_else(|| Error::InvalidScene("navigation needs an occupancy grid".into()))
}

fn horizontal(p: Vec3) -> [f64; 2] {
    [p.x, p.z]
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn goal_cells(grid: &OccupancyGrid, center: [f64; 2], radius: f64) -> Result<Vec<usize>> {
    let goals: Vec<usize> = grid
        .free_cells()
        .filter(|&i| dist2(grid.center(i), center) <= radius)
        .collect();
    if goals.is_empty() {
        return Err(Error::InvalidScene(
            "no free cell lies within the success distance of the object".into(),
        ));
    }
    Ok(goals)
}

/// Geodesic distance from every cell to the goal region.
fn goal_distances(grid: &OccupancyGrid, goals: &[usize]) -> Vec<f64> {
    grid.distances(goals, |i| grid.is_free(i)).0
}

/// `count` distinct free start positions, reachable and at least
/// `min_start_distance` from the goal region, drawn with `seed`.
pub fn sample_starts(scene: &Scene, nav: &NavConfig, count: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    let grid = grid_of(scene)?;
    let goals = goal_cells(grid, horizontal(scene.object_center), nav.success_distance)?;
    let d = goal_distances(grid, &goals);
    let mut pool: Vec<usize> = grid
        .free_cells()
        .filter(|&i| d[i].is_finite() && d[i] >= nav.min_start_distance)
        .collect();
    if pool.len() < count {
        return Err(Error::InvalidScene(format!(
            "only {} start cells satisfy the minimum start distance, need {count}",
            pool.len()
        )));
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pool.truncate(count);
    Ok(pool.into_iter().map(|i| grid.center(i)).collect())
}

struct Agent<'a> {
    grid: &'a OccupancyGrid,
    seen: Vec<bool>,
    /// Cached perception outcome per cell.
    perceived: Vec<Option<bool>>,
}

impl Agent<'_> {
    fn observe(&mut self, pos: usize, range: f64) {
        let g = self.grid;
        let here = g.center(pos);
        self.seen[pos] = true;
        for (n, _) in g.neighbors(pos, |_| true) {
            self.seen[n] = true;
        }
        for i in 0..g.len() {
            if !self.seen[i] && dist2(g.center(i), here) <= range && g.line_of_sight(here, g.center(i), false) {
                self.seen[i] = true;
            }
        }
    }

    fn is_frontier(&self, i: usize) -> bool {
        self.seen[i]
            && self.grid.is_free(i)
            && self.grid.neighbors(i, |_| true).iter().any(|(n, _)| !self.seen[*n])
    }

    /// First move towards the nearest frontier through seen free cells.
    fn frontier_step(&self, pos: usize) -> Option<usize> {
        let g = self.grid;
        let (dist, prev) = g.distances(&[pos], |i| self.seen[i] && g.is_free(i));
        let target = (0..g.len())
            .filter(|&i| i != pos && dist[i].is_finite() && self.is_frontier(i))
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)))?;
        first_step(&prev, pos, target)
    }
}

fn first_step(prev: &[Option<usize>], from: usize, to: usize) -> Option<usize> {
    let mut cur = to;
    while let Some(p) = prev[cur] {
        if p == from {
            return Some(cur);
        }
        cur = p;
    }
    None
}

/// One episode from `start`. Perception renders use `resolution` and
/// `vertical_fov` at the object's height.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    scene: &Scene,
    patch: Option<&Patch>,
    start: [f64; 2],
    nav: &NavConfig,
    detector: &dyn Detector,
    resolution: (usize, usize),
    vertical_fov: f64,
) -> Result<EpisodeResult> {
    nav.validate()?;
    let grid = grid_of(scene)?;
    let mut pos = grid.free_cell_at(start)?;
    let center = horizontal(scene.object_center);
    let goals = goal_cells(grid, center, nav.success_distance)?;
    let to_goal = goal_distances(grid, &goals);
    let mut in_goal = vec![false; grid.len()];
    for &g in &goals {
        in_goal[g] = true;
    }
    let shortest_path = to_goal[pos];

    let mut agent = Agent {
        grid,
        seen: vec![false; grid.len()],
        perceived: vec![None; grid.len()],
    };
    let perceive = |cell: usize, agent: &mut Agent| -> Result<bool> {
        if let Some(hit) = agent.perceived[cell] {
            return Ok(hit);
        }
        let here = grid.center(cell);
        let d = dist2(here, center);
        let hit = if d <= nav.perception_range && d > 0.0 && grid.line_of_sight(here, center, true) {
            let cam = Camera::new(
                Vec3::new(here[0], scene.object_center.y, here[1]),
                Orientation::looking_along(center[0] - here[0], center[1] - here[1]),
                resolution,
                vertical_fov,
            )?;
            let img = render(scene, patch, &cam).image;
            detector.confidence(&img, &scene.target_label)? >= nav.threshold
        } else {
            false
        };
        agent.perceived[cell] = Some(hit);
        Ok(hit)
    };

    agent.observe(pos, nav.sensor_range);
    let mut detected = false;
    let mut steps = 0;
    let mut path_length = 0.0;
    let success = loop {
        if !detected {
            detected = perceive(pos, &mut agent)?;
        }
        if detected && in_goal[pos] {
            break true;
        }
        if steps == nav.step_budget {
            break false;
        }
        let next = if detected {
            grid.neighbors(pos, |i| grid.is_free(i))
                .into_iter()
                .filter(|(n, w)| (to_goal[*n] + w - to_goal[pos]).abs() < 1e-9)
                .map(|(n, _)| n)
                .min()
        } else {
            agent.frontier_step(pos)
        };
        let Some(next) = next else {
            steps = nav.step_budget;
            break false;
        };
        path_length += dist2(grid.center(pos), grid.center(next));
        pos = next;
        steps += 1;
        agent.observe(pos, nav.sensor_range);
    };
    Ok(EpisodeResult {
        success,
        path_length,
        shortest_path,
        final_distance: to_goal[pos],
        steps_used: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{AttackLossBreakdown, Detection};
    use crate::raster::Image;
    use std::path::Path;

    struct Fixed(f64);

    impl Detector for Fixed {
        fn detect(&self, _: &Image, threshold: f64) -> Result<Vec<Detection>> {
            Ok((self.0 >= threshold)
                .then(|| Detection {
                    bbox: [0.0, 0.0, 1.0, 1.0],
                    score: self.0,
                    label: "tv".into(),
                })
                .into_iter()
                .collect())
        }

        fn attack_loss(&self, image: &Image, _: &str) -> Result<(AttackLossBreakdown, Image)> {
            Ok((AttackLossBreakdown::new([0.0; 4]), Image::zeros(image.height(), image.width())))
        }
    }

    /// Two rooms joined by a door; the object sits in the right room.
    fn scene() -> Scene {
        let text = r#"
            target_label = "tv"
            light_intensity = 40.0
            object_center = [2.5, 0.3, 0.5]

            [[quads]]
            id = "tv"
            is_target = true
            vertices = [[2.3, 0.0, 0.5], [2.7, 0.0, 0.5], [2.7, 0.6, 0.5], [2.3, 0.6, 0.5]]
            texture = { kind = "solid", color = [0.8, 0.2, 0.2] }

            [occupancy]
            cell_size = 0.5
            origin = [0.0, 0.0]
            rows = [
                '########',
                '#..#.o.#',
                '#..#...#',
                '#......#',
                '########',
            ]
        "#;
        Scene::from_toml(text, Path::new(".")).unwrap()
    }

    const RES: (usize, usize) = (8, 8);

    fn run(start: [f64; 2], det: f64) -> EpisodeResult {
        run_episode(&scene(), None, start, &NavConfig::default(), &Fixed(det), RES, 1.2).unwrap()
    }

    #[test]
    fn adjacent_object_succeeds_immediately() {
        let r = run([2.25, 1.25], 1.0);
        assert!(r.success);
        assert_eq!((r.path_length, r.shortest_path, r.steps_used), (0.0, 0.0, 0));
    }

    #[test]
    fn detection_leads_to_goal_on_a_shortest_path() {
        let r = run([0.75, 0.75], 1.0);
        assert!(r.success);
        assert_eq!(r.final_distance, 0.0);
        assert!(r.path_length >= r.shortest_path - 1e-12);
        assert!(r.shortest_path > 0.0);
    }

    #[test]
    fn blind_agent_exhausts_budget() {
        let r = run([3.25, 1.25], 0.0);
        assert!(!r.success);
        assert_eq!(r.steps_used, 500);
        assert!(r.final_distance > 0.0);
    }

    #[test]
    fn episodes_are_deterministic() {
        assert_eq!(run([0.75, 1.75], 1.0), run([0.75, 1.75], 1.0));
    }

    #[test]
    fn blocked_start_is_rejected() {
        let e = run_episode(&scene(), None, [0.25, 0.25], &NavConfig::default(), &Fixed(1.0), RES, 1.2);
        assert!(matches!(e, Err(Error::Blocked(_))));
    }

    #[test]
    fn starts_are_seeded_and_far_enough() {
        let nav = NavConfig {
            min_start_distance: 1.0,
            ..Default::default()
        };
        let s = scene();
        let a = sample_starts(&s, &nav, 3, 4).unwrap();
        assert_eq!(a, sample_starts(&s, &nav, 3, 4).unwrap());
        let grid = s.occupancy.as_ref().unwrap();
        for p in &a {
            let i = grid.free_cell_at(*p).unwrap();
            assert!(grid.is_free(i));
            assert!(dist2(*p, [2.5, 0.5]) > 1.0);
        }
        assert!(sample_starts(&s, &nav, 50, 4).is_err());
    }
}
