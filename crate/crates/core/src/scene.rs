//! Urban scene, ground nodes and the UAV trajectory.
//!
//! Buildings are axis-aligned boxes standing on the ground plane `z = 0`.
//! Nodes live on the ground; the UAV flies a horizontal circle above them.

use std::f64::consts::TAU;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

pub type Point2 = Vector2<f64>;
pub type Point3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    min_corner: Point3,
    max_corner: Point3,
    /// Interior absorption in dB per traversed meter.
    attenuation: f64,
}

impl Building {
    pub fn new(min_corner: Point3, max_corner: Point3, attenuation: f64) -> Result<Self> {
        if (0..3).any(|k| !(min_corner[k] < max_corner[k])) {
            return Err(invalid(format!(
                "building corners must satisfy min < max component-wise, got {:?} / {:?}",
                min_corner.as_slice(),
                max_corner.as_slice()
            )));
        }
        if !(attenuation >= 0.0) || !attenuation.is_finite() {
            return Err(invalid(format!("building attenuation must be >= 0, got {attenuation}")));
        }
        Ok(Self { min_corner, max_corner, attenuation })
    }

    pub fn min_corner(&self) -> Point3 {
        self.min_corner
    }

    pub fn max_corner(&self) -> Point3 {
        self.max_corner
    }

    pub fn attenuation(&self) -> f64 {
        self.attenuation
    }

    /// Strict interior test on the (x, y) footprint.
    pub fn footprint_contains(&self, p: &Point2) -> bool {
        p.x > self.min_corner.x
            && p.x < self.max_corner.x
            && p.y > self.min_corner.y
            && p.y < self.max_corner.y
    }

    /// True when the two footprints share a region of positive area.
    pub fn footprint_overlaps(&self, other: &Building) -> bool {
        let ox = self.max_corner.x.min(other.max_corner.x) - self.min_corner.x.max(other.min_corner.x);
        let oy = self.max_corner.y.min(other.max_corner.y) - self.min_corner.y.max(other.min_corner.y);
        ox > 0.0 && oy > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    width: f64,
    depth: f64,
    buildings: Vec<Building>,
    rng_seed: u64,
}

impl Scene {
    pub fn new(width: f64, depth: f64, buildings: Vec<Building>, rng_seed: u64) -> Result<Self> {
        if !(width > 0.0 && depth > 0.0) {
            return Err(invalid(format!("scene extent must be positive, got {width} x {depth}")));
        }
        for (i, b) in buildings.iter().enumerate() {
            if b.min_corner.x < 0.0 || b.min_corner.y < 0.0 || b.max_corner.x > width || b.max_corner.y > depth {
                return Err(invalid(format!("building {i} lies outside the {width} x {depth} area")));
            }
            if b.min_corner.z < 0.0 {
                return Err(invalid(format!("building {i} extends below the ground plane")));
            }
            if let Some(j) = buildings[..i].iter().position(|o| o.footprint_overlaps(b)) {
                return Err(invalid(format!("buildings {j} and {i} overlap")));
            }
        }
        Ok(Self { width, depth, buildings, rng_seed })
    }

    /// An obstacle-free area.
    pub fn empty(width: f64, depth: f64) -> Result<Self> {
        Self::new(width, depth, Vec::new(), 0)
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.width, self.depth)
    }

    pub fn buildings(&self) -> &[Building] {
        &self.buildings
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Inside the area and not strictly inside any building footprint.
    pub fn is_free_ground(&self, p: &Point2) -> bool {
        p.x >= 0.0
            && p.x <= self.width
            && p.y >= 0.0
            && p.y <= self.depth
            && !self.buildings.iter().any(|b| b.footprint_contains(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<Point3>,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Point3>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(invalid("a trajectory needs at least one waypoint"));
        }
        if let Some(i) = waypoints.iter().position(|w| !(w.z > 0.0)) {
            return Err(invalid(format!("waypoint {i} has non-positive altitude")));
        }
        Ok(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[Point3] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Lowest UAV altitude along the trajectory.
    pub fn min_altitude(&self) -> f64 {
        self.waypoints.iter().map(|w| w.z).fold(f64::INFINITY, f64::min)
    }
}

/// `n_waypoints` points equally spaced in angle on a horizontal circle,
/// starting on the +x side of `center` and turning counter-clockwise.
pub fn build_circular_trajectory(center: Point3, radius: f64, n_waypoints: usize) -> Result<Trajectory> {
    if !(radius > 0.0) {
        return Err(invalid(format!("trajectory radius must be positive, got {radius}")));
    }
    if !(center.z > 0.0) {
        return Err(invalid(format!("trajectory altitude must be positive, got {}", center.z)));
    }
    if n_waypoints == 0 {
        return Err(invalid("a trajectory needs at least one waypoint"));
    }
    let waypoints = (0..n_waypoints)
        .map(|k| {
            let angle = TAU * k as f64 / n_waypoints as f64;
            Point3::new(center.x + radius * angle.cos(), center.y + radius * angle.sin(), center.z)
        })
        .collect();
    Trajectory::new(waypoints)
}

/// Ground nodes; the first `num_anchors` positions are the anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    positions: Vec<Point2>,
    num_anchors: usize,
}

impl NodeSet {
    pub fn new(positions: Vec<Point2>, num_anchors: usize) -> Result<Self> {
        if num_anchors < 3 {
            return Err(invalid(format!("at least 3 anchors are required, got {num_anchors}")));
        }
        if num_anchors > positions.len() {
            return Err(invalid(format!(
                "{num_anchors} anchors requested but only {} nodes",
                positions.len()
            )));
        }
        Ok(Self { positions, num_anchors })
    }

    pub fn positions(&self) -> &[Point2] {
        &self.positions
    }

    pub fn num_anchors(&self) -> usize {
        self.num_anchors
    }

    pub fn anchors(&self) -> &[Point2] {
        &self.positions[..self.num_anchors]
    }

    pub fn unknowns(&self) -> &[Point2] {
        &self.positions[self.num_anchors..]
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Upper bound on rejected draws per node before giving up.
const NODE_REJECTION_BUDGET: usize = 100_000;

/// Draws `count` i.i.d. points uniformly over the free ground of `scene`.
pub fn sample_ground_positions<R: Rng>(scene: &Scene, count: usize, rng: &mut R) -> Result<Vec<Point2>> {
    let (w, d) = scene.extent();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tries = 0;
        loop {
            let p = Point2::new(rng.random::<f64>() * w, rng.random::<f64>() * d);
            if scene.is_free_ground(&p) {
                out.push(p);
                break;
            }
            tries += 1;
            if tries >= NODE_REJECTION_BUDGET {
                return Err(invalid("scene has no free ground to place nodes on"));
            }
        }
    }
    Ok(out)
}

/// Samples `m` nodes uniformly over the free ground; the first `m_a` are anchors.
pub fn sample_nodes(scene: &Scene, m: usize, m_a: usize, seed: u64) -> Result<NodeSet> {
    if m_a < 3 {
        return Err(invalid(format!("multilateration in the plane needs >= 3 anchors, got {m_a}")));
    }
    if m < m_a {
        return Err(invalid(format!("m = {m} must be >= m_a = {m_a}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = sample_ground_positions(scene, m, &mut rng)?;
    NodeSet::new(positions, m_a)
}

/// Parameters of the random building generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGenerator {
    pub extent: (f64, f64),
    pub n_buildings: usize,
    /// Side length range of a footprint, meters.
    pub footprint_range: (f64, f64),
    pub height_range: (f64, f64),
    /// dB per meter.
    pub attenuation_range: (f64, f64),
    /// Total placement attempts before reporting failure.
    pub retry_budget: usize,
}

impl Default for SceneGenerator {
    fn default() -> Self {
        Self {
            extent: (100.0, 80.0),
            n_buildings: 8,
            footprint_range: (10.0, 25.0),
            height_range: (10.0, 30.0),
            attenuation_range: (0.5, 2.0),
            retry_budget: 10_000,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(invalid(format!("{name} range must satisfy lo < hi, got ({lo}, {hi})")))
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

impl SceneGenerator {
    /// Rejection-samples non-overlapping buildings; deterministic per seed.
    pub fn generate(&self, seed: u64) -> Result<Scene> {
        let (w, d) = self.extent;
        if !(w > 0.0 && d > 0.0) {
            return Err(invalid(format!("scene extent must be positive, got {w} x {d}")));
        }
        check_range("footprint", self.footprint_range)?;
        check_range("height", self.height_range)?;
        check_range("attenuation", self.attenuation_range)?;
        if self.footprint_range.0 <= 0.0 || self.height_range.0 <= 0.0 || self.attenuation_range.0 < 0.0 {
            return Err(invalid("building sizes must be positive and attenuation non-negative"));
        }
        if self.footprint_range.1 > w.min(d) {
            return Err(invalid("largest footprint does not fit in the scene"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buildings: Vec<Building> = Vec::with_capacity(self.n_buildings);
        let mut attempts = 0;
        while buildings.len() < self.n_buildings {
            if attempts >= self.retry_budget {
                return Err(Error::PlacementFailure { requested: self.n_buildings, budget: self.retry_budget });
            }
            attempts += 1;
            let sx = uniform(&mut rng, self.footprint_range);
            let sy = uniform(&mut rng, self.footprint_range);
            let h = uniform(&mut rng, self.height_range);
            let att = uniform(&mut rng, self.attenuation_range);
            let x0 = rng.random::<f64>() * (w - sx);
            let y0 = rng.random::<f64>() * (d - sy);
            let candidate = Building::new(Point3::new(x0, y0, 0.0), Point3::new(x0 + sx, y0 + sy, h), att)?;
            if buildings.iter().all(|b| !b.footprint_overlaps(&candidate)) {
                buildings.push(candidate);
            }
        }
        Scene::new(w, d, buildings, seed)
    }
}

/// Convenience wrapper over [`SceneGenerator::generate`].
pub fn generate_random_scene(
    extent: (f64, f64),
    n_buildings: usize,
    footprint_range: (f64, f64),
    height_range: (f64, f64),
    attenuation_range: (f64, f64),
    seed: u64,
) -> Result<Scene> {
    SceneGenerator { extent, n_buildings, footprint_range, height_range, attenuation_range, ..Default::default() }
        .generate(seed)
}
