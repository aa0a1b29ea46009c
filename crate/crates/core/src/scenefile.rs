//! Plain-text scene and trajectory files (TOML).
//!
//! ```toml
//! width_m = 100.0            # x extent
//! depth_m = 80.0             # y extent
//! seed = 7                   # generator seed the scene came from
//!
//! [[buildings]]              # one table per axis-aligned box
//! min = [10.0, 5.0, 0.0]     # meters
//! max = [24.0, 20.0, 18.0]
//! attenuation_db_per_m = 1.2
//!
//! [trajectory]               # either a circle ...
//! center = [40.0, 45.0, 40.0]
//! radius_m = 20.0
//! n_waypoints = 128
//! # ... or an explicit list: waypoints = [[x, y, z], ...]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene::{build_circular_trajectory, Building, Point3, Scene, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BuildingEntry {
    min: [f64; 3],
    max: [f64; 3],
    attenuation_db_per_m: f64,
}

/// How a trajectory is written down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrajectorySpec {
    Circle { center: [f64; 3], radius_m: f64, n_waypoints: usize },
    Waypoints { waypoints: Vec<[f64; 3]> },
}

impl TrajectorySpec {
    pub fn build(&self) -> Result<Trajectory> {
        match self {
            TrajectorySpec::Circle { center, radius_m, n_waypoints } => {
                build_circular_trajectory(Point3::from(*center), *radius_m, *n_waypoints)
            }
            TrajectorySpec::Waypoints { waypoints } => Trajectory::new(waypoints.iter().map(|w| Point3::from(*w)).collect()),
        }
    }

    /// The 128-waypoint circle at 40 m altitude used throughout the experiments.
    pub fn default_circle() -> Self {
        TrajectorySpec::Circle { center: [40.0, 45.0, 40.0], radius_m: 20.0, n_waypoints: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SceneFile {
    width_m: f64,
    depth_m: f64,
    seed: u64,
    #[serde(default)]
    buildings: Vec<BuildingEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trajectory: Option<TrajectorySpec>,
}

fn to_file(scene: &Scene, trajectory: Option<&TrajectorySpec>) -> SceneFile {
    let (width_m, depth_m) = scene.extent();
    SceneFile {
        width_m,
        depth_m,
        seed: scene.rng_seed(),
        buildings: scene
            .buildings()
            .iter()
            .map(|b| BuildingEntry {
                min: b.min_corner().into(),
                max: b.max_corner().into(),
                attenuation_db_per_m: b.attenuation(),
            })
            .collect(),
        trajectory: trajectory.cloned(),
    }
}

pub fn to_toml(scene: &Scene, trajectory: Option<&TrajectorySpec>) -> String {
    toml::to_string(&to_file(scene, trajectory)).expect("scene files always serialize")
}

pub fn from_toml(text: &str) -> std::result::Result<(Scene, Option<TrajectorySpec>), String> {
    let file: SceneFile = toml::from_str(text).map_err(|e| e.to_string())?;
    let buildings = file
        .buildings
        .iter()
        .map(|b| Building::new(Point3::from(b.min), Point3::from(b.max), b.attenuation_db_per_m))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let scene = Scene::new(file.width_m, file.depth_m, buildings, file.seed).map_err(|e| e.to_string())?;
    if let Some(t) = &file.trajectory {
        t.build().map_err(|e| e.to_string())?;
    }
    Ok((scene, file.trajectory))
}

pub fn save(path: &Path, scene: &Scene, trajectory: Option<&TrajectorySpec>) -> Result<()> {
    std::fs::write(path, to_toml(scene, trajectory))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Scene, Option<TrajectorySpec>)> {
    let text = std::fs::read_to_string(path)?;
    from_toml(&text).map_err(|reason| Error::Format { path: path.to_path_buf(), reason })
}

/// SHA-256 (hex) of the canonical serialization of the scene alone.
pub fn scene_hash(scene: &Scene) -> String {
    Sha256::digest(to_toml(scene, None).as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}
