//! 2D continuous navigation environments and the random-walk policy.
//!
//! An agent lives at real-valued (x, y) coordinates, takes fixed-length
//! steps in one of 360 integer-degree directions, cannot cross walls
//! (blocked moves leave it in place, still consuming a step), and
//! terminates on touching a reward zone. Three built-in labyrinths cover
//! the layouts used throughout: an S-shaped maze with two reward zones,
//! a pair of sealed rooms with a reward only in the lower one, and a
//! U-shape whose sealed upper chamber is never spawned in.
//!
//! Rollouts are pure functions of (layout, seed substream): episode `i`
//! of a dataset draws from its own ChaCha stream, so episodes can be
//! regenerated in isolation and generated in parallel without any shared
//! state.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, Rect, Segment};

/// Length of every agent move, in map units.
pub const STEP_SIZE: f64 = 20.0;
/// Number of discrete move directions (one per integer degree).
pub const N_ACTIONS: usize = 360;
/// Consecutive spawn rejections tolerated before giving up.
pub const MAX_SPAWN_TRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MapId {
    #[serde(rename = "map1")]
    Map1,
    #[serde(rename = "map2")]
    Map2,
    #[serde(rename = "map3")]
    Map3,
}

impl FromStr for MapId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map1" => Ok(MapId::Map1),
            "map2" => Ok(MapId::Map2),
            "map3" => Ok(MapId::Map3),
            other => Err(Error::UnknownMap(other.to_string())),
        }
    }
}

impl fmt::Display for MapId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MapId::Map1 => "map1",
            MapId::Map2 => "map2",
            MapId::Map3 => "map3",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardZone {
    pub center: Point,
    pub radius: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapLayout {
    pub map_id: String,
    pub width: f64,
    pub height: f64,
    pub walls: Vec<Segment>,
    pub reward_zones: Vec<RewardZone>,
    pub spawn_region: Rect,
}

impl MapLayout {
    pub fn in_bounds(&self, p: Point) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    pub fn on_wall(&self, p: Point) -> bool {
        self.walls.iter().any(|w| w.contains_point(p))
    }

    /// A legal agent position: inside the bounds and not on a wall.
    pub fn is_valid_state(&self, p: Point) -> bool {
        self.in_bounds(p) && !self.on_wall(p)
    }

    pub fn zone_at(&self, p: Point) -> Option<&RewardZone> {
        self.reward_zones
            .iter()
            .find(|z| p.dist_sq(z.center) <= z.radius * z.radius)
    }

    /// Valid and outside every reward zone; where agents may spawn and
    /// where value estimates are meaningful.
    pub fn is_free(&self, p: Point) -> bool {
        self.is_valid_state(p) && self.zone_at(p).is_none()
    }

    /// Map units -> [-1, 1]^2, the input range for every network.
    pub fn normalize(&self, p: Point) -> [f64; 2] {
        [2.0 * p.x / self.width - 1.0, 2.0 * p.y / self.height - 1.0]
    }

    /// Map units -> [0, 1]^2, the feature map for successor-feature targets.
    pub fn to_unit(&self, p: Point) -> [f64; 2] {
        [p.x / self.width, p.y / self.height]
    }

    pub fn validate(&self) -> Result<()> {
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::InvalidLayout("non-positive dimensions".into()));
        }
        for w in &self.walls {
            if !self.in_bounds(w.a) || !self.in_bounds(w.b) {
                return Err(Error::InvalidLayout("wall endpoint out of bounds".into()));
            }
        }
        for z in &self.reward_zones {
            if z.radius <= 0.0 {
                return Err(Error::InvalidLayout("non-positive zone radius".into()));
            }
            if !self.in_bounds(z.center) {
                return Err(Error::InvalidLayout("zone center out of bounds".into()));
            }
            for w in &self.walls {
                if w.dist_to_point(z.center) < z.radius {
                    return Err(Error::InvalidLayout("zone interior crosses a wall".into()));
                }
            }
        }
        let sr = &self.spawn_region;
        if !self.in_bounds(sr.min) || !self.in_bounds(sr.max) {
            return Err(Error::InvalidLayout("spawn region out of bounds".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let layout: MapLayout = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        layout.validate()?;
        Ok(layout)
    }
}

/// Canonical layout for one of the three built-in labyrinths.
pub fn builtin_map(id: MapId) -> MapLayout {
    let layout = match id {
        // S-shaped maze: three horizontal corridors connected at
        // alternating ends, one reward zone near each opening.
        MapId::Map1 => MapLayout {
            map_id: id.to_string(),
            width: 400.0,
            height: 300.0,
            walls: vec![
                Segment::new(0.0, 100.0, 300.0, 100.0),
                Segment::new(100.0, 200.0, 400.0, 200.0),
            ],
            reward_zones: vec![
                RewardZone {
                    center: Point::new(370.0, 30.0),
                    radius: 10.0,
                    reward: 30.0,
                },
                RewardZone {
                    center: Point::new(30.0, 270.0),
                    radius: 10.0,
                    reward: 30.0,
                },
            ],
            spawn_region: Rect::new(0.0, 0.0, 400.0, 300.0),
        },
        // Two sealed rooms; the reward sits in the lower one, so the
        // upper room has value exactly zero.
        MapId::Map2 => MapLayout {
            map_id: id.to_string(),
            width: 400.0,
            height: 300.0,
            walls: vec![Segment::new(0.0, 150.0, 400.0, 150.0)],
            reward_zones: vec![RewardZone {
                center: Point::new(200.0, 50.0),
                radius: 10.0,
                reward: 30.0,
            }],
            spawn_region: Rect::new(0.0, 0.0, 400.0, 300.0),
        },
        // U-shape: two vertical arms joined along the bottom. The
        // chamber between the arms is sealed on all sides and excluded
        // from the spawn region; it only pads the state space.
        MapId::Map3 => MapLayout {
            map_id: id.to_string(),
            width: 400.0,
            height: 300.0,
            walls: vec![
                Segment::new(100.0, 200.0, 100.0, 300.0),
                Segment::new(300.0, 200.0, 300.0, 300.0),
                Segment::new(100.0, 200.0, 300.0, 200.0),
            ],
            reward_zones: vec![RewardZone {
                center: Point::new(370.0, 270.0),
                radius: 10.0,
                reward: 30.0,
            }],
            spawn_region: Rect::new(0.0, 0.0, 400.0, 200.0),
        },
    };
    debug_assert!(layout.validate().is_ok());
    layout
}

/// One trajectory: `states` has one more entry than `actions`/`rewards`.
/// Positions are stored as parallel x/y arrays, matching the dataset
/// file format one-to-one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub action: Vec<u16>,
    pub reward: Vec<f64>,
    pub terminated: bool,
}

impl Episode {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.action.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action.is_empty()
    }

    pub fn state(&self, i: usize) -> Point {
        Point::new(self.x[i], self.y[i])
    }

    pub fn n_states(&self) -> usize {
        self.x.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.action.len();
        if self.x.len() != n + 1 || self.y.len() != n + 1 || self.reward.len() != n {
            return Err(Error::Dataset(format!(
                "inconsistent episode lengths: {} states-x, {} states-y, {} actions, {} rewards",
                self.x.len(),
                self.y.len(),
                n,
                self.reward.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub map_id: String,
    pub gamma: f64,
    pub seed: u64,
    pub n_episodes: usize,
    pub episodes: Vec<Episode>,
}

impl TrajectoryDataset {
    pub fn validate(&self) -> Result<()> {
        if self.n_episodes != self.episodes.len() {
            return Err(Error::Dataset(format!(
                "header says {} episodes, found {}",
                self.n_episodes,
                self.episodes.len()
            )));
        }
        for ep in &self.episodes {
            ep.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ds: TrajectoryDataset = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: Point,
    pub reward: f64,
    pub terminal: bool,
}

/// Unit direction for an angle in degrees, measured from the +x axis.
fn unit_dir(angle_deg: f64) -> (f64, f64) {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    (cos, sin)
}

/// Direction table for the 360 integer-degree actions.
fn action_dirs() -> &'static [(f64, f64); N_ACTIONS] {
    static DIRS: OnceLock<[(f64, f64); N_ACTIONS]> = OnceLock::new();
    DIRS.get_or_init(|| {
        let mut dirs = [(0.0, 0.0); N_ACTIONS];
        for (k, d) in dirs.iter_mut().enumerate() {
            *d = unit_dir(k as f64);
        }
        dirs
    })
}

fn step_dir(layout: &MapLayout, s: Point, dir: (f64, f64)) -> StepOutcome {
    let candidate = Point::new(s.x + STEP_SIZE * dir.0, s.y + STEP_SIZE * dir.1);
    if !layout.in_bounds(candidate) {
        return StepOutcome {
            state: s,
            reward: 0.0,
            terminal: false,
        };
    }
    let path = Segment {
        a: s,
        b: candidate,
    };
    if layout.walls.iter().any(|w| path.intersects(w)) {
        return StepOutcome {
            state: s,
            reward: 0.0,
            terminal: false,
        };
    }
    for zone in &layout.reward_zones {
        if path.intersects_disc(zone.center, zone.radius) {
            return StepOutcome {
                state: candidate,
                reward: zone.reward,
                terminal: true,
            };
        }
    }
    StepOutcome {
        state: candidate,
        reward: 0.0,
        terminal: false,
    }
}

/// Attempt one fixed-length move from `s` towards `angle_deg`.
///
/// A move whose path would cross a wall or leave the map is blocked:
/// the agent stays in place with zero reward. A move whose path touches
/// a reward zone collects that zone's reward and terminates.
pub fn step(layout: &MapLayout, s: Point, angle_deg: f64) -> Result<StepOutcome> {
    if !layout.is_valid_state(s) {
        return Err(Error::InvalidState {
            x: s.x,
            y: s.y,
            reason: if layout.in_bounds(s) {
                "position lies on a wall".into()
            } else {
                "position out of bounds".into()
            },
        });
    }
    if !angle_deg.is_finite() || !(0.0..360.0).contains(&angle_deg) {
        return Err(Error::InvalidParameter(format!(
            "angle {angle_deg} not in [0, 360)"
        )));
    }
    Ok(step_dir(layout, s, unit_dir(angle_deg)))
}

/// RNG for episode `index` of a dataset: one ChaCha stream per episode,
/// so any episode is reproducible without generating the others.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn rollout_with_rng(
    layout: &MapLayout,
    start: Point,
    rng: &mut ChaCha8Rng,
    max_len: usize,
) -> Result<Episode> {
    if !layout.is_valid_state(start) {
        return Err(Error::InvalidState {
            x: start.x,
            y: start.y,
            reason: "rollout start is not a valid state".into(),
        });
    }
    let dirs = action_dirs();
    let mut ep = Episode {
        x: Vec::with_capacity(max_len + 1),
        y: Vec::with_capacity(max_len + 1),
        action: Vec::with_capacity(max_len),
        reward: Vec::with_capacity(max_len),
        terminated: false,
    };
    let mut s = start;
    ep.x.push(s.x);
    ep.y.push(s.y);
    for _ in 0..max_len {
        let a: u16 = rng.gen_range(0..N_ACTIONS as u16);
        let out = step_dir(layout, s, dirs[a as usize]);
        ep.action.push(a);
        ep.reward.push(out.reward);
        s = out.state;
        ep.x.push(s.x);
        ep.y.push(s.y);
        if out.terminal {
            ep.terminated = true;
            break;
        }
    }
    Ok(ep)
}

/// Run the uniform random policy from `start` until a reward or the
/// length cap.
pub fn rollout(
    layout: &MapLayout,
    start: Point,
    policy_seed: u64,
    max_len: usize,
) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(policy_seed);
    rollout_with_rng(layout, start, &mut rng, max_len)
}

/// Discounted return of one random-policy rollout, without storing the
/// trajectory. Draws actions exactly like `rollout_with_rng`.
pub fn rollout_return(
    layout: &MapLayout,
    start: Point,
    rng: &mut ChaCha8Rng,
    max_len: usize,
    gamma: f64,
) -> f64 {
    let dirs = action_dirs();
    let mut s = start;
    let mut ret = 0.0;
    let mut disc = 1.0;
    for _ in 0..max_len {
        let a: u16 = rng.gen_range(0..N_ACTIONS as u16);
        let out = step_dir(layout, s, dirs[a as usize]);
        ret += disc * out.reward;
        if out.terminal {
            break;
        }
        disc *= gamma;
        s = out.state;
    }
    ret
}

/// FNV-1a content hash of the serialized dataset, for run metadata.
pub fn dataset_hash(ds: &TrajectoryDataset) -> u64 {
    let json = ds.to_json().unwrap_or_default();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Rejection-sample a spawn point: uniform in the spawn rectangle,
/// rejected while on a wall or inside a reward zone.
pub fn sample_spawn(layout: &MapLayout, rng: &mut ChaCha8Rng) -> Result<Point> {
    let sr = &layout.spawn_region;
    for _ in 0..MAX_SPAWN_TRIES {
        let p = Point::new(
            sr.min.x + rng.gen::<f64>() * sr.width(),
            sr.min.y + rng.gen::<f64>() * sr.height(),
        );
        if layout.is_free(p) {
            return Ok(p);
        }
    }
    Err(Error::SpawnRejection(MAX_SPAWN_TRIES))
}

/// Generate `n_episodes` independent rollouts with uniformly sampled
/// spawn points. Episode `i` consumes only the `i`-th seed substream.
pub fn generate_dataset(
    layout: &MapLayout,
    n_episodes: usize,
    max_len: usize,
    gamma: f64,
    seed: u64,
) -> Result<TrajectoryDataset> {
    if n_episodes == 0 {
        return Err(Error::InvalidParameter("n_episodes must be >= 1".into()));
    }
    if max_len == 0 {
        return Err(Error::InvalidParameter("max_len must be >= 1".into()));
    }
    let mut episodes = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let mut rng = episode_rng(seed, i as u64);
        let start = sample_spawn(layout, &mut rng)?;
        episodes.push(rollout_with_rng(layout, start, &mut rng, max_len)?);
    }
    Ok(TrajectoryDataset {
        map_id: layout.map_id.clone(),
        gamma,
        seed,
        n_episodes,
        episodes,
    })
}
