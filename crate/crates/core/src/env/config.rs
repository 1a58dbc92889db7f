use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvError, EnvKind};

/// Environment configuration as stored in the `[env]` table of a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    #[serde(alias = "grid")]
    GridTrack(GridTrackConfig),
    #[serde(alias = "lander")]
    MiniLander(MiniLanderConfig),
}

impl EnvConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::GridTrack(_) => EnvKind::GridTrack,
            EnvConfig::MiniLander(_) => EnvKind::MiniLander,
        }
    }

    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::GridTrack => EnvConfig::GridTrack(GridTrackConfig::default()),
            EnvKind::MiniLander => EnvConfig::MiniLander(MiniLanderConfig::default()),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EnvError> {
        toml::from_str(text).map_err(|e| EnvError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

/// GridTrack rules. Layout rows use `.` for track, `#` for wall, `S` for the
/// start cell and `G` for goal cells; everything outside the grid is wall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridTrackConfig {
    pub layout: Vec<String>,
    /// Highest velocity bucket (cells per tick).
    pub max_speed: usize,
    /// Steering at this speed or above skids off the track.
    pub skid_speed: usize,
    pub step_reward: f64,
    /// Paid per cell of shortest-path distance to the goal gained in a tick
    /// (negative when moving away). Potential-based, so optimal policies are unchanged.
    pub progress_reward: f64,
    pub crash_penalty: f64,
    pub goal_reward: f64,
    pub tick_cap: usize,
}

pub const DEFAULT_GRID_LAYOUT: [&str; 8] = [
    "S.........##",
    "..........##",
    "########..##",
    "########..##",
    "##........##",
    "##........##",
    "##..########",
    "##........GG",
];

impl Default for GridTrackConfig {
    fn default() -> Self {
        Self {
            layout: DEFAULT_GRID_LAYOUT.iter().map(|r| r.to_string()).collect(),
            max_speed: 2,
            skid_speed: 2,
            step_reward: -0.05,
            progress_reward: 0.1,
            crash_penalty: -10.0,
            goal_reward: 10.0,
            tick_cap: 100,
        }
    }
}

/// MiniLander dynamics and reward shaping constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiniLanderConfig {
    pub dt: f64,
    pub gravity: f64,
    pub main_accel: f64,
    pub side_accel: f64,
    /// Angular acceleration produced by a side engine (rad/s^2).
    pub side_torque: f64,
    /// Relative std-dev of engine thrust dispersion (0 disables).
    pub engine_noise: f64,
    /// Linear angular-velocity damping (1/s).
    pub angular_damping: f64,
    pub spawn_altitude: f64,
    /// Spawn x is uniform in `[-spawn_x_range, spawn_x_range]`.
    pub spawn_x_range: f64,
    /// Initial angular velocity is uniform in `[-spawn_spin_range, spawn_spin_range]`.
    pub spawn_spin_range: f64,
    pub tick_cap: usize,
    pub world_half_width: f64,
    pub ceiling: f64,
    /// Leg tips sit at body-frame offsets `(+-leg_span, -leg_drop)`.
    pub leg_span: f64,
    pub leg_drop: f64,
    /// A leg tip within this height of the ground counts as touching.
    pub leg_contact_tolerance: f64,
    /// The hull touches the ground when the body centre is below this height.
    pub hull_clearance: f64,
    /// Touchdown speed above which contact is a crash.
    pub crash_speed: f64,
    /// Tilt magnitude (rad) beyond which the lander is lost.
    pub crash_tilt: f64,
    /// Both legs down with |vx| and |vy| below this is a landing.
    pub success_speed: f64,
    /// Angular relaxation toward level while a leg is on the ground (1/s).
    pub ground_levelling: f64,
    pub proximity_weight: f64,
    pub velocity_weight: f64,
    pub tilt_weight: f64,
    pub leg_weight: f64,
    pub main_fuel_cost: f64,
    pub side_fuel_cost: f64,
    pub crash_penalty: f64,
    pub success_bonus: f64,
    /// Velocity normalization for the velocity shaping term.
    pub velocity_scale: f64,
}

impl Default for MiniLanderConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            gravity: 1.6,
            main_accel: 3.0,
            side_accel: 0.6,
            side_torque: 1.2,
            engine_noise: 0.0,
            angular_damping: 0.5,
            spawn_altitude: 10.0,
            spawn_x_range: 2.0,
            spawn_spin_range: 0.2,
            tick_cap: 400,
            world_half_width: 8.0,
            ceiling: 14.0,
            leg_span: 0.5,
            leg_drop: 0.5,
            leg_contact_tolerance: 0.02,
            hull_clearance: 0.2,
            crash_speed: 1.5,
            crash_tilt: 0.8,
            success_speed: 0.3,
            ground_levelling: 4.0,
            proximity_weight: 140.0,
            velocity_weight: 100.0,
            tilt_weight: 100.0,
            leg_weight: 10.0,
            main_fuel_cost: 0.15,
            side_fuel_cost: 0.015,
            crash_penalty: -100.0,
            success_bonus: 100.0,
            velocity_scale: 5.0,
        }
    }
}
