//! MiniLander: planar rigid-body lander with semi-implicit Euler integration.
//!
//! State: `[x, y, vx, vy, angle, angular_velocity, left_contact, right_contact]`
//! with the pad centred at `x = 0` on the ground line `y = 0`.
//! Actions: 0 none, 1 left engine, 2 right engine, 3 main engine.
//!
//! Reward is potential-based: each tick pays the change of
//! `-proximity·dist - velocity·speed - tilt·|angle| + leg·contacts`
//! minus the fuel cost of the fired engine, plus `crash_penalty` or
//! `success_bonus` on the terminal tick.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_snapshot, config_fingerprint, ActionId, EnvError, EnvKind, EnvSnapshot, Environment, MiniLanderConfig,
    SnapshotInner, StateVector, StepOutcome, TerminalKind,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LanderAction {
    None = 0,
    Left = 1,
    Right = 2,
    Main = 3,
}

impl From<LanderAction> for ActionId {
    fn from(a: LanderAction) -> Self {
        ActionId(a as usize)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LanderSim {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    angle: f64,
    spin: f64,
    legs: [bool; 2],
    tick: usize,
    terminal: TerminalKind,
    prev_shaping: f64,
    rng: ChaCha8Rng,
}

#[derive(Clone, Debug)]
pub struct MiniLander {
    cfg: MiniLanderConfig,
    config_id: u64,
    sim: LanderSim,
}

impl MiniLander {
    pub fn new(cfg: MiniLanderConfig) -> Result<Self, EnvError> {
        let positive = [
            ("dt", cfg.dt),
            ("spawn_altitude", cfg.spawn_altitude),
            ("velocity_scale", cfg.velocity_scale),
            ("crash_tilt", cfg.crash_tilt),
            ("world_half_width", cfg.world_half_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(EnvError::InvalidConfig(format!("{name} must be positive")));
        }
        if cfg.tick_cap == 0 {
            return Err(EnvError::InvalidConfig("tick_cap must be at least 1".into()));
        }
        let config_id = config_fingerprint(&cfg);
        let mut env = Self { sim: Self::spawn(&cfg, 0), cfg, config_id };
        env.sim.prev_shaping = env.shaping_of(&env.sim);
        Ok(env)
    }

    pub fn config(&self) -> &MiniLanderConfig {
        &self.cfg
    }

    fn spawn(cfg: &MiniLanderConfig, seed: u64) -> LanderSim {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = if cfg.spawn_x_range > 0.0 { rng.gen_range(-cfg.spawn_x_range..=cfg.spawn_x_range) } else { 0.0 };
        let spin =
            if cfg.spawn_spin_range > 0.0 { rng.gen_range(-cfg.spawn_spin_range..=cfg.spawn_spin_range) } else { 0.0 };
        LanderSim {
            x,
            y: cfg.spawn_altitude,
            vx: 0.0,
            vy: 0.0,
            angle: 0.0,
            spin,
            legs: [false, false],
            tick: 0,
            terminal: TerminalKind::None,
            prev_shaping: 0.0,
            rng,
        }
    }

    /// Shaping potential of a simulator state.
    pub fn shaping(&self, s: &StateVector) -> f64 {
        let c = &self.cfg;
        let dist = ((s[0] / c.spawn_altitude).powi(2) + (s[1] / c.spawn_altitude).powi(2)).sqrt();
        let speed = (s[2] * s[2] + s[3] * s[3]).sqrt() / c.velocity_scale;
        -c.proximity_weight * dist - c.velocity_weight * speed - c.tilt_weight * s[4].abs() + c.leg_weight * (s[6] + s[7])
    }

    fn shaping_of(&self, sim: &LanderSim) -> f64 {
        self.shaping(&Self::encode(sim))
    }

    fn encode(sim: &LanderSim) -> StateVector {
        StateVector(vec![
            sim.x,
            sim.y,
            sim.vx,
            sim.vy,
            sim.angle,
            sim.spin,
            if sim.legs[0] { 1.0 } else { 0.0 },
            if sim.legs[1] { 1.0 } else { 0.0 },
        ])
    }

    /// Heights of the left and right leg tips above the ground.
    fn leg_heights(&self, y: f64, angle: f64) -> [f64; 2] {
        let (sin, cos) = angle.sin_cos();
        let (span, drop) = (self.cfg.leg_span, self.cfg.leg_drop);
        [y - span * sin - drop * cos, y + span * sin - drop * cos]
    }

    fn integrate(&self, sim: &mut LanderSim, action: usize) -> (f64, TerminalKind) {
        let c = &self.cfg;
        let (sin, cos) = sim.angle.sin_cos();
        let gain = if c.engine_noise > 0.0 && action != 0 {
            1.0 + c.engine_noise * (sim.rng.gen::<f64>() * 2.0 - 1.0) * 3f64.sqrt()
        } else {
            1.0
        };
        let (side, main) = (c.side_accel * gain, c.main_accel * gain);
        let (mut ax, mut ay) = (0.0, -c.gravity);
        let mut alpha = -c.angular_damping * sim.spin;
        let fuel = match action {
            1 => {
                ax += side * cos;
                ay += side * sin;
                alpha -= c.side_torque;
                c.side_fuel_cost
            }
            2 => {
                ax -= side * cos;
                ay -= side * sin;
                alpha += c.side_torque;
                c.side_fuel_cost
            }
            3 => {
                ax -= main * sin;
                ay += main * cos;
                c.main_fuel_cost
            }
            _ => 0.0,
        };
        sim.vx += ax * c.dt;
        sim.vy += ay * c.dt;
        sim.spin += alpha * c.dt;
        sim.x += sim.vx * c.dt;
        sim.y += sim.vy * c.dt;
        sim.angle += sim.spin * c.dt;

        let tips = self.leg_heights(sim.y, sim.angle);
        let lowest = tips[0].min(tips[1]);
        let mut kind = TerminalKind::None;
        if lowest <= 0.0 || sim.y <= c.hull_clearance {
            let impact = (sim.vx * sim.vx + sim.vy * sim.vy).sqrt();
            if sim.y <= c.hull_clearance || impact > c.crash_speed {
                kind = TerminalKind::Crash;
            } else {
                sim.y -= lowest.min(0.0);
                sim.vy = sim.vy.max(0.0);
                let relax = (c.ground_levelling * c.dt).min(1.0);
                sim.angle -= sim.angle * relax;
                sim.spin *= 1.0 - relax;
                // levelling lifts the low leg; keep the body seated on the ground
                let tips = self.leg_heights(sim.y, sim.angle);
                sim.y -= tips[0].min(tips[1]);
            }
        }
        let tips = self.leg_heights(sim.y, sim.angle);
        let touch = c.leg_contact_tolerance.max(1e-9);
        sim.legs = [tips[0] <= touch, tips[1] <= touch];

        if kind == TerminalKind::None
            && (sim.angle.abs() > c.crash_tilt || sim.x.abs() > c.world_half_width || sim.y > c.ceiling)
        {
            kind = TerminalKind::Crash;
        }
        if kind == TerminalKind::None
            && sim.legs[0]
            && sim.legs[1]
            && sim.vx.abs() < c.success_speed
            && sim.vy.abs() < c.success_speed
        {
            kind = TerminalKind::Success;
        }
        (fuel, kind)
    }
}

impl Environment for MiniLander {
    fn kind(&self) -> EnvKind {
        EnvKind::MiniLander
    }

    fn state_dim(&self) -> usize {
        8
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn dim_names(&self) -> &'static [&'static str] {
        &["x", "y", "vx", "vy", "angle", "spin", "left_leg", "right_leg"]
    }

    fn reset(&mut self, seed: u64) -> StateVector {
        self.sim = Self::spawn(&self.cfg, seed);
        self.sim.prev_shaping = self.shaping_of(&self.sim);
        Self::encode(&self.sim)
    }

    fn step(&mut self, action: ActionId) -> Result<StepOutcome, EnvError> {
        if self.sim.terminal.is_terminal() {
            return Err(EnvError::SteppedTerminal { tick: self.sim.tick });
        }
        if action.0 >= 4 {
            return Err(EnvError::InvalidAction { action: action.0, num_actions: 4 });
        }
        let mut sim = self.sim.clone();
        let (fuel, mut kind) = self.integrate(&mut sim, action.0);
        sim.tick += 1;
        if kind == TerminalKind::None && sim.tick >= self.cfg.tick_cap {
            kind = TerminalKind::Timeout;
        }
        let shaping = self.shaping_of(&sim);
        let mut reward = shaping - sim.prev_shaping - fuel;
        match kind {
            TerminalKind::Crash => reward += self.cfg.crash_penalty,
            TerminalKind::Success => reward += self.cfg.success_bonus,
            _ => {}
        }
        sim.prev_shaping = shaping;
        sim.terminal = kind;
        self.sim = sim;
        Ok(StepOutcome::new(Self::encode(&self.sim), reward, kind))
    }

    fn state(&self) -> StateVector {
        Self::encode(&self.sim)
    }

    fn tick(&self) -> usize {
        self.sim.tick
    }

    fn is_terminal(&self) -> bool {
        self.sim.terminal.is_terminal()
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            config_id: self.config_id,
            kind: EnvKind::MiniLander,
            inner: SnapshotInner::Lander(Box::new(self.sim.clone())),
        }
    }

    fn restore(&mut self, snap: &EnvSnapshot) -> Result<(), EnvError> {
        check_snapshot(snap, EnvKind::MiniLander, self.config_id)?;
        match &snap.inner {
            SnapshotInner::Lander(sim) => {
                self.sim = (**sim).clone();
                Ok(())
            }
            SnapshotInner::Grid(_) => unreachable!("kind checked above"),
        }
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lander() -> MiniLander {
        MiniLander::new(MiniLanderConfig::default()).unwrap()
    }

    #[test]
    fn spawn_is_at_altitude_and_at_rest() {
        let mut env = lander();
        for seed in [0, 1, 99] {
            let s = env.reset(seed);
            assert_eq!(s[1], 10.0);
            assert_eq!((s[2], s[3]), (0.0, 0.0));
            assert_eq!((s[6], s[7]), (0.0, 0.0));
            assert_eq!(env.reset(seed), s);
        }
    }

    #[test]
    fn free_fall_euler_step() {
        let mut env = lander();
        env.reset(0);
        let out = env.step(LanderAction::None.into()).unwrap();
        assert!((out.next_state[3] + 0.08).abs() < 1e-12);
    }

    #[test]
    fn proximity_term_is_sign_correct() {
        let env = lander();
        let base = StateVector(vec![3.0, 6.0, 0.4, -0.2, 0.1, 0.0, 0.0, 0.0]);
        let mut closer = base.clone();
        closer.0[0] = 2.0;
        closer.0[1] = 5.0;
        assert!(env.shaping(&closer) >= env.shaping(&base));
        let mut slower = base.clone();
        slower.0[2] = 0.1;
        assert!(env.shaping(&slower) >= env.shaping(&base));
        let mut level = base.clone();
        level.0[4] = 0.0;
        assert!(env.shaping(&level) >= env.shaping(&base));
        let mut leg = base.clone();
        leg.0[6] = 1.0;
        assert!(env.shaping(&leg) >= env.shaping(&base));
    }

    #[test]
    fn fast_impact_is_crash() {
        let mut env = lander();
        env.reset(3);
        let mut out = None;
        for _ in 0..400 {
            let o = env.step(LanderAction::None.into()).unwrap();
            let done = o.terminal;
            out = Some(o);
            if done {
                break;
            }
        }
        let out = out.unwrap();
        assert_eq!(out.terminal_kind, TerminalKind::Crash);
        assert!(out.reward < -50.0);
    }
}
