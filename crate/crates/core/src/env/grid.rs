//! GridTrack: a small deterministic top-down racing grid.
//!
//! The car has a cell position, a velocity bucket (cells per tick) and one of
//! four headings (0 = +x, 1 = +y, 2 = -x, 3 = -y). Actions:
//!
//! | id | action   | effect                                          |
//! |----|----------|-------------------------------------------------|
//! | 0  | coast    | speed - 1 (floor 0)                             |
//! | 1  | throttle | speed + 1 (cap `max_speed`)                     |
//! | 2  | left     | heading - 1; skids (crash) at `skid_speed`+     |
//! | 3  | right    | heading + 1; skids (crash) at `skid_speed`+     |
//!
//! After the action the car travels `speed` cells along its heading. Entering a
//! wall or leaving the grid is a crash, entering a goal cell is a success.
//! Per-tick reward is `step_reward` plus `progress_reward` times the number of
//! cells of shortest-path distance to the goal gained. A crash pays
//! `crash_penalty` alone; reaching the goal pays `goal_reward` plus progress.

use super::{
    check_snapshot, config_fingerprint, ActionId, EnumerableMdp, EnvError, EnvKind, EnvSnapshot, Environment,
    GridTrackConfig, SnapshotInner, StateVector, StepOutcome, TerminalKind, MdpStep,
};

const HEADINGS: usize = 4;
const DIRS: [(i64, i64); HEADINGS] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridAction {
    Coast = 0,
    Throttle = 1,
    Left = 2,
    Right = 3,
}

impl From<GridAction> for ActionId {
    fn from(a: GridAction) -> Self {
        ActionId(a as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cell {
    Track,
    Wall,
    Goal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Car {
    x: usize,
    y: usize,
    speed: usize,
    heading: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct GridSim {
    car: Car,
    tick: usize,
    terminal: TerminalKind,
}

#[derive(Clone, Debug)]
pub struct GridTrack {
    cfg: GridTrackConfig,
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    start: (usize, usize),
    /// Shortest 4-neighbour path length from each cell to a goal over track cells.
    goal_distance: Vec<f64>,
    config_id: u64,
    sim: GridSim,
}

impl GridTrack {
    pub fn new(cfg: GridTrackConfig) -> Result<Self, EnvError> {
        let height = cfg.layout.len();
        let width = cfg.layout.first().map(|r| r.chars().count()).unwrap_or(0);
        if height == 0 || width == 0 {
            return Err(EnvError::InvalidConfig("empty GridTrack layout".into()));
        }
        if cfg.max_speed == 0 {
            return Err(EnvError::InvalidConfig("max_speed must be at least 1".into()));
        }
        let mut cells = Vec::with_capacity(width * height);
        let mut start = None;
        let mut goals = 0;
        for (y, row) in cfg.layout.iter().enumerate() {
            if row.chars().count() != width {
                return Err(EnvError::InvalidConfig(format!("layout row {y} has a different width")));
            }
            for (x, ch) in row.chars().enumerate() {
                cells.push(match ch {
                    '.' => Cell::Track,
                    '#' => Cell::Wall,
                    'G' => {
                        goals += 1;
                        Cell::Goal
                    }
                    'S' => {
                        if start.replace((x, y)).is_some() {
                            return Err(EnvError::InvalidConfig("layout has more than one start".into()));
                        }
                        Cell::Track
                    }
                    other => return Err(EnvError::InvalidConfig(format!("unknown layout symbol `{other}`"))),
                });
            }
        }
        let start = start.ok_or_else(|| EnvError::InvalidConfig("layout has no start cell".into()))?;
        if goals == 0 {
            return Err(EnvError::InvalidConfig("layout has no goal cell".into()));
        }
        let states = width * height * (cfg.max_speed + 1) * HEADINGS;
        if states > 2000 {
            return Err(EnvError::InvalidConfig(format!("{states} states exceeds the 2000-state limit")));
        }
        let goal_distance = goal_distances(&cells, width, height);
        let config_id = config_fingerprint(&cfg);
        let sim = GridSim {
            car: Car { x: start.0, y: start.1, speed: 0, heading: 0 },
            tick: 0,
            terminal: TerminalKind::None,
        };
        Ok(Self { cfg, width, height, cells, start, goal_distance, config_id, sim })
    }

    pub fn config(&self) -> &GridTrackConfig {
        &self.cfg
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn speeds(&self) -> usize {
        self.cfg.max_speed + 1
    }

    fn cell(&self, x: i64, y: i64) -> Cell {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            Cell::Wall
        } else {
            self.cells[y as usize * self.width + x as usize]
        }
    }

    /// Cells to the nearest goal; cells cut off from every goal count as one past the farthest reachable cell.
    pub fn goal_distance(&self, x: usize, y: usize) -> f64 {
        self.goal_distance[y * self.width + x]
    }

    fn progress(&self, from: &Car, to: &Car) -> f64 {
        self.cfg.progress_reward * (self.goal_distance(from.x, from.y) - self.goal_distance(to.x, to.y))
    }

    pub fn is_track(&self, x: usize, y: usize) -> bool {
        self.cell(x as i64, y as i64) == Cell::Track
    }

    /// One tick of the rules, ignoring the tick cap.
    fn advance(&self, car: Car, action: usize) -> (Car, f64, TerminalKind) {
        let mut next = car;
        match action {
            0 => next.speed = car.speed.saturating_sub(1),
            1 => next.speed = (car.speed + 1).min(self.cfg.max_speed),
            2 | 3 => {
                if car.speed >= self.cfg.skid_speed {
                    return (car, self.cfg.crash_penalty, TerminalKind::Crash);
                }
                next.heading = if action == 2 { (car.heading + HEADINGS - 1) % HEADINGS } else { (car.heading + 1) % HEADINGS };
            }
            _ => unreachable!("action validated by caller"),
        }
        let (dx, dy) = DIRS[next.heading];
        for _ in 0..next.speed {
            let nx = next.x as i64 + dx;
            let ny = next.y as i64 + dy;
            match self.cell(nx, ny) {
                Cell::Wall => return (next, self.cfg.crash_penalty, TerminalKind::Crash),
                Cell::Goal => {
                    next.x = nx as usize;
                    next.y = ny as usize;
                    return (next, self.cfg.goal_reward + self.progress(&car, &next), TerminalKind::Success);
                }
                Cell::Track => {
                    next.x = nx as usize;
                    next.y = ny as usize;
                }
            }
        }
        (next, self.cfg.step_reward + self.progress(&car, &next), TerminalKind::None)
    }

    fn encode(car: &Car) -> StateVector {
        StateVector(vec![car.x as f64, car.y as f64, car.speed as f64, car.heading as f64])
    }

    fn decode(&self, s: &StateVector) -> Option<Car> {
        if s.dim() != 4 {
            return None;
        }
        let as_int = |v: f64, hi: usize| -> Option<usize> {
            (v >= 0.0 && v.fract() == 0.0 && (v as usize) < hi).then_some(v as usize)
        };
        Some(Car {
            x: as_int(s[0], self.width)?,
            y: as_int(s[1], self.height)?,
            speed: as_int(s[2], self.speeds())?,
            heading: as_int(s[3], HEADINGS)?,
        })
    }

    /// Mixed-radix index over `[x, y, speed, heading]`, last dimension fastest.
    fn index_of(&self, car: &Car) -> usize {
        ((car.x * self.height + car.y) * self.speeds() + car.speed) * HEADINGS + car.heading
    }

    fn car_at(&self, index: usize) -> Car {
        let heading = index % HEADINGS;
        let rest = index / HEADINGS;
        let speed = rest % self.speeds();
        let cell = rest / self.speeds();
        Car { x: cell / self.height, y: cell % self.height, speed, heading }
    }

    /// Places the car at an arbitrary live state with the clock at 0 (exploring starts).
    pub fn set_state(&mut self, s: &StateVector) -> Result<(), EnvError> {
        let car = self
            .decode(s)
            .filter(|c| self.is_track(c.x, c.y))
            .ok_or_else(|| EnvError::InvalidConfig(format!("{:?} is not a live GridTrack state", s.0)))?;
        self.sim = GridSim { car, tick: 0, terminal: TerminalKind::None };
        Ok(())
    }

    pub fn start_cell(&self) -> (usize, usize) {
        self.start
    }
}

fn goal_distances(cells: &[Cell], width: usize, height: usize) -> Vec<f64> {
    let mut dist = vec![usize::MAX; cells.len()];
    let mut queue = std::collections::VecDeque::new();
    for (i, c) in cells.iter().enumerate() {
        if *c == Cell::Goal {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % width) as i64, (i / width) as i64);
        for (dx, dy) in DIRS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                continue;
            }
            let j = ny as usize * width + nx as usize;
            if cells[j] != Cell::Wall && dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    let cut_off = dist.iter().filter(|&&d| d != usize::MAX).max().map_or(0, |d| d + 1);
    dist.into_iter().map(|d| if d == usize::MAX { cut_off } else { d } as f64).collect()
}

impl Environment for GridTrack {
    fn kind(&self) -> EnvKind {
        EnvKind::GridTrack
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn dim_names(&self) -> &'static [&'static str] {
        &["x", "y", "speed", "heading"]
    }

    fn reset(&mut self, _seed: u64) -> StateVector {
        self.sim = GridSim {
            car: Car { x: self.start.0, y: self.start.1, speed: 0, heading: 0 },
            tick: 0,
            terminal: TerminalKind::None,
        };
        Self::encode(&self.sim.car)
    }

    fn step(&mut self, action: ActionId) -> Result<StepOutcome, EnvError> {
        if self.sim.terminal.is_terminal() {
            return Err(EnvError::SteppedTerminal { tick: self.sim.tick });
        }
        if action.0 >= 4 {
            return Err(EnvError::InvalidAction { action: action.0, num_actions: 4 });
        }
        let (car, reward, mut kind) = self.advance(self.sim.car, action.0);
        self.sim.car = car;
        self.sim.tick += 1;
        if kind == TerminalKind::None && self.sim.tick >= self.cfg.tick_cap {
            kind = TerminalKind::Timeout;
        }
        self.sim.terminal = kind;
        Ok(StepOutcome::new(Self::encode(&car), reward, kind))
    }

    fn state(&self) -> StateVector {
        Self::encode(&self.sim.car)
    }

    fn tick(&self) -> usize {
        self.sim.tick
    }

    fn is_terminal(&self) -> bool {
        self.sim.terminal.is_terminal()
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot { config_id: self.config_id, kind: EnvKind::GridTrack, inner: SnapshotInner::Grid(self.sim.clone()) }
    }

    fn restore(&mut self, snap: &EnvSnapshot) -> Result<(), EnvError> {
        check_snapshot(snap, EnvKind::GridTrack, self.config_id)?;
        match &snap.inner {
            SnapshotInner::Grid(sim) => {
                self.sim = sim.clone();
                Ok(())
            }
            SnapshotInner::Lander(_) => unreachable!("kind checked above"),
        }
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }

    fn as_enumerable(&self) -> Option<&dyn EnumerableMdp> {
        Some(self)
    }
}

impl EnumerableMdp for GridTrack {
    fn num_states(&self) -> usize {
        self.width * self.height * self.speeds() * HEADINGS
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn radices(&self) -> Vec<usize> {
        vec![self.width, self.height, self.speeds(), HEADINGS]
    }

    fn is_live(&self, index: usize) -> bool {
        let car = self.car_at(index);
        self.is_track(car.x, car.y)
    }

    fn transition(&self, index: usize, action: usize) -> MdpStep {
        let (car, reward, kind) = self.advance(self.car_at(index), action);
        MdpStep { reward, next: (!kind.is_terminal()).then(|| self.index_of(&car)) }
    }

    fn state_index(&self, s: &StateVector) -> Option<usize> {
        self.decode(s).map(|c| self.index_of(&c))
    }

    fn state_at(&self, index: usize) -> StateVector {
        Self::encode(&self.car_at(index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track() -> GridTrack {
        GridTrack::new(GridTrackConfig::default()).unwrap()
    }

    #[test]
    fn reset_is_start_cell() {
        let mut env = track();
        assert_eq!(env.reset(0).0, vec![0.0, 0.0, 0.0, 0.0]);
        assert_eq!(env.reset(0), env.reset(0));
        assert_eq!(env.tick(), 0);
    }

    #[test]
    fn wall_is_crash_with_penalty() {
        let mut env = track();
        env.reset(0);
        // heading +x at speed 0; turning left points at the grid edge
        env.step(GridAction::Left.into()).unwrap();
        let out = env.step(GridAction::Throttle.into()).unwrap();
        assert_eq!(out.terminal_kind, TerminalKind::Crash);
        assert_eq!(out.reward, -10.0);
        assert!(out.terminal);
        assert!(matches!(env.step(ActionId(0)), Err(EnvError::SteppedTerminal { .. })));
    }

    #[test]
    fn skid_at_speed() {
        let mut env = track();
        env.reset(0);
        env.step(GridAction::Throttle.into()).unwrap();
        env.step(GridAction::Throttle.into()).unwrap();
        let out = env.step(GridAction::Right.into()).unwrap();
        assert_eq!(out.terminal_kind, TerminalKind::Crash);
    }

    #[test]
    fn timeout_at_tick_cap() {
        let mut env = track();
        env.reset(0);
        let mut last = None;
        for _ in 0..100 {
            last = Some(env.step(GridAction::Coast.into()).unwrap());
        }
        let last = last.unwrap();
        assert_eq!(last.terminal_kind, TerminalKind::Timeout);
        assert_eq!(last.reward, -0.05);
    }

    #[test]
    fn progress_shaping() {
        let mut env = track();
        assert_eq!(env.goal_distance(0, 0), 27.0);
        assert_eq!(env.goal_distance(11, 7), 0.0);
        // first cell of the wall block has no distance of its own
        assert_eq!(env.goal_distance(0, 2), 28.0);
        env.reset(0);
        let out = env.step(GridAction::Throttle.into()).unwrap();
        assert!((out.reward - (-0.05 + 0.1)).abs() < 1e-12);
        let mut cfg = GridTrackConfig::default();
        cfg.progress_reward = 0.0;
        let mut flat = GridTrack::new(cfg).unwrap();
        flat.reset(0);
        assert_eq!(flat.step(GridAction::Throttle.into()).unwrap().reward, -0.05);
    }

    #[test]
    fn index_roundtrip_and_size() {
        let env = track();
        assert!(env.num_states() <= 2000);
        for i in 0..env.num_states() {
            assert_eq!(env.state_index(&env.state_at(i)), Some(i));
        }
        assert_eq!(env.state_index(&StateVector(vec![0.5, 0.0, 0.0, 0.0])), None);
    }

    #[test]
    fn rejects_bad_layouts() {
        let mut cfg = GridTrackConfig::default();
        cfg.layout = vec!["S..".into(), "..".into()];
        assert!(GridTrack::new(cfg).is_err());
        let mut cfg = GridTrackConfig::default();
        cfg.layout = vec!["...G".into()];
        assert!(GridTrack::new(cfg).is_err());
    }
}
