use std::io::Write;

use serde::Serialize;

use super::{ActionId, StepOutcome, StateVector};

#[derive(Serialize)]
struct StepLine<'a> {
    t: usize,
    s: &'a [f64],
    a: usize,
    r: f64,
    terminal_kind: &'static str,
}

/// Writes one JSON object per step: `{t, s:[...], a, r, terminal_kind}`.
pub struct TrajectoryLogger<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryLogger<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    /// `s` is the state the action was taken in.
    pub fn log(&mut self, t: usize, s: &StateVector, a: ActionId, outcome: &StepOutcome) -> std::io::Result<()> {
        let line = StepLine { t, s: s.as_slice(), a: a.0, r: outcome.reward, terminal_kind: outcome.terminal_kind.as_str() };
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
