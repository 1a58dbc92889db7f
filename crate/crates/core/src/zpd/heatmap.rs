use std::io::Write;

use serde::Serialize;

use super::{Learnability, ZpdError};
use crate::env::{make_env, EnvConfig, StateVector};

/// Two state dimensions to sweep; all other dimensions stay at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisSpec {
    pub i: usize,
    pub j: usize,
    pub i_values: Vec<f64>,
    pub j_values: Vec<f64>,
    pub base: StateVector,
}

impl AxisSpec {
    /// `n` evenly spaced values from `lo` to `hi` inclusive.
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        match n {
            0 => vec![],
            1 => vec![lo],
            _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
        }
    }

    /// Axes named by state dimension (e.g. `("x", "y")`) over the natural range of
    /// each dimension. Integer dimensions take every value; continuous ones get
    /// `resolution` points. The base state is the environment's reset state.
    pub fn for_config(cfg: &EnvConfig, names: (&str, &str), resolution: usize) -> Result<Self, ZpdError> {
        let mut env = make_env(cfg).map_err(|e| ZpdError::Checkpoint(e.to_string()))?;
        let base = env.reset(0);
        let dims = env.dim_names();
        let find = |n: &str| dims.iter().position(|d| *d == n).ok_or_else(|| ZpdError::UnknownAxis(n.to_string()));
        let (i, j) = (find(names.0)?, find(names.1)?);
        let range = |d: usize| -> Vec<f64> {
            match cfg {
                EnvConfig::GridTrack(c) => {
                    let n = match d {
                        0 => c.layout.first().map(|r| r.chars().count()).unwrap_or(1),
                        1 => c.layout.len(),
                        2 => c.max_speed + 1,
                        _ => 4,
                    };
                    (0..n).map(|v| v as f64).collect()
                }
                EnvConfig::MiniLander(c) => match d {
                    0 => Self::linspace(-c.world_half_width, c.world_half_width, resolution),
                    1 => Self::linspace(0.0, c.ceiling, resolution),
                    2 | 3 => Self::linspace(-c.velocity_scale, c.velocity_scale, resolution),
                    4 => Self::linspace(-c.crash_tilt, c.crash_tilt, resolution),
                    5 => Self::linspace(-1.0, 1.0, resolution),
                    _ => vec![0.0, 1.0],
                },
            }
        };
        Ok(Self { i, j, i_values: range(i), j_values: range(j), base })
    }
}

/// Learnability sampled on a regular grid; `phi[a][b]` is at `(i_values[a], j_values[b])`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Heatmap {
    pub axes: [usize; 2],
    pub i_values: Vec<f64>,
    pub j_values: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn len(&self) -> usize {
        self.i_values.len() * self.j_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(value_i, value_j, phi)` in row-major order.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.i_values
            .iter()
            .enumerate()
            .flat_map(move |(a, &vi)| self.j_values.iter().enumerate().map(move |(b, &vj)| (vi, vj, self.phi[a][b])))
    }

    /// Grid cell with the highest learnability (first one on ties).
    pub fn argmax(&self) -> Option<(f64, f64, f64)> {
        self.rows().fold(None, |best, r| match best {
            Some(b) if b.2 >= r.2 => Some(b),
            _ => Some(r),
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ZpdError> {
        let io = |e: csv::Error| ZpdError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dim_i", "dim_j", "phi"]).map_err(io)?;
        for (vi, vj, phi) in self.rows() {
            w.serialize((vi, vj, phi)).map_err(io)?;
        }
        w.flush().map_err(|e| ZpdError::Io(e.to_string()))
    }
}

/// Evaluates learnability over the grid described by `axes`.
pub fn heatmap_grid(est: &dyn Learnability, state_dim: usize, axes: &AxisSpec) -> Result<Heatmap, ZpdError> {
    for axis in [axes.i, axes.j] {
        if axis >= state_dim {
            return Err(ZpdError::AxisOutOfRange { axis, dim: state_dim });
        }
    }
    if axes.base.dim() != state_dim {
        return Err(ZpdError::DimensionMismatch { expected: state_dim, found: axes.base.dim() });
    }
    if axes.i == axes.j || axes.i_values.is_empty() || axes.j_values.is_empty() {
        return Err(ZpdError::DegenerateAxes);
    }
    let mut s = axes.base.clone();
    let phi = axes
        .i_values
        .iter()
        .map(|&vi| {
            axes.j_values
                .iter()
                .map(|&vj| {
                    s.0[axes.i] = vi;
                    s.0[axes.j] = vj;
                    est.phi(&s)
                })
                .collect()
        })
        .collect();
    Ok(Heatmap { axes: [axes.i, axes.j], i_values: axes.i_values.clone(), j_values: axes.j_values.clone(), phi })
}
