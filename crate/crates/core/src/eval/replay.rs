//! Open-loop replay of recorded trajectories under the servo model.

use super::EvalError;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// Servo to each commanded joint target.
    Position,
    /// Integrate velocities `(target_t - achieved_{t-1}) / dt` taken from
    /// the recording, without feedback from the simulated state.
    Velocity,
}

impl std::str::FromStr for ReplayMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "position" => Ok(Self::Position),
            "velocity" => Ok(Self::Velocity),
            other => Err(EvalError::Config(format!("unknown replay mode `{other}`"))),
        }
    }
}

/// A recorded run: at each time, the commanded joint targets and the joint
/// values the robot reached after that command.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub time: Vec<f64>,
    pub commanded: Vec<Vec<f64>>,
    pub achieved: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub mode: ReplayMode,
    pub time: Vec<f64>,
    /// `|simulated - achieved|` per step and joint.
    pub errors: Vec<Vec<f64>>,
}

impl Recording {
    pub fn validate(&self) -> Result<f64, EvalError> {
        let n = self.time.len();
        if n < 2 {
            return Err(EvalError::Config("recording needs at least two rows".into()));
        }
        if self.commanded.len() != n || self.achieved.len() != n {
            return Err(EvalError::LengthMismatch(format!(
                "{} times, {} commands, {} achieved rows",
                n,
                self.commanded.len(),
                self.achieved.len()
            )));
        }
        let dof = self.commanded[0].len();
        if let Some(i) = (0..n).find(|&i| self.commanded[i].len() != dof || self.achieved[i].len() != dof) {
            return Err(EvalError::LengthMismatch(format!("row {i} joint count differs from {dof}")));
        }
        let dt = self.time[1] - self.time[0];
        if !(dt > 0.0) {
            return Err(EvalError::Config("time must increase".into()));
        }
        if let Some(i) = (1..n).find(|&i| ((self.time[i] - self.time[i - 1]) - dt).abs() > 1e-6 * dt.max(1.0)) {
            return Err(EvalError::Config(format!("inconsistent time step at row {i}")));
        }
        Ok(dt)
    }

    /// CSV with header `time,cmd_0..cmd_{n-1},q_0..q_{n-1}`.
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| EvalError::Io(e.to_string()))?.clone();
        let ncmd = headers.iter().filter(|h| h.starts_with("cmd_")).count();
        let nq = headers.iter().filter(|h| h.starts_with("q_")).count();
        if ncmd != nq || ncmd == 0 || headers.get(0) != Some("time") || headers.len() != 1 + 2 * ncmd {
            return Err(EvalError::LengthMismatch(format!(
                "header needs time, then equal cmd_* and q_* columns (got {ncmd} and {nq})"
            )));
        }
        let mut rec = Recording {
            time: Vec::new(),
            commanded: Vec::new(),
            achieved: Vec::new(),
        };
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| EvalError::LengthMismatch(format!("row {}: {e}", i + 1)))?;
            let vals: Vec<f64> = row
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| EvalError::Io(format!("row {}: {e}", i + 1)))?;
            rec.time.push(vals[0]);
            rec.commanded.push(vals[1..1 + ncmd].to_vec());
            rec.achieved.push(vals[1 + ncmd..].to_vec());
        }
        Ok(rec)
    }

    pub fn to_csv(&self) -> String {
        let dof = self.commanded.first().map_or(0, Vec::len);
        let mut out = String::from("time");
        (0..dof).for_each(|j| write!(out, ",cmd_{j}").unwrap());
        (0..dof).for_each(|j| write!(out, ",q_{j}").unwrap());
        out.push('\n');
        for i in 0..self.time.len() {
            write!(out, "{}", self.time[i]).unwrap();
            self.commanded[i].iter().chain(&self.achieved[i]).for_each(|v| write!(out, ",{v}").unwrap());
            out.push('\n');
        }
        out
    }
}

/// Replays `rec` open loop from its first achieved state. `v_max` bounds
/// the per-step joint motion in both modes.
pub fn replay_error_analysis(rec: &Recording, mode: ReplayMode, v_max: f64) -> Result<ErrorCurve, EvalError> {
    let dt = rec.validate()?;
    let step = v_max * dt;
    let mut q = rec.achieved[0].clone();
    let mut errors = vec![vec![0.0; q.len()]];
    for t in 1..rec.time.len() {
        for j in 0..q.len() {
            let delta = match mode {
                ReplayMode::Position => rec.commanded[t][j] - q[j],
                ReplayMode::Velocity => rec.commanded[t][j] - rec.achieved[t - 1][j],
            };
            q[j] += delta.clamp(-step, step);
        }
        errors.push(q.iter().zip(&rec.achieved[t]).map(|(s, a)| (s - a).abs()).collect());
    }
    Ok(ErrorCurve {
        mode,
        time: rec.time.clone(),
        errors,
    })
}

impl ErrorCurve {
    pub fn mean_error(&self, step: usize) -> f64 {
        let e = &self.errors[step];
        e.iter().sum::<f64>() / e.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let dof = self.errors.first().map_or(0, Vec::len);
        let mut out = String::from("time,mode");
        (0..dof).for_each(|j| write!(out, ",err_{j}").unwrap());
        out.push_str(",mean\n");
        let mode = match self.mode {
            ReplayMode::Position => "position",
            ReplayMode::Velocity => "velocity",
        };
        for (i, e) in self.errors.iter().enumerate() {
            write!(out, "{},{mode}", self.time[i]).unwrap();
            e.iter().for_each(|v| write!(out, ",{v}").unwrap());
            writeln!(out, ",{}", self.mean_error(i)).unwrap();
        }
        out
    }
}
