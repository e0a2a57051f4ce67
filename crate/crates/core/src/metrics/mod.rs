//! Real-vs-sim faithfulness metrics and report assembly.

mod report;
mod table;

pub use report::{build_report, write_report, EnvironmentMetrics, FaithfulnessReport, MisrankedPair, DEFAULT_BOOTSTRAP, BOOTSTRAP_SEED};
pub use table::{ingest_scores, read_scores, suite_rows, Cell, ScoreRow, ScoreTable, Source};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least 2 policies, got {0}")]
    TooFew(usize),
    #[error("length mismatch: {0} real vs {1} sim")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: {0} scores are constant")]
    Undefined(&'static str),
    #[error("non-finite score")]
    NonFinite,
    #[error("{file} row {row}: score {score} outside [0, 1]")]
    ScoreRange { file: String, row: usize, score: f64 },
    #[error("{file} row {row}: {message}")]
    Row { file: String, row: usize, message: String },
    #[error("{file} row {row}: conflicting duplicate for ({policy}, {environment}, {kind})")]
    Conflict {
        file: String,
        row: usize,
        policy: String,
        environment: String,
        kind: String,
    },
    #[error("invalid table: {0}")]
    Table(String),
    #[error("io: {0}")]
    Io(String),
}

fn check_pair(real: &[f64], sim: &[f64]) -> Result<(), MetricsError> {
    if real.len() != sim.len() {
        return Err(MetricsError::LengthMismatch(real.len(), sim.len()));
    }
    if real.len() < 2 {
        return Err(MetricsError::TooFew(real.len()));
    }
    if real.iter().chain(sim).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation between real and simulated scores.
pub fn pearson(real: &[f64], sim: &[f64]) -> Result<f64, MetricsError> {
    check_pair(real, sim)?;
    // exact constancy, not a variance threshold: the mean of equal floats
    // need not equal them
    if real.iter().all(|v| *v == real[0]) {
        return Err(MetricsError::Undefined("real"));
    }
    if sim.iter().all(|v| *v == sim[0]) {
        return Err(MetricsError::Undefined("sim"));
    }
    let (mr, ms) = (mean(real), mean(sim));
    let (mut cov, mut vr, mut vs) = (0.0, 0.0, 0.0);
    for (r, s) in real.iter().zip(sim) {
        cov += (r - mr) * (s - ms);
        vr += (r - mr) * (r - mr);
        vs += (s - ms) * (s - ms);
    }
    Ok((cov / (vr.sqrt() * vs.sqrt())).clamp(-1.0, 1.0))
}

/// Whether pair (i, j) counts as a rank violation. Strict comparisons, one
/// direction only: with `sim[i] == sim[j]` and `real[i] < real[j]` the pair
/// is flagged from i's side but not from j's.
pub fn violates(real: &[f64], sim: &[f64], i: usize, j: usize) -> bool {
    (sim[i] < sim[j]) != (real[i] < real[j])
}

/// Mean maximum rank violation.
pub fn mmrv(real: &[f64], sim: &[f64]) -> Result<f64, MetricsError> {
    check_pair(real, sim)?;
    let n = real.len();
    let total: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| violates(real, sim, i, j))
                .map(|j| (real[i] - real[j]).abs())
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / n as f64)
}
