use super::MetricsError;
use crate::eval::SuiteResult;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Sim,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Real => "real",
            Source::Sim => "sim",
        })
    }
}

/// One line of a score CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub policy: String,
    pub environment: String,
    pub source: Source,
    pub score: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub score: f64,
    pub episodes: usize,
}

/// Real and simulated scores per (policy, environment). Ids keep the order
/// of first appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub policies: Vec<String>,
    pub environments: Vec<String>,
    /// `real[p][e]`
    pub real: Vec<Vec<Option<Cell>>>,
    pub sim: Vec<Vec<Option<Cell>>>,
}

impl ScoreTable {
    /// Builds a table from rows; rows are numbered from 2 (after the header).
    pub fn from_rows(file: &str, rows: &[ScoreRow]) -> Result<Self, MetricsError> {
        Self::from_numbered(rows.iter().enumerate().map(|(i, r)| (file.to_string(), i + 2, r.clone())))
    }

    fn from_numbered(rows: impl IntoIterator<Item = (String, usize, ScoreRow)>) -> Result<Self, MetricsError> {
        let mut policies: Vec<String> = Vec::new();
        let mut environments: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(usize, usize, Source), Cell> = BTreeMap::new();
        for (file, row, r) in rows {
            if !r.score.is_finite() || !(0.0..=1.0).contains(&r.score) {
                return Err(MetricsError::ScoreRange { file, row, score: r.score });
            }
            if r.policy.is_empty() || r.environment.is_empty() {
                return Err(MetricsError::Row {
                    file,
                    row,
                    message: "empty policy or environment".into(),
                });
            }
            if r.episodes == 0 {
                return Err(MetricsError::Row {
                    file,
                    row,
                    message: "episodes must be at least 1".into(),
                });
            }
            let p = index_of(&mut policies, &r.policy);
            let e = index_of(&mut environments, &r.environment);
            let cell = Cell {
                score: r.score,
                episodes: r.episodes,
            };
            match cells.get(&(p, e, r.source)) {
                Some(old) if *old != cell => {
                    return Err(MetricsError::Conflict {
                        file,
                        row,
                        policy: r.policy,
                        environment: r.environment,
                        kind: r.source.to_string(),
                    })
                }
                Some(_) => {}
                None => {
                    cells.insert((p, e, r.source), cell);
                }
            }
        }
        let grid = |src: Source| -> Vec<Vec<Option<Cell>>> {
            (0..policies.len())
                .map(|p| (0..environments.len()).map(|e| cells.get(&(p, e, src)).copied()).collect())
                .collect()
        };
        let table = Self {
            real: grid(Source::Real),
            sim: grid(Source::Sim),
            policies,
            environments,
        };
        Ok(table)
    }

    /// (policy, environment, source) triples without a score.
    pub fn missing(&self) -> Vec<(String, String, Source)> {
        let mut out = Vec::new();
        for (p, name) in self.policies.iter().enumerate() {
            for (e, env) in self.environments.iter().enumerate() {
                if self.real[p][e].is_none() {
                    out.push((name.clone(), env.clone(), Source::Real));
                }
                if self.sim[p][e].is_none() {
                    out.push((name.clone(), env.clone(), Source::Sim));
                }
            }
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.missing().is_empty()
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let (n, e) = (self.policies.len(), self.environments.len());
        if n == 0 || e == 0 {
            return Err(MetricsError::Table("no policies or environments".into()));
        }
        for grid in [&self.real, &self.sim] {
            if grid.len() != n || grid.iter().any(|row| row.len() != e) {
                return Err(MetricsError::Table("cell grid does not match the id lists".into()));
            }
            for c in grid.iter().flatten().flatten() {
                if !(0.0..=1.0).contains(&c.score) {
                    return Err(MetricsError::Table(format!("score {} outside [0, 1]", c.score)));
                }
            }
        }
        Ok(())
    }

    /// Policies with both scores in environment `e`, with their real and sim scores.
    pub fn column(&self, e: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let mut ids = Vec::new();
        let (mut real, mut sim) = (Vec::new(), Vec::new());
        for p in 0..self.policies.len() {
            if let (Some(r), Some(s)) = (self.real[p][e], self.sim[p][e]) {
                ids.push(p);
                real.push(r.score);
                sim.push(s.score);
            }
        }
        (ids, real, sim)
    }

    /// Per-policy means over environments, for policies with every cell filled.
    pub fn aggregate(&self) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let mut ids = Vec::new();
        let (mut real, mut sim) = (Vec::new(), Vec::new());
        let ne = self.environments.len() as f64;
        for p in 0..self.policies.len() {
            let r: Option<Vec<f64>> = self.real[p].iter().map(|c| c.map(|c| c.score)).collect();
            let s: Option<Vec<f64>> = self.sim[p].iter().map(|c| c.map(|c| c.score)).collect();
            if let (Some(r), Some(s)) = (r, s) {
                ids.push(p);
                real.push(r.iter().sum::<f64>() / ne);
                sim.push(s.iter().sum::<f64>() / ne);
            }
        }
        (ids, real, sim)
    }

    pub fn rows(&self) -> Vec<ScoreRow> {
        let mut out = Vec::new();
        for (p, policy) in self.policies.iter().enumerate() {
            for (e, env) in self.environments.iter().enumerate() {
                for (source, grid) in [(Source::Real, &self.real), (Source::Sim, &self.sim)] {
                    if let Some(c) = grid[p][e] {
                        out.push(ScoreRow {
                            policy: policy.clone(),
                            environment: env.clone(),
                            source,
                            score: c.score,
                            episodes: c.episodes,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.rows() {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }
}

fn index_of(ids: &mut Vec<String>, id: &str) -> usize {
    match ids.iter().position(|x| x == id) {
        Some(i) => i,
        None => {
            ids.push(id.to_string());
            ids.len() - 1
        }
    }
}

fn parse_rows(file: &str, text: &str) -> Result<Vec<(String, usize, ScoreRow)>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.deserialize::<ScoreRow>() {
        let rec = rec.map_err(|e| MetricsError::Row {
            file: file.to_string(),
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = out.len() + 2;
        out.push((file.to_string(), row, rec));
    }
    Ok(out)
}

/// Parses one CSV text (header `policy,environment,source,score,episodes`).
pub fn read_scores(file: &str, text: &str) -> Result<ScoreTable, MetricsError> {
    ScoreTable::from_numbered(parse_rows(file, text)?)
}

/// Reads and merges score CSVs. Duplicate cells must agree.
pub fn ingest_scores<P: AsRef<Path>>(files: &[P]) -> Result<ScoreTable, MetricsError> {
    let mut rows = Vec::new();
    for f in files {
        let f = f.as_ref();
        let text = std::fs::read_to_string(f).map_err(|e| MetricsError::Io(format!("{}: {e}", f.display())))?;
        rows.extend(parse_rows(&f.display().to_string(), &text)?);
    }
    ScoreTable::from_numbered(rows)
}

/// Score rows of an evaluation suite; cells where every episode failed for
/// infrastructure reasons are left out.
pub fn suite_rows(suite: &SuiteResult, source: Source) -> Vec<ScoreRow> {
    let mut out = Vec::new();
    for (p, policy) in suite.policies.iter().enumerate() {
        for (s, scene) in suite.scenes.iter().enumerate() {
            if let Some(score) = suite.scores[p][s] {
                out.push(ScoreRow {
                    policy: policy.clone(),
                    environment: scene.clone(),
                    source,
                    score,
                    episodes: suite.episodes[p][s],
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "policy,environment,source,score,episodes
a,kitchen,real,0.5,20
a,kitchen,sim,0.4,20
b,kitchen,real,0.9,20
b,kitchen,sim,0.8,20
a,desk,real,0.1,20
a,desk,sim,0.2,20
b,desk,real,0.3,20
b,desk,sim,0.35,20
";

    #[test]
    fn complete_table() {
        let t = read_scores("s.csv", GOOD).unwrap();
        assert_eq!(t.policies, ["a", "b"]);
        assert_eq!(t.environments, ["kitchen", "desk"]);
        assert!(t.is_complete());
        assert_eq!(t.sim[1][1].unwrap().score, 0.35);
        let back = read_scores("s.csv", &t.to_csv()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn range_error_names_the_row() {
        let text = GOOD.replace("b,kitchen,sim,0.8", "b,kitchen,sim,1.2");
        let err = read_scores("s.csv", &text).unwrap_err();
        assert_eq!(
            err,
            MetricsError::ScoreRange {
                file: "s.csv".into(),
                row: 5,
                score: 1.2
            }
        );
        assert!(err.to_string().contains("row 5"));
    }

    #[test]
    fn duplicates() {
        let same = format!("{GOOD}a,kitchen,real,0.5,20\n");
        assert_eq!(read_scores("s.csv", &same).unwrap(), read_scores("s.csv", GOOD).unwrap());
        let other = format!("{GOOD}a,kitchen,real,0.6,20\n");
        assert!(matches!(read_scores("s.csv", &other), Err(MetricsError::Conflict { row: 10, .. })));
    }

    #[test]
    fn missing_cells_are_flagged() {
        let text: String = GOOD.lines().filter(|l| !l.starts_with("b,desk,sim")).map(|l| format!("{l}\n")).collect();
        let t = read_scores("s.csv", &text).unwrap();
        assert_eq!(t.missing(), vec![("b".to_string(), "desk".to_string(), Source::Sim)]);
        let (ids, _, _) = t.aggregate();
        assert_eq!(ids, [0]);
        let (ids, _, _) = t.column(0);
        assert_eq!(ids, [0, 1]);
    }

    #[test]
    fn bad_source_is_a_row_error() {
        let text = GOOD.replace("a,desk,sim", "a,desk,video");
        assert!(matches!(read_scores("s.csv", &text), Err(MetricsError::Row { row: 7, .. })));
    }
}
