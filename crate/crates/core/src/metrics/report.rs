use super::{mmrv, pearson, violates, MetricsError, ScoreTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const DEFAULT_BOOTSTRAP: usize = 10_000;
pub const BOOTSTRAP_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisrankedPair {
    /// Higher real score.
    pub better: String,
    pub worse: String,
    /// |R_i − R_j|
    pub severity: f64,
}

/// Metrics over one set of (real, sim) points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentMetrics {
    pub name: String,
    pub policies: Vec<String>,
    pub real: Vec<f64>,
    pub sim: Vec<f64>,
    pub pearson: Option<f64>,
    /// Why `pearson` is missing.
    pub pearson_error: Option<String>,
    /// Percentile 95% interval over policy resamples with defined r.
    pub pearson_ci: Option<[f64; 2]>,
    pub mmrv: Option<f64>,
    /// Best first.
    pub real_ranking: Vec<String>,
    pub sim_ranking: Vec<String>,
    /// Flagged pairs with nonzero severity, most severe first.
    pub misranked: Vec<MisrankedPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub environments: Vec<EnvironmentMetrics>,
    /// Per-policy means over environments.
    pub aggregate: EnvironmentMetrics,
    /// `policy/environment/source` of empty cells.
    pub missing: Vec<String>,
    pub bootstrap_samples: usize,
    pub bootstrap_seed: u64,
}

fn ranking(names: &[String], scores: &[f64]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..names.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.into_iter().map(|i| names[i].clone()).collect()
}

fn bootstrap_ci(real: &[f64], sim: &[f64], samples: usize, seed: u64) -> Option<[f64; 2]> {
    let n = real.len();
    let mut rs: Vec<f64> = (0..samples)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let pick: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let r: Vec<f64> = pick.iter().map(|&i| real[i]).collect();
            let s: Vec<f64> = pick.iter().map(|&i| sim[i]).collect();
            pearson(&r, &s).ok()
        })
        .collect();
    if rs.is_empty() {
        return None;
    }
    rs.sort_by(f64::total_cmp);
    let q = |p: f64| rs[((p * (rs.len() - 1) as f64).round() as usize).min(rs.len() - 1)];
    Some([q(0.025), q(0.975)])
}

fn metrics(name: &str, policies: Vec<String>, real: Vec<f64>, sim: Vec<f64>, samples: usize, seed: u64) -> EnvironmentMetrics {
    let (pearson_v, pearson_error) = match pearson(&real, &sim) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let pearson_ci = if pearson_v.is_some() && samples > 0 {
        bootstrap_ci(&real, &sim, samples, seed)
    } else {
        None
    };
    let mut misranked = Vec::new();
    for i in 0..real.len() {
        for j in i + 1..real.len() {
            let sev = (real[i] - real[j]).abs();
            if sev > 0.0 && (violates(&real, &sim, i, j) || violates(&real, &sim, j, i)) {
                let (b, w) = if real[i] > real[j] { (i, j) } else { (j, i) };
                misranked.push(MisrankedPair {
                    better: policies[b].clone(),
                    worse: policies[w].clone(),
                    severity: sev,
                });
            }
        }
    }
    misranked.sort_by(|a, b| b.severity.total_cmp(&a.severity));
    EnvironmentMetrics {
        name: name.to_string(),
        real_ranking: ranking(&policies, &real),
        sim_ranking: ranking(&policies, &sim),
        mmrv: mmrv(&real, &sim).ok(),
        pearson: pearson_v,
        pearson_error,
        pearson_ci,
        misranked,
        policies,
        real,
        sim,
    }
}

/// Per-environment and aggregate metrics. Undefined correlations are
/// reported per entry rather than failing the report.
pub fn build_report(table: &ScoreTable, bootstrap: usize) -> Result<FaithfulnessReport, MetricsError> {
    table.validate()?;
    let names = |ids: &[usize]| ids.iter().map(|&p| table.policies[p].clone()).collect::<Vec<_>>();
    let environments = (0..table.environments.len())
        .map(|e| {
            let (ids, real, sim) = table.column(e);
            metrics(&table.environments[e], names(&ids), real, sim, bootstrap, BOOTSTRAP_SEED)
        })
        .collect();
    let (ids, real, sim) = table.aggregate();
    Ok(FaithfulnessReport {
        environments,
        aggregate: metrics("aggregate", names(&ids), real, sim, bootstrap, BOOTSTRAP_SEED),
        missing: table.missing().into_iter().map(|(p, e, s)| format!("{p}/{e}/{s}")).collect(),
        bootstrap_samples: bootstrap,
        bootstrap_seed: BOOTSTRAP_SEED,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |v| format!("{v:.4}"))
}

impl FaithfulnessReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for m in std::iter::once(&self.aggregate).chain(&self.environments) {
            let _ = writeln!(s, "[{}]", m.name);
            let _ = writeln!(s, "policies = {}", m.policies.len());
            match (&m.pearson, &m.pearson_error) {
                (Some(r), _) => {
                    let _ = writeln!(s, "pearson_r = {r:.4}");
                }
                (None, Some(e)) => {
                    let _ = writeln!(s, "pearson_r = undefined ({e})");
                }
                _ => {}
            }
            if let Some([lo, hi]) = m.pearson_ci {
                let _ = writeln!(s, "pearson_r_95ci = [{lo:.4}, {hi:.4}]");
            }
            let _ = writeln!(s, "mmrv = {}", opt(m.mmrv));
            let _ = writeln!(s, "real_ranking = {}", m.real_ranking.join(" > "));
            let _ = writeln!(s, "sim_ranking = {}", m.sim_ranking.join(" > "));
            for p in &m.misranked {
                let _ = writeln!(s, "misranked = {} vs {} (severity {:.4})", p.better, p.worse, p.severity);
            }
            s.push('\n');
        }
        if !self.missing.is_empty() {
            let _ = writeln!(s, "missing = {}", self.missing.join(", "));
        }
        s
    }

    /// `environment,policy,real,sim` points for plotting.
    pub fn plot_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["environment", "policy", "real", "sim"]).expect("in-memory write");
        for m in std::iter::once(&self.aggregate).chain(&self.environments) {
            for (i, p) in m.policies.iter().enumerate() {
                w.write_record([m.name.as_str(), p, &m.real[i].to_string(), &m.sim[i].to_string()])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }
}

/// Writes `report.txt`, `report.json` and `plot.csv` into `dir`.
pub fn write_report(dir: &Path, report: &FaithfulnessReport) -> Result<(), MetricsError> {
    let io = |e: std::io::Error| MetricsError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join("report.txt"), report.to_text()).map_err(io)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| MetricsError::Io(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json).map_err(io)?;
    std::fs::write(dir.join("plot.csv"), report.plot_csv()).map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::read_scores;

    #[test]
    fn identical_scores_are_perfect() {
        let t = read_scores(
            "t",
            "policy,environment,source,score,episodes\na,e,real,0.1,5\na,e,sim,0.1,5\nb,e,real,0.7,5\nb,e,sim,0.7,5\nc,e,real,0.4,5\nc,e,sim,0.4,5\n",
        )
        .unwrap();
        let r = build_report(&t, 200).unwrap();
        assert!((r.aggregate.pearson.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.aggregate.mmrv, Some(0.0));
        assert_eq!(r.environments[0].pearson, r.aggregate.pearson);
        assert_eq!(r.aggregate.real_ranking, ["b", "c", "a"]);
        assert!(r.aggregate.misranked.is_empty());
        assert!(r.to_text().contains("pearson_r = 1.0000"));
    }

    #[test]
    fn constant_column_does_not_sink_the_report() {
        let t = read_scores(
            "t",
            "policy,environment,source,score,episodes\na,e,real,0.5,5\na,e,sim,0.1,5\nb,e,real,0.5,5\nb,e,sim,0.7,5\na,f,real,0.2,5\na,f,sim,0.3,5\nb,f,real,0.9,5\nb,f,sim,0.1,5\n",
        )
        .unwrap();
        let r = build_report(&t, 100).unwrap();
        assert_eq!(r.environments[0].pearson, None);
        assert!(r.environments[0].pearson_error.as_deref().unwrap().contains("real"));
        assert!((r.environments[1].pearson.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(r.environments[1].misranked.len(), 1);
        assert!((r.environments[1].misranked[0].severity - 0.7).abs() < 1e-12);
    }
}
