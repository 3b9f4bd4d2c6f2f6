//! Run-log analysis: F1-versus-budget curves, mean-over-runs aggregation,
//! per-step method ranks and the improvement decomposition, plus CSV export.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::RunLog;
use crate::graph::{
    compute_metrics, diff_rounds, EdgeLabel, GroundTruthGraph, ImprovementBreakdown, Pair, SignedConfidence,
    VariableSet,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("curves are not aligned: {0}")]
    Alignment(String),
    #[error("log integrity: {0}")]
    Integrity(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    /// Pairs experimented so far divided by the number of candidate pairs.
    pub budget_fraction: f64,
    pub f1_mean: f64,
    pub f1_spread: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
}

impl Curve {
    /// Trapezoidal area under F1 against budget fraction.
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].budget_fraction - w[0].budget_fraction) * (w[0].f1_mean + w[1].f1_mean) / 2.0)
            .sum()
    }

    pub fn final_f1(&self) -> Option<f64> {
        self.points.last().map(|p| p.f1_mean)
    }
}

/// How the band around a mean curve is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spread {
    /// Sample standard deviation across runs (0 for a single run).
    #[default]
    StdDev,
    /// Half the distance between the smallest and largest run value.
    Envelope,
}

/// One point per logged round, starting with the initial prediction at
/// fraction 0. Requires ground truth in the log.
pub fn f1_curve(log: &RunLog) -> Result<Curve, AnalysisError> {
    let header = log.header().ok_or_else(|| AnalysisError::MissingData("run header".into()))?;
    let n = header.variables.len();
    let total = (n * n.saturating_sub(1)) as f64;
    let mut points = Vec::new();
    for s in log.summaries() {
        let m = s
            .metrics
            .ok_or_else(|| AnalysisError::MissingData(format!("metrics for round {} (no ground truth)", s.round)))?;
        points.push(CurvePoint {
            round: s.round,
            budget_fraction: s.experimented as f64 / total,
            f1_mean: m.f1,
            f1_spread: 0.0,
        });
    }
    if !log.is_complete() {
        tracing::warn!(rounds = points.len(), "run log is truncated; curve is partial");
    }
    Ok(Curve { points })
}

/// Pointwise mean and spread of curves sharing one budget grid.
pub fn aggregate_curves(curves: &[Curve], spread: Spread) -> Result<Curve, AnalysisError> {
    let first = curves.first().ok_or_else(|| AnalysisError::MissingData("no curves to aggregate".into()))?;
    for (i, c) in curves.iter().enumerate() {
        if c.points.len() != first.points.len() {
            return Err(AnalysisError::Alignment(format!(
                "curve {i} has {} points, curve 0 has {}",
                c.points.len(),
                first.points.len()
            )));
        }
        for (a, b) in c.points.iter().zip(&first.points) {
            if a.round != b.round || a.budget_fraction != b.budget_fraction {
                return Err(AnalysisError::Alignment(format!(
                    "curve {i} round {} is at fraction {}, expected round {} at {}",
                    a.round, a.budget_fraction, b.round, b.budget_fraction
                )));
            }
        }
    }
    let k = curves.len() as f64;
    let points = first
        .points
        .iter()
        .enumerate()
        .map(|(idx, p)| {
            let mut values: Vec<f64> = curves.iter().map(|c| c.points[idx].f1_mean).collect();
            values.sort_by(f64::total_cmp);
            let mean = values.iter().sum::<f64>() / k;
            let band = match spread {
                Spread::StdDev if curves.len() > 1 => {
                    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
                }
                Spread::StdDev => 0.0,
                Spread::Envelope => (values[values.len() - 1] - values[0]) / 2.0,
            };
            CurvePoint { round: p.round, budget_fraction: p.budget_fraction, f1_mean: mean, f1_spread: band }
        })
        .collect();
    Ok(Curve { points })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankStep {
    pub round: usize,
    /// 0 is best; tied methods share the mean of their ranks.
    pub ranks: BTreeMap<String, f64>,
    /// Methods without a point at this step.
    pub excluded: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub steps: Vec<RankStep>,
    /// Mean rank over the steps where the method was present.
    pub average: BTreeMap<String, f64>,
}

/// Ranks methods by F1 at each round (descending F1, 0 = best).
pub fn rank_methods(curves: &BTreeMap<String, Curve>) -> Result<RankTable, AnalysisError> {
    let methods: Vec<String> = curves.keys().cloned().collect();
    let max_len = curves.values().map(|c| c.points.len()).max().unwrap_or(0);
    let mut steps = Vec::with_capacity(max_len);
    for idx in 0..max_len {
        let mut present: Vec<(&String, f64)> = Vec::new();
        let mut excluded = Vec::new();
        let mut grid: Option<(usize, f64)> = None;
        for (name, curve) in curves {
            match curve.points.get(idx) {
                Some(p) => {
                    match grid {
                        None => grid = Some((p.round, p.budget_fraction)),
                        Some((r, f)) if r != p.round || f != p.budget_fraction => {
                            return Err(AnalysisError::Alignment(format!(
                                "method {name} step {idx} at round {} fraction {}, others at round {r} fraction {f}",
                                p.round, p.budget_fraction
                            )));
                        }
                        Some(_) => {}
                    }
                    present.push((name, p.f1_mean));
                }
                None => excluded.push(name.clone()),
            }
        }
        if !excluded.is_empty() {
            tracing::info!(step = idx, ?excluded, "methods missing at step; excluded from ranking");
        }
        present.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut ranks = BTreeMap::new();
        let mut i = 0;
        while i < present.len() {
            let mut j = i;
            while j + 1 < present.len() && present[j + 1].1 == present[i].1 {
                j += 1;
            }
            let shared = (i + j) as f64 / 2.0;
            for entry in &present[i..=j] {
                ranks.insert(entry.0.clone(), shared);
            }
            i = j + 1;
        }
        steps.push(RankStep { round: grid.map(|g| g.0).unwrap_or(idx), ranks, excluded });
    }
    let average = methods
        .iter()
        .map(|m| {
            let rs: Vec<f64> = steps.iter().filter_map(|s| s.ranks.get(m).copied()).collect();
            let avg = if rs.is_empty() { f64::NAN } else { rs.iter().sum::<f64>() / rs.len() as f64 };
            (m.clone(), avg)
        })
        .collect();
    Ok(RankTable { methods, steps, average })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub round: usize,
    pub breakdown: ImprovementBreakdown,
    /// Share of this round's improvements due to experiments; `None` when
    /// nothing improved.
    pub experiment_share: Option<f64>,
    pub update_share: Option<f64>,
}

fn truth_of(log: &RunLog) -> Result<(Vec<Pair>, GroundTruthGraph), AnalysisError> {
    let header = log.header().ok_or_else(|| AnalysisError::MissingData("run header".into()))?;
    let edges = header
        .truth_edges
        .as_ref()
        .ok_or_else(|| AnalysisError::MissingData("ground-truth edges in run header".into()))?;
    let vars = VariableSet::from_names("", header.variables.iter().map(|v| (v.clone(), "")))
        .map_err(|e| AnalysisError::Integrity(e.to_string()))?;
    let candidates = vars.candidate_edges();
    let truth = GroundTruthGraph::new(vars, edges.iter().copied()).map_err(|e| AnalysisError::Integrity(e.to_string()))?;
    Ok((candidates, truth))
}

fn label_map(candidates: &[Pair], confidences: &[f64]) -> BTreeMap<Pair, EdgeLabel> {
    candidates.iter().copied().zip(confidences.iter().map(|c| SignedConfidence::new(*c).label())).collect()
}

/// Recomputes the per-round improvement decomposition from the logged
/// snapshots and checks it against the logged breakdowns.
pub fn improvement_series(log: &RunLog) -> Result<Vec<ImprovementRow>, AnalysisError> {
    let (candidates, truth) = truth_of(log)?;
    let mut experimented: BTreeMap<usize, BTreeSet<Pair>> = BTreeMap::new();
    for (round, pair, _) in log.experiments() {
        experimented.entry(round).or_default().insert(pair);
    }
    let summaries: Vec<_> = log.summaries().collect();
    let mut rows = Vec::new();
    for w in summaries.windows(2) {
        let (prev, next) = (w[0], w[1]);
        let round_set = experimented.remove(&next.round).unwrap_or_default();
        let b = diff_rounds(
            &label_map(&candidates, &prev.confidences),
            &label_map(&candidates, &next.confidences),
            &truth,
            &round_set,
        )
        .map_err(|e| AnalysisError::Integrity(e.to_string()))?;
        if let Some(logged) = next.improvements {
            if logged != b {
                return Err(AnalysisError::Integrity(format!(
                    "round {}: logged breakdown {logged:?} but snapshots give {b:?}",
                    next.round
                )));
            }
        }
        let total = b.total_improvements();
        let share = |x: usize| (total > 0).then(|| x as f64 / total as f64);
        rows.push(ImprovementRow {
            round: next.round,
            breakdown: b,
            experiment_share: share(b.experiment_improvements),
            update_share: share(b.update_improvements),
        });
    }
    Ok(rows)
}

/// Recomputes every logged metric from the logged confidences.
pub fn verify_metrics(log: &RunLog) -> Result<(), AnalysisError> {
    let (candidates, truth) = truth_of(log)?;
    for s in log.summaries() {
        let m = compute_metrics(&label_map(&candidates, &s.confidences), &truth)
            .map_err(|e| AnalysisError::Integrity(e.to_string()))?;
        if s.metrics != Some(m) {
            return Err(AnalysisError::Integrity(format!(
                "round {}: logged metrics {:?}, recomputed {m:?}",
                s.round, s.metrics
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    method: String,
    round: usize,
    fraction: f64,
    f1_mean: f64,
    f1_spread: f64,
}

/// `method,round,fraction,f1_mean,f1_spread`, methods in name order.
pub fn write_curves_csv<W: Write>(w: W, curves: &BTreeMap<String, Curve>) -> Result<(), AnalysisError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["method", "round", "fraction", "f1_mean", "f1_spread"])?;
    for (method, curve) in curves {
        for p in &curve.points {
            out.serialize(CurveRow {
                method: method.clone(),
                round: p.round,
                fraction: p.budget_fraction,
                f1_mean: p.f1_mean,
                f1_spread: p.f1_spread,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_curves_csv<R: Read>(r: R) -> Result<BTreeMap<String, Curve>, AnalysisError> {
    let mut curves: BTreeMap<String, Curve> = BTreeMap::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: CurveRow = row?;
        curves.entry(row.method).or_default().points.push(CurvePoint {
            round: row.round,
            budget_fraction: row.fraction,
            f1_mean: row.f1_mean,
            f1_spread: row.f1_spread,
        });
    }
    Ok(curves)
}

/// One row per step (`round` then one rank column per method, blank where
/// excluded) followed by a `mean` row.
pub fn write_ranks_csv<W: Write>(w: W, table: &RankTable) -> Result<(), AnalysisError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let mut header = vec!["round".to_string()];
    header.extend(table.methods.iter().cloned());
    out.write_record(&header)?;
    for step in &table.steps {
        let mut row = vec![step.round.to_string()];
        row.extend(table.methods.iter().map(|m| step.ranks.get(m).map(|r| r.to_string()).unwrap_or_default()));
        out.write_record(&row)?;
    }
    let mut summary = vec!["mean".to_string()];
    summary.extend(table.methods.iter().map(|m| table.average[m].to_string()));
    out.write_record(&summary)?;
    out.flush()?;
    Ok(())
}

/// `method,run,round,<breakdown fields>,experiment_share,update_share`.
pub fn write_improvements_csv<W: Write>(
    w: W,
    series: &[(String, usize, Vec<ImprovementRow>)],
) -> Result<(), AnalysisError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record([
        "method",
        "run",
        "round",
        "experiment_improvements",
        "update_improvements",
        "regressions",
        "net_improvement",
        "total_changed",
        "experiment_share",
        "update_share",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (method, run, rows) in series {
        for r in rows {
            let b = &r.breakdown;
            out.write_record([
                method.clone(),
                run.to_string(),
                r.round.to_string(),
                b.experiment_improvements.to_string(),
                b.update_improvements.to_string(),
                b.regressions.to_string(),
                b.net_improvement.to_string(),
                b.total_changed.to_string(),
                opt(r.experiment_share),
                opt(r.update_share),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(values: &[f64]) -> Curve {
        let last = (values.len() - 1).max(1) as f64;
        Curve {
            points: values
                .iter()
                .enumerate()
                .map(|(i, v)| CurvePoint { round: i, budget_fraction: i as f64 / last, f1_mean: *v, f1_spread: 0.0 })
                .collect(),
        }
    }

    #[test]
    fn aggregate_mean_and_spread() {
        let same = aggregate_curves(&[curve(&[0.5, 0.7]), curve(&[0.5, 0.7])], Spread::StdDev).unwrap();
        assert!(same.points.iter().all(|p| p.f1_spread == 0.0));
        let two = aggregate_curves(&[curve(&[0.4, 1.0]), curve(&[0.6, 1.0])], Spread::StdDev).unwrap();
        assert!((two.points[0].f1_mean - 0.5).abs() < 1e-15);
        assert!((two.points[0].f1_spread - (0.02f64).sqrt()).abs() < 1e-12);
        let env = aggregate_curves(&[curve(&[0.4, 1.0]), curve(&[0.6, 1.0])], Spread::Envelope).unwrap();
        assert!((env.points[0].f1_spread - 0.1).abs() < 1e-12);
        let single = aggregate_curves(&[curve(&[0.3, 0.9])], Spread::StdDev).unwrap();
        assert_eq!(single, curve(&[0.3, 0.9]));
    }

    #[test]
    fn aggregate_rejects_mismatched_grids() {
        let err = aggregate_curves(&[curve(&[0.1, 0.2]), curve(&[0.1, 0.2, 0.3])], Spread::StdDev);
        assert!(matches!(err, Err(AnalysisError::Alignment(_))));
    }

    #[test]
    fn ranks_ties_and_conservation() {
        let curves = BTreeMap::from([
            ("a".to_string(), curve(&[0.9, 0.9, 1.0])),
            ("b".to_string(), curve(&[0.5, 0.9, 0.7])),
            ("c".to_string(), curve(&[0.1, 0.2, 0.3])),
        ]);
        let t = rank_methods(&curves).unwrap();
        assert_eq!(t.steps[0].ranks["a"], 0.0);
        assert_eq!(t.steps[1].ranks["a"], 0.5);
        assert_eq!(t.steps[1].ranks["b"], 0.5);
        for s in &t.steps {
            assert_eq!(s.ranks.values().sum::<f64>(), 3.0);
        }
        assert_eq!(t.average["c"], 2.0);
    }

    #[test]
    fn dominant_method_ranks_zero() {
        let curves = BTreeMap::from([("best".to_string(), curve(&[0.9, 1.0])), ("worse".to_string(), curve(&[0.1, 0.5]))]);
        assert_eq!(rank_methods(&curves).unwrap().average["best"], 0.0);
    }

    #[test]
    fn auc_of_flat_curve() {
        assert!((curve(&[1.0, 1.0, 1.0]).auc() - 1.0).abs() < 1e-12);
        assert!((curve(&[0.0, 1.0]).auc() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn curves_csv_round_trip() {
        let curves = BTreeMap::from([("m".to_string(), curve(&[0.1, 1.0 / 3.0, 0.7]))]);
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &curves).unwrap();
        assert_eq!(read_curves_csv(buf.as_slice()).unwrap(), curves);

        let mut empty = Vec::new();
        write_curves_csv(&mut empty, &BTreeMap::new()).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), "method,round,fraction,f1_mean,f1_spread\n");
    }

    #[test]
    fn ranks_csv_shape() {
        let curves: BTreeMap<String, Curve> = ["x", "y", "z"]
            .iter()
            .enumerate()
            .map(|(k, m)| (m.to_string(), curve(&(0..10).map(|i| (i * (k + 1)) as f64 / 40.0).collect::<Vec<_>>())))
            .collect();
        let mut buf = Vec::new();
        write_ranks_csv(&mut buf, &rank_methods(&curves).unwrap()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 10 + 1);
        assert_eq!(lines[0], "round,x,y,z");
        assert!(lines[11].starts_with("mean,"));
    }
}
