//! Level profiles, run comparison and tabular plot data.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::copo::IterationMetrics;
use crate::envs::{EnvId, Tier};
use crate::format::CognitiveLevel;
use crate::trajectory::Trajectory;

use super::EvalReport;

/// Level shares by position within the trajectory and by complexity tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionProfile {
    /// Ten deciles of normalized position; `None` when a bin holds no well-formed step.
    pub progress_bins: Vec<Option<[f64; 4]>>,
    pub progress_counts: Vec<[usize; 4]>,
    pub tier_profiles: Vec<TierProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierProfile {
    pub tier: Tier,
    pub counts: [usize; 4],
    pub shares: Option<[f64; 4]>,
}

fn shares(c: &[usize; 4]) -> Option<[f64; 4]> {
    let total: usize = c.iter().sum();
    (total > 0).then(|| c.map(|x| x as f64 / total as f64))
}

/// Decile of step `t` in a trajectory of `len` steps.
pub fn progress_bin(t: usize, len: usize) -> usize {
    (10 * t / len).min(9)
}

/// Pools steps across trajectories. Malformed steps count toward trajectory
/// length but carry no level.
pub fn level_distribution<'a>(
    items: impl IntoIterator<Item = (&'a [Option<CognitiveLevel>], Tier)>,
) -> DistributionProfile {
    let mut bins = vec![[0usize; 4]; 10];
    let mut tiers = [[0usize; 4]; 3];
    for (levels, tier) in items {
        let len = levels.len();
        for (t, l) in levels.iter().enumerate() {
            if let Some(l) = l {
                bins[progress_bin(t, len)][l.index()] += 1;
                let ti = Tier::ALL
                    .iter()
                    .position(|x| *x == tier)
                    .expect("known tier");
                tiers[ti][l.index()] += 1;
            }
        }
    }
    DistributionProfile {
        progress_bins: bins.iter().map(shares).collect(),
        progress_counts: bins,
        tier_profiles: Tier::ALL
            .iter()
            .zip(tiers)
            .map(|(tier, counts)| TierProfile {
                tier: *tier,
                counts,
                shares: shares(&counts),
            })
            .collect(),
    }
}

pub fn profile_trajectories(
    trajs: &[Trajectory],
) -> (DistributionProfile, Vec<Vec<Option<CognitiveLevel>>>) {
    let levels: Vec<Vec<Option<CognitiveLevel>>> = trajs.iter().map(|t| t.levels()).collect();
    let p = level_distribution(
        levels
            .iter()
            .zip(trajs)
            .map(|(l, t)| (l.as_slice(), t.tier)),
    );
    (p, levels)
}

pub fn profile_report(report: &EvalReport) -> DistributionProfile {
    level_distribution(report.rows.iter().map(|r| (r.levels.as_slice(), r.tier)))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("reports cover different suites")]
pub struct SuiteMismatch;

/// Paired deltas `a - b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub env: EnvId,
    pub episodes: usize,
    pub success_rate_a: f64,
    pub success_rate_b: f64,
    pub success_rate_delta: f64,
    pub mean_score_delta: f64,
    pub mean_tokens_a: f64,
    pub mean_tokens_b: f64,
    pub mean_tokens_delta: f64,
    /// `1 - tokens_a / tokens_b`.
    pub token_reduction: f64,
}

pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<Comparison, SuiteMismatch> {
    if a.env != b.env || a.task_ids() != b.task_ids() {
        return Err(SuiteMismatch);
    }
    let (x, y) = (&a.aggregates, &b.aggregates);
    let g = |v: Option<f64>| v.unwrap_or(0.0);
    Ok(Comparison {
        env: a.env,
        episodes: x.episodes,
        success_rate_a: g(x.success_rate),
        success_rate_b: g(y.success_rate),
        success_rate_delta: g(x.success_rate) - g(y.success_rate),
        mean_score_delta: g(x.mean_score) - g(y.mean_score),
        mean_tokens_a: g(x.mean_tokens),
        mean_tokens_b: g(y.mean_tokens),
        mean_tokens_delta: g(x.mean_tokens) - g(y.mean_tokens),
        token_reduction: if g(y.mean_tokens) > 0.0 {
            1.0 - g(x.mean_tokens) / g(y.mean_tokens)
        } else {
            0.0
        },
    })
}

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, PlotError> {
    let f = File::create(path).map_err(|source| PlotError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// `training_curve.csv`: one row per iteration.
pub fn write_training_curve(metrics: &[IterationMetrics], path: &Path) -> Result<(), PlotError> {
    let mut w = writer(path)?;
    w.write_record([
        "iteration",
        "success_rate",
        "mean_reward",
        "mean_tokens",
        "mean_steps",
        "L1",
        "L2",
        "L3",
        "L4",
        "malformed_rate",
        "mean_kl",
        "loss",
        "clip_fraction",
        "grad_norm",
    ])?;
    for m in metrics {
        let mut rec = vec![m.iteration.to_string()];
        for v in [m.success_rate, m.mean_reward, m.mean_tokens, m.mean_steps] {
            rec.push(cell(Some(v)));
        }
        rec.extend(m.level_histogram.iter().map(|v| cell(Some(*v))));
        for v in [
            m.malformed_rate,
            m.mean_kl,
            m.loss,
            m.clip_fraction,
            m.grad_norm,
        ] {
            rec.push(cell(Some(v)));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| PlotError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

fn level_header(first: &str) -> [String; 5] {
    [
        first.to_string(),
        "L1".into(),
        "L2".into(),
        "L3".into(),
        "L4".into(),
    ]
}

/// `progress_bins.csv`: ten rows `bin, L1..L4`; empty bins have blank shares.
pub fn write_progress_bins(profile: &DistributionProfile, path: &Path) -> Result<(), PlotError> {
    let mut w = writer(path)?;
    w.write_record(level_header("bin"))?;
    for (i, b) in profile.progress_bins.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend((0..4).map(|k| cell(b.map(|s| s[k]))));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| PlotError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// `tier_bins.csv`: one row per complexity tier.
pub fn write_tier_bins(profile: &DistributionProfile, path: &Path) -> Result<(), PlotError> {
    let mut w = writer(path)?;
    w.write_record(level_header("tier"))?;
    for t in &profile.tier_profiles {
        let mut rec = vec![format!("{:?}", t.tier).to_lowercase()];
        rec.extend((0..4).map(|k| cell(t.shares.map(|s| s[k]))));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| PlotError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// `level_histogram.csv`: `level, count, share` over all evaluated steps.
pub fn write_level_histogram(report: &EvalReport, path: &Path) -> Result<(), PlotError> {
    let mut w = writer(path)?;
    w.write_record(["level", "count", "share"])?;
    for k in 0..4 {
        let share = report.aggregates.level_histogram.map(|h| h[k]);
        w.write_record([
            format!("L{}", k + 1),
            report.aggregates.level_counts[k].to_string(),
            cell(share),
        ])?;
    }
    w.flush().map_err(|source| PlotError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Writes every figure table that the inputs allow into `out`.
pub fn emit_plot_data(
    metrics: Option<&[IterationMetrics]>,
    report: Option<&EvalReport>,
    out: &Path,
) -> Result<Vec<String>, PlotError> {
    std::fs::create_dir_all(out).map_err(|source| PlotError::Io {
        path: out.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    if let Some(m) = metrics {
        write_training_curve(m, &out.join("training_curve.csv"))?;
        written.push("training_curve.csv".to_string());
    }
    if let Some(r) = report {
        let p = profile_report(r);
        write_level_histogram(r, &out.join("level_histogram.csv"))?;
        write_progress_bins(&p, &out.join("progress_bins.csv"))?;
        write_tier_bins(&p, &out.join("tier_bins.csv"))?;
        written.extend(
            ["level_histogram.csv", "progress_bins.csv", "tier_bins.csv"].map(String::from),
        );
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Aggregates, EpisodeRow};
    use CognitiveLevel::*;

    fn row(task_id: usize, success: bool, tokens: usize) -> EpisodeRow {
        EpisodeRow {
            task_id,
            tier: Tier::Short,
            family: "pick".into(),
            success,
            score: f64::from(u8::from(success)),
            steps: 2,
            tokens,
            levels: vec![Some(L1), Some(L4)],
            error: None,
        }
    }

    fn report(rows: Vec<EpisodeRow>) -> EvalReport {
        EvalReport::from_rows(EnvId::GridHouse, 0, 0, 0.4, rows)
    }

    #[test]
    fn binning_examples() {
        let all_l1 = vec![Some(L1); 7];
        let p = level_distribution([(all_l1.as_slice(), Tier::Short)]);
        for b in p.progress_bins.iter().flatten() {
            assert_eq!(*b, [1.0, 0.0, 0.0, 0.0]);
        }
        let mut t = vec![Some(L1); 10];
        t[0] = Some(L4);
        let p = level_distribution([(t.as_slice(), Tier::Short), (t.as_slice(), Tier::Medium)]);
        assert_eq!(p.progress_bins[0].unwrap()[3], 1.0);
        let empty = level_distribution(std::iter::empty());
        assert!(empty.progress_bins.iter().all(|b| b.is_none()));
        for len in 1..40 {
            let bins: Vec<usize> = (0..len).map(|t| progress_bin(t, len)).collect();
            assert!(bins.iter().all(|b| *b < 10));
            assert_eq!(
                bins[len - 1],
                if len >= 10 { 9 } else { 10 * (len - 1) / len }
            );
        }
    }

    #[test]
    fn comparison_deltas() {
        let a = report(vec![row(1, true, 10), row(2, false, 20)]);
        let c = compare_runs(&a, &a).unwrap();
        assert_eq!(
            (
                c.success_rate_delta,
                c.mean_tokens_delta,
                c.mean_score_delta
            ),
            (0.0, 0.0, 0.0)
        );
        let b = report(vec![row(1, true, 40), row(2, true, 40)]);
        let (ab, ba) = (compare_runs(&a, &b).unwrap(), compare_runs(&b, &a).unwrap());
        assert_eq!(ab.success_rate_delta, -ba.success_rate_delta);
        assert_eq!(ab.mean_tokens_delta, -ba.mean_tokens_delta);
        let other = report(vec![row(3, true, 10)]);
        assert_eq!(compare_runs(&a, &other), Err(SuiteMismatch));
        let mut x = report(vec![row(1, true, 0)]);
        let mut y = x.clone();
        x.aggregates.mean_tokens = Some(1641.4);
        y.aggregates.mean_tokens = Some(4367.3);
        assert!((compare_runs(&x, &y).unwrap().token_reduction - 0.624).abs() < 1e-3);
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        let r = report(vec![row(1, true, 10), row(2, false, 30), row(3, true, 5)]);
        let sr = r.rows.iter().filter(|x| x.success).count() as f64 / 3.0;
        assert_eq!(r.aggregates.success_rate, Some(sr));
        assert_eq!(r.aggregates.mean_tokens, Some(15.0));
        assert_eq!(r.aggregates, Aggregates::from_rows(&r.rows));
    }

    #[test]
    fn plot_tables_have_documented_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(vec![row(1, true, 10)]);
        let written = emit_plot_data(Some(&[]), Some(&r), dir.path()).unwrap();
        assert_eq!(written.len(), 4);
        let curve = std::fs::read_to_string(dir.path().join("training_curve.csv")).unwrap();
        assert_eq!(curve.lines().count(), 1);
        let bins = std::fs::read_to_string(dir.path().join("progress_bins.csv")).unwrap();
        assert_eq!(bins.lines().count(), 11);
        assert!(bins.lines().all(|l| l.split(',').count() == 5));
    }
}
