use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use crate::error::{Error, Result};

/// Metrics of one (fold, run) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub fold: usize,
    pub run: usize,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_run: Vec<RunMetrics>,
    /// Mean over runs, one entry per fold.
    pub per_fold: Vec<Metrics>,
    pub mean: Metrics,
    /// Population standard deviation over the fold means.
    pub sd: Metrics,
}

/// Mean over the runs of each fold, then mean and population sd over folds.
pub fn aggregate(cells: &[RunMetrics], folds: usize, runs: usize) -> Result<MetricsReport> {
    if folds == 0 || runs == 0 {
        return Err(Error::param("need at least one fold and one run"));
    }
    let mut grid: Vec<Vec<Option<&RunMetrics>>> = vec![vec![None; runs]; folds];
    for c in cells {
        if c.fold >= folds || c.run >= runs {
            return Err(Error::IncompleteGrid(format!(
                "cell (fold {}, run {}) outside {folds} x {runs}",
                c.fold, c.run
            )));
        }
        if grid[c.fold][c.run].replace(c).is_some() {
            return Err(Error::IncompleteGrid(format!("duplicate cell (fold {}, run {})", c.fold, c.run)));
        }
    }
    let mut per_fold = Vec::with_capacity(folds);
    for (f, row) in grid.iter().enumerate() {
        let mut sum = [0.0; 5];
        for (r, cell) in row.iter().enumerate() {
            let cell = cell.ok_or_else(|| Error::IncompleteGrid(format!("missing (fold {f}, run {r})")))?;
            for (s, v) in sum.iter_mut().zip(cell.metrics.values()) {
                *s += v;
            }
        }
        per_fold.push(Metrics::from_values(sum.map(|s| s / runs as f64)));
    }
    let mut mean = [0.0; 5];
    for m in &per_fold {
        for (s, v) in mean.iter_mut().zip(m.values()) {
            *s += v;
        }
    }
    let mean = mean.map(|s| s / folds as f64);
    let mut var = [0.0; 5];
    for m in &per_fold {
        for ((s, v), mu) in var.iter_mut().zip(m.values()).zip(mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    let sd = var.map(|s| (s / folds as f64).sqrt());
    let mut per_run = cells.to_vec();
    per_run.sort_by_key(|c| (c.fold, c.run));
    Ok(MetricsReport {
        per_run,
        per_fold,
        mean: Metrics::from_values(mean),
        sd: Metrics::from_values(sd),
    })
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub report: MetricsReport,
}

pub fn write_report_json(reports: &[ModelReport], w: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(w, reports)?;
    Ok(())
}

/// `model,acc,acc_sd,auc,auc_sd,...` with one row per model.
pub fn write_summary_csv(reports: &[ModelReport], mut w: impl Write) -> Result<()> {
    let header: Vec<String> = Metrics::NAMES.iter().flat_map(|n| [n.to_string(), format!("{n}_sd")]).collect();
    writeln!(w, "model,{}", header.join(","))?;
    for r in reports {
        let cells: Vec<String> = r
            .report
            .mean
            .values()
            .iter()
            .zip(r.report.sd.values())
            .flat_map(|(m, s)| [format!("{m:.4}"), format!("{s:.4}")])
            .collect();
        writeln!(w, "{},{}", r.model, cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(fold: usize, run: usize, v: f64) -> RunMetrics {
        RunMetrics {
            fold,
            run,
            seed: 0,
            metrics: Metrics::from_values([v; 5]),
        }
    }

    #[test]
    fn constant_grid() {
        let cells: Vec<_> = (0..4).flat_map(|f| (0..4).map(move |r| cell(f, r, 0.8))).collect();
        let rep = aggregate(&cells, 4, 4).unwrap();
        assert!((rep.mean.auc - 0.8).abs() < 1e-15);
        assert!(rep.sd.auc.abs() < 1e-15);
    }

    #[test]
    fn fold_means_and_sd() {
        let cells = vec![cell(0, 0, 0.9), cell(1, 0, 0.9), cell(2, 0, 0.7), cell(3, 0, 0.7)];
        let rep = aggregate(&cells, 4, 1).unwrap();
        assert!((rep.mean.aps - 0.8).abs() < 1e-12);
        assert!((rep.sd.aps - 0.1).abs() < 1e-12);
        let rep = aggregate(&[cell(0, 0, 1.0), cell(0, 1, 0.6)], 1, 2).unwrap();
        assert!((rep.per_fold[0].acc - 0.8).abs() < 1e-15);
    }

    #[test]
    fn permutation_and_completeness() {
        let cells: Vec<_> = (0..3)
            .flat_map(|f| (0..4).map(move |r| cell(f, r, 0.1 * (f as f64) + 0.07 * r as f64)))
            .collect();
        let a = aggregate(&cells, 3, 4).unwrap();
        let mut rev = cells.clone();
        rev.reverse();
        assert_eq!(a, aggregate(&rev, 3, 4).unwrap());
        assert!(matches!(aggregate(&cells[1..], 3, 4), Err(Error::IncompleteGrid(_))));
        let mut dup = cells.clone();
        dup.push(cells[0]);
        assert!(aggregate(&dup, 3, 4).is_err());
    }

    #[test]
    fn summary_csv_shape() {
        let cells = vec![cell(0, 0, 0.5), cell(1, 0, 0.7)];
        let reports = vec![ModelReport {
            model: "pi".into(),
            report: aggregate(&cells, 2, 1).unwrap(),
        }];
        let mut buf = Vec::new();
        write_summary_csv(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0].split(',').count(), 11);
        assert!(lines[1].starts_with("pi,0.6000,0.1000"));
        let mut json = Vec::new();
        write_report_json(&reports, &mut json).unwrap();
        let back: Vec<ModelReport> = serde_json::from_slice(&json).unwrap();
        assert_eq!(back, reports);
    }
}
