use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::Summary;
use super::HarnessError;

/// Per-step curves read back from a metrics CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Curves {
    /// Rank-mean (clamped) loss per step.
    pub loss: BTreeMap<u64, f64>,
    /// Rank-mean value per (channel, step).
    pub values: BTreeMap<(String, u64), f64>,
}

pub fn read_curves(path: &Path) -> Result<Curves, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Compare(format!("{}: missing column `{name}`", path.display())))
    };
    let (step_i, rank_i, chan_i, value_i, loss_i) = (col("step")?, col("rank")?, col("channel")?, col("value")?, col("loss")?);
    let parse = |s: &str| s.parse::<f64>().map_err(|_| HarnessError::Compare(format!("{}: bad number `{s}`", path.display())));

    let mut loss: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    let mut values: BTreeMap<(String, u64), (f64, f64)> = BTreeMap::new();
    let mut first_channel: Option<String> = None;
    for rec in reader.records() {
        let rec = rec?;
        let step: u64 = rec[step_i].parse().map_err(|_| HarnessError::Compare(format!("{}: bad step", path.display())))?;
        let _rank = &rec[rank_i];
        let channel = rec[chan_i].to_owned();
        let first = first_channel.get_or_insert_with(|| channel.clone());
        // The loss repeats on every channel row of a rank; count it once.
        if channel == *first {
            let e = loss.entry(step).or_default();
            e.0 += parse(&rec[loss_i])?;
            e.1 += 1.0;
        }
        let e = values.entry((channel, step)).or_default();
        e.0 += parse(&rec[value_i])?;
        e.1 += 1.0;
    }
    Ok(Curves {
        loss: loss.into_iter().map(|(k, (s, n))| (k, s / n)).collect(),
        values: values.into_iter().map(|(k, (s, n))| (k, s / n)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub final_loss: f64,
    pub divergence_step: Option<u64>,
    /// `final_loss` minus the first run's.
    pub diff_vs_first: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    /// Labels ordered best first; diverged runs last, earliest crash last.
    pub ranking: Vec<String>,
    pub report: String,
    pub report_path: PathBuf,
    pub loss_curves_path: PathBuf,
    pub lr_curves_path: PathBuf,
}

pub fn summary_path(metrics: &Path) -> PathBuf {
    metrics.with_extension("summary")
}

/// Compares runs of the same objective and seed and writes plot data.
pub fn compare(metrics: &[PathBuf], out_dir: &Path) -> Result<Comparison, HarnessError> {
    if metrics.len() < 2 {
        return Err(HarnessError::Compare(format!("need at least 2 metrics files, got {}", metrics.len())));
    }
    let mut summaries = Vec::with_capacity(metrics.len());
    for m in metrics {
        let sp = summary_path(m);
        let text = std::fs::read_to_string(&sp)
            .map_err(|e| HarnessError::Compare(format!("cannot read summary {}: {e}", sp.display())))?;
        summaries.push(Summary::parse(&text)?);
    }
    let head = &summaries[0];
    for (m, s) in metrics.iter().zip(&summaries).skip(1) {
        if s.objective_config != head.objective_config {
            return Err(HarnessError::Compare(format!(
                "{} uses objective {} but {} uses {}; runs are not comparable",
                m.display(),
                s.objective_config,
                metrics[0].display(),
                head.objective_config
            )));
        }
        if s.seed != head.seed {
            return Err(HarnessError::Compare(format!(
                "{} has seed {} but {} has seed {}; runs are not comparable",
                m.display(),
                s.seed,
                metrics[0].display(),
                head.seed
            )));
        }
    }

    let mut labels: Vec<String> = Vec::new();
    for s in &summaries {
        let mut label = s.name.clone();
        let mut k = 2;
        while labels.contains(&label) {
            label = format!("{}#{k}", s.name);
            k += 1;
        }
        labels.push(label);
    }

    let rows: Vec<CompareRow> = summaries
        .iter()
        .zip(&labels)
        .map(|(s, label)| CompareRow {
            label: label.clone(),
            final_loss: s.final_loss,
            divergence_step: s.divergence_step,
            diff_vs_first: s.final_loss - head.final_loss,
        })
        .collect();

    let mut order: Vec<&CompareRow> = rows.iter().collect();
    order.sort_by(|a, b| match (a.divergence_step, b.divergence_step) {
        (None, None) => a.final_loss.total_cmp(&b.final_loss),
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(x), Some(y)) => y.cmp(&x),
    });
    let ranking: Vec<String> = order.iter().map(|r| r.label.clone()).collect();

    let width = labels.iter().map(String::len).max().unwrap_or(3).max(3);
    let mut report = format!(
        "objective={} seed={}\n{:<width$}  {:>14}  {:>14}  {:>10}  status\n",
        head.objective, head.seed, "run", "final_loss", "vs_first", "divergence"
    );
    for r in &rows {
        let (div, status) = match r.divergence_step {
            Some(s) => (s.to_string(), format!("CRASH@{s}")),
            None => ("-".into(), "ok".into()),
        };
        let _ = writeln!(
            report,
            "{:<width$}  {:>14.6e}  {:>14.6e}  {:>10}  {status}",
            r.label, r.final_loss, r.diff_vs_first, div
        );
    }
    let _ = writeln!(report, "ranking: {}", ranking.join(" < "));

    std::fs::create_dir_all(out_dir)?;
    let report_path = out_dir.join("comparison.txt");
    std::fs::write(&report_path, &report)?;

    let loss_curves_path = out_dir.join("loss_curves.csv");
    let lr_curves_path = out_dir.join("lr_curves.csv");
    let mut loss_w = csv::Writer::from_path(&loss_curves_path)?;
    let mut lr_w = csv::Writer::from_path(&lr_curves_path)?;
    loss_w.write_record(["run", "step", "loss"])?;
    lr_w.write_record(["run", "step", "channel", "value"])?;
    for (m, label) in metrics.iter().zip(&labels) {
        let curves = read_curves(m)?;
        for (step, loss) in &curves.loss {
            loss_w.write_record([label.as_str(), &step.to_string(), &loss.to_string()])?;
        }
        for ((channel, step), v) in &curves.values {
            lr_w.write_record([label.as_str(), &step.to_string(), channel.as_str(), &v.to_string()])?;
        }
    }
    loss_w.flush()?;
    lr_w.flush()?;

    Ok(Comparison { rows, ranking, report, report_path, loss_curves_path, lr_curves_path })
}
