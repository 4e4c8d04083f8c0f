//! Metrics CSV.
//!
//! One row per class per epoch plus a summary row with `class = all`.
//! Floats carry 17 significant digits; empty cells mean "not applicable".
//! The summary row's `imbalance_ratio` is taken over classes with at least
//! one selected sample; `empty_class` in `flags` marks the infinite case.

use std::io::Write;

use crate::data::fmt_f64;
use crate::trainer::{EpochRecord, MetricsLog};

pub const METRICS_COLUMNS: [&str; 15] = [
    "epoch",
    "class",
    "precision",
    "recall",
    "fscore",
    "selected",
    "test_accuracy",
    "weight_v",
    "weight_s",
    "weight_vtilde",
    "phase",
    "train_loss",
    "imbalance_ratio",
    "head_draws",
    "flags",
];

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn class_rows(r: &EpochRecord, out: &mut Vec<Vec<String>>) {
    for k in 0..r.class_accuracy.len() {
        let w = |pick: fn(&crate::sampling::ClassWeights) -> &Vec<f64>| {
            r.weights.as_ref().map(|cw| fmt_f64(pick(cw)[k])).unwrap_or_default()
        };
        out.push(vec![
            r.epoch.to_string(),
            k.to_string(),
            fmt_f64(r.selection.precision[k]),
            fmt_f64(r.selection.recall[k]),
            fmt_f64(r.selection.fscore[k]),
            r.class_selected[k].to_string(),
            fmt_f64(r.class_accuracy[k]),
            w(|cw| &cw.forward),
            w(|cw| &cw.reversed_raw),
            w(|cw| &cw.reversed),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ]);
    }
    let mut flags = r.flags.clone();
    if r.imbalance.has_empty_class {
        flags.push("empty_class".into());
    }
    out.push(vec![
        r.epoch.to_string(),
        "all".into(),
        fmt_f64(mean(&r.selection.precision)),
        fmt_f64(mean(&r.selection.recall)),
        fmt_f64(r.selection.macro_fscore),
        r.selected_count.to_string(),
        fmt_f64(r.test_accuracy),
        String::new(),
        String::new(),
        String::new(),
        serde_plain(r),
        fmt_f64(r.train_loss),
        fmt_f64(r.imbalance.ratio),
        r.head_draws.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"),
        flags.join(";"),
    ]);
}

fn serde_plain(r: &EpochRecord) -> String {
    match r.phase {
        crate::trainer::Phase::Warmup => "warmup",
        crate::trainer::Phase::Select => "select",
        crate::trainer::Phase::Plain => "plain",
    }
    .to_string()
}

pub fn write_metrics_csv<W: Write>(log: &MetricsLog, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", METRICS_COLUMNS.join(","))?;
    let mut rows = Vec::new();
    for r in &log.epochs {
        class_rows(r, &mut rows);
    }
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn metrics_csv_string(log: &MetricsLog) -> String {
    let mut buf = Vec::new();
    write_metrics_csv(log, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// One parsed metrics row: `(epoch, class, column, value)` for every
/// non-empty numeric cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCell {
    pub epoch: usize,
    pub class: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, thiserror::Error)]
#[error("{origin}:{line}: {reason}")]
pub struct MetricsParseError {
    pub origin: String,
    pub line: usize,
    pub reason: String,
}

/// Numeric cells of a metrics CSV in file order. Text columns (`phase`,
/// `head_draws`, `flags`) are skipped.
pub fn parse_metrics_csv(text: &str, origin: &str) -> Result<Vec<MetricCell>, MetricsParseError> {
    let err = |line: usize, reason: String| MetricsParseError {
        origin: origin.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.split(',').collect(),
        None => return Err(err(1, "empty file".into())),
    };
    if header.len() < 5 || header[..5] != METRICS_COLUMNS[..5] {
        return Err(err(1, format!("header must start with {}", METRICS_COLUMNS[..5].join(","))));
    }
    let mut cells = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(err(lineno, format!("{} fields, header has {}", fields.len(), header.len())));
        }
        let epoch: usize = fields[0]
            .parse()
            .map_err(|_| err(lineno, format!("bad epoch `{}`", fields[0])))?;
        for (col, &v) in header.iter().zip(&fields).skip(2) {
            if v.is_empty() || matches!(*col, "phase" | "head_draws" | "flags") {
                continue;
            }
            let value: f64 = v
                .parse()
                .map_err(|_| err(lineno, format!("bad {col} value `{v}`")))?;
            cells.push(MetricCell {
                epoch,
                class: fields[1].to_string(),
                metric: col.to_string(),
                value,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Mode, RunConfig};
    use crate::trainer::{prepare_data, run};

    fn small_log() -> MetricsLog {
        let mut cfg = RunConfig::default();
        cfg.run.mode = Mode::Item;
        cfg.run.epochs = 3;
        cfg.run.warmup_epochs = 1;
        cfg.data.class_sizes = vec![30, 20];
        cfg.data.dim = 3;
        cfg.data.test_per_class = 5;
        cfg.net.trunk = vec![4];
        cfg.net.experts = 1;
        let data = prepare_data(&cfg).unwrap();
        run(&cfg, &data).unwrap().log
    }

    #[test]
    fn layout() {
        let csv = metrics_csv_string(&small_log());
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("epoch,class,precision,recall,fscore"));
        // Three epochs of two class rows and one summary row.
        assert_eq!(lines.len(), 1 + 3 * 3);
        assert!(lines[3].starts_with("0,all,"));
        assert!(lines[3].contains(",warmup,"));
        assert!(lines.iter().all(|l| l.split(',').count() == METRICS_COLUMNS.len()));
    }

    #[test]
    fn parse_recovers_values() {
        let log = small_log();
        let cells = parse_metrics_csv(&metrics_csv_string(&log), "m.csv").unwrap();
        let acc = cells
            .iter()
            .find(|c| c.epoch == 2 && c.class == "all" && c.metric == "test_accuracy")
            .unwrap();
        assert_eq!(acc.value, log.epochs[2].test_accuracy);
        let f1 = cells
            .iter()
            .find(|c| c.epoch == 1 && c.class == "1" && c.metric == "fscore")
            .unwrap();
        assert_eq!(f1.value, log.epochs[1].selection.fscore[1]);
    }

    #[test]
    fn parse_errors_carry_line() {
        let e = parse_metrics_csv("epoch,class,precision,recall,fscore\n0,all,1,2\n", "m.csv").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(parse_metrics_csv("a,b\n", "m.csv").is_err());
    }
}
