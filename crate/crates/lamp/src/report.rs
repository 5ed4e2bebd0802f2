//! Text formats for metric reports and training logs.
//!
//! A report is ten tab-separated lines, five values then five thresholds:
//!
//! ```text
//! acc	0.4120
//! ...
//! threshold_acc	0.25
//! ```

use std::path::Path;

use lamp_core::train::EpochRecord;
use lamp_core::{Metric, MetricsReport};

use crate::error::{Error, Result};

pub fn format_report(report: &MetricsReport) -> String {
    let mut out = String::new();
    for m in Metric::ALL {
        out.push_str(&format!("{}\t{:.4}\n", m.name(), report.get(m)));
    }
    for m in Metric::ALL {
        out.push_str(&format!("threshold_{}\t{:.2}\n", m.name(), report.threshold(m)));
    }
    out
}

pub fn parse_report(text: &str, path: &Path) -> Result<MetricsReport> {
    let mut values = [None; 5];
    let mut thresholds = [None; 5];
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let (k, v) = line.split_once('\t').ok_or_else(|| err(format!("expected name<TAB>value, got {line:?}")))?;
        let v: f64 = v.trim().parse().map_err(|_| err(format!("bad number {v:?}")))?;
        let (slot, name) = match k.strip_prefix("threshold_") {
            Some(name) => (&mut thresholds, name),
            None => (&mut values, k),
        };
        let m = Metric::parse(name).ok_or_else(|| err(format!("unknown metric {name:?}")))?;
        if slot[m.index()].replace(v).is_some() {
            return Err(err(format!("duplicate entry {k}")));
        }
    }
    let take = |a: [Option<f64>; 5], what: &str| -> Result<[f64; 5]> {
        let mut out = [0.0; 5];
        for (m, v) in Metric::ALL.iter().zip(a) {
            out[m.index()] = v.ok_or_else(|| Error::Data(format!("{}: missing {what} for {}", path.display(), m.name())))?;
        }
        Ok(out)
    };
    Ok(MetricsReport { values: take(values, "value")?, thresholds: take(thresholds, "threshold")? })
}

pub const LOG_HEADER: &str = "epoch,split,loss,acc,ha,ebf1,mif1,maf1";

pub fn format_log_record(r: &EpochRecord) -> String {
    let mut line = format!("{},{},{:.6}", r.epoch, r.split.as_str(), r.loss);
    for m in Metric::ALL {
        line.push_str(&format!(",{:.4}", r.metrics.get(m)));
    }
    line
}
