use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::protocol::ledger::{kbps, BandwidthLedger};

use super::metrics::{Family, MetricSeries};
use super::summary::RunSummary;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BANDWIDTH_FILE: &str = "bandwidth.csv";
pub const TRACE_FILE: &str = "trace.msgs";

/// Long format: one row per tick per family, undefined values left empty.
pub fn metrics_csv(series: &MetricSeries) -> String {
    let mut out = String::from("tick,time_s,family,value\n");
    for r in &series.records {
        let t = series.time_of(r.tick);
        for f in Family::ALL {
            let v = r.get(f).map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{t},{},{v}", r.tick, f.name());
        }
    }
    out
}

/// One row per second per CAV (world id).
pub fn bandwidth_csv(ledger: &BandwidthLedger) -> String {
    let mut out = String::from(
        "second,vehicle,uplink_bytes,downlink_bytes,uplink_kbps,downlink_kbps,direct_sharing_downlink_kbps\n",
    );
    for ((second, vehicle), c) in ledger.buckets() {
        let _ = writeln!(
            out,
            "{second},{vehicle},{},{},{},{},{}",
            c.uplink,
            c.downlink,
            kbps(c.uplink),
            kbps(c.downlink),
            kbps(c.baseline_downlink)
        );
    }
    out
}

pub fn summary_json(summary: &RunSummary) -> Result<String> {
    let mut s = serde_json::to_string_pretty(summary).map_err(|e| Error::Encode(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `metrics.csv`, `summary.json`, `bandwidth.csv` and, when given,
/// `trace.msgs` into `out_dir`, creating it if needed.
pub fn emit(
    series: &MetricSeries,
    summary: &RunSummary,
    ledger: &BandwidthLedger,
    trace: Option<&str>,
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(out_dir, METRICS_FILE, &metrics_csv(series))?;
    write(out_dir, SUMMARY_FILE, &summary_json(summary)?)?;
    write(out_dir, BANDWIDTH_FILE, &bandwidth_csv(ledger))?;
    if let Some(trace) = trace {
        write(out_dir, TRACE_FILE, trace)?;
    }
    Ok(())
}

pub fn load_summary(path: &Path) -> Result<RunSummary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Decode { offset: 0, reason: format!("{}: {e}", path.display()) })
}
