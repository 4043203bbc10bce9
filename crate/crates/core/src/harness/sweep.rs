use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::config::RunConfig;
use super::emit::{emit, load_summary, SUMMARY_FILE};
use super::run::run_repeated;
use super::summary::RunSummary;

/// One swept parameter, parsed from `name=v1,v2,…`.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, values) =
            s.split_once('=').ok_or_else(|| Error::config("vary", format!("expected name=v1,v2 in {s:?}")))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::config("vary", format!("{v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let axis = Axis { name: name.trim().to_string(), values };
        axis.apply(&mut RunConfig::default(), 0.0)?;
        Ok(axis)
    }
}

impl Axis {
    fn apply(&self, cfg: &mut RunConfig, v: f64) -> Result<()> {
        match self.name.as_str() {
            "f_sub" => cfg.f_sub = v,
            "f_upl" => cfg.f_upl = v,
            "f_bdc" => cfg.f_bdc = Some(v),
            "r_com" => cfg.world.r_com = v,
            "n_cavs" => cfg.world.n_cavs = v as u32,
            "n_normal" => cfg.world.n_normal = v as u32,
            "seed" => cfg.world.seed = v as u64,
            "duration_s" => cfg.duration_s = v,
            other => return Err(Error::config("vary", format!("cannot vary {other:?}"))),
        }
        Ok(())
    }
}

/// Every combination of the axes, first axis varying slowest.
pub fn grid(axes: &[Axis]) -> Vec<Vec<(String, f64)>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push((axis.name.clone(), v));
                    p
                })
            })
            .collect()
    })
}

fn cell_dir(out: &Path, cell: &[(String, f64)]) -> PathBuf {
    let name: Vec<String> = cell.iter().map(|(n, v)| format!("{n}={v}")).collect();
    out.join(if name.is_empty() { "base".to_string() } else { name.join("_") })
}

/// Runs every grid cell into its own subdirectory of `out`.
pub fn sweep(base: &RunConfig, axes: &[Axis], repeats: usize, out: &Path) -> Result<Vec<RunSummary>> {
    let mut summaries = Vec::new();
    for cell in grid(axes) {
        let mut cfg = base.clone();
        for ((name, v), axis) in cell.iter().zip(axes) {
            debug_assert_eq!(&axis.name, name);
            axis.apply(&mut cfg, *v)?;
        }
        cfg.validate()?;
        let run = run_repeated(&cfg, repeats)?;
        emit(&run.series, &run.summary, &run.ledger, run.trace.as_deref(), &cell_dir(out, &cell))?;
        summaries.push(run.summary);
    }
    Ok(summaries)
}

/// Summaries found in `dir` itself or in its immediate subdirectories, by path.
pub fn collect_summaries(dir: &Path) -> Result<Vec<(PathBuf, RunSummary)>> {
    let own = dir.join(SUMMARY_FILE);
    if own.exists() {
        return Ok(vec![(dir.to_path_buf(), load_summary(&own)?)]);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(SUMMARY_FILE).exists())
        .collect();
    subdirs.sort();
    subdirs.into_iter().map(|p| Ok((p.clone(), load_summary(&p.join(SUMMARY_FILE))?))).collect()
}

fn pct(stat: Option<super::summary::Stat>) -> String {
    stat.map_or_else(|| "n/a".to_string(), |s| format!("{:.2}±{:.2}", 100.0 * s.mean, 100.0 * s.std))
}

/// Aligned text table of one-second average improvement rates, in percent.
pub fn report_table(rows: &[(PathBuf, RunSummary)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>8} {:>8} {:>8} {:>6} {:>16} {:>16}",
        "r_com_m", "f_sub_hz", "f_upl_hz", "t0_s", "delta_gt_%", "delta_lim_%"
    );
    for (_, s) in rows {
        let imp = &s.improvement;
        for b in &imp.buckets {
            let _ = writeln!(
                out,
                "{:>8} {:>8} {:>8} {:>6} {:>16} {:>16}",
                imp.r_com,
                imp.f_sub,
                imp.f_upl,
                b.t0_s,
                pct(b.delta_gt),
                pct(b.delta_lim)
            );
        }
    }
    out
}
