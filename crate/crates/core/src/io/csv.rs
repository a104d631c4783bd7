//! Metrics tables. The per-iteration CSV holds one row per
//! (env, method, seed, pair, iter, dim); the summary aggregates over
//! evaluation cells per (env, method, iter).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{io_err, IoError, IoResult};

pub const METRICS_HEADER: &str = "env,method,seed,pair,iter,dim,param_err,traj_dist,label,success";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub env: String,
    pub method: String,
    pub seed: u64,
    pub pair: u64,
    pub iter: u32,
    pub dim: u32,
    pub param_err: f64,
    pub traj_dist: Option<f64>,
    pub label: Option<f64>,
    pub success: Option<bool>,
}

impl MetricsRow {
    fn key(&self) -> (String, String, u64, u64, u32, u32) {
        (
            self.env.clone(),
            self.method.clone(),
            self.seed,
            self.pair,
            self.iter,
            self.dim,
        )
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn opt_bool(v: Option<bool>) -> String {
    v.map(|x| if x { "1" } else { "0" }.to_string())
        .unwrap_or_default()
}

/// Write rows sorted by key; zero rows still produce the header.
pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> IoResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.key());
    let mut out = String::with_capacity(rows.len() * 48 + 64);
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.env,
            r.method,
            r.seed,
            r.pair,
            r.iter,
            r.dim,
            r.param_err,
            opt_f64(r.traj_dist),
            opt_f64(r.label),
            opt_bool(r.success),
        ));
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> IoResult<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => {
            return Err(IoError::Format {
                path: path.display().to_string(),
                msg: "missing or wrong header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let perr = |msg: String| IoError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg,
        };
        if fields.len() != 10 {
            return Err(perr(format!("expected 10 fields, got {}", fields.len())));
        }
        let parse_f = |s: &str| -> Result<Option<f64>, IoError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| perr(format!("bad float '{s}': {e}")))
            }
        };
        rows.push(MetricsRow {
            env: fields[0].to_string(),
            method: fields[1].to_string(),
            seed: fields[2].parse().map_err(|e| perr(format!("seed: {e}")))?,
            pair: fields[3].parse().map_err(|e| perr(format!("pair: {e}")))?,
            iter: fields[4].parse().map_err(|e| perr(format!("iter: {e}")))?,
            dim: fields[5].parse().map_err(|e| perr(format!("dim: {e}")))?,
            param_err: fields[6]
                .parse()
                .map_err(|e| perr(format!("param_err: {e}")))?,
            traj_dist: parse_f(fields[7])?,
            label: parse_f(fields[8])?,
            success: match fields[9] {
                "" => None,
                "1" => Some(true),
                "0" => Some(false),
                other => return Err(perr(format!("bad success flag '{other}'"))),
            },
        });
    }
    Ok(rows)
}

/// Aggregate over evaluation cells (seed, pair) for one (env, method, iter):
/// the parameter error is the mean over dimensions per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub env: String,
    pub method: String,
    pub iter: u32,
    pub cells: usize,
    pub param_err_mean: f64,
    pub param_err_p25: f64,
    pub param_err_median: f64,
    pub param_err_p75: f64,
    /// Mean trajectory distance at this iteration (hockey only).
    pub traj_dist_mean: Option<f64>,
    /// Mean over cells of the best trajectory distance seen up to this
    /// iteration.
    pub traj_dist_best_mean: Option<f64>,
    pub success_rate: Option<f64>,
}

pub const SUMMARY_HEADER: &str = "env,method,iter,cells,param_err_mean,param_err_p25,param_err_median,param_err_p75,traj_dist_mean,traj_dist_best_mean,success_rate";

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Build summary rows from per-dimension metrics rows.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    use std::collections::BTreeMap;
    // cell key: (env, method, seed, pair); collect per-iter means over dims
    type CellKey = (String, String, u64, u64);
    let mut cells: BTreeMap<CellKey, BTreeMap<u32, (f64, u32, Option<f64>, Option<bool>)>> =
        BTreeMap::new();
    for r in rows {
        let cell = cells
            .entry((r.env.clone(), r.method.clone(), r.seed, r.pair))
            .or_default();
        let e = cell.entry(r.iter).or_insert((0.0, 0, None, None));
        e.0 += r.param_err;
        e.1 += 1;
        e.2 = e.2.or(r.traj_dist);
        e.3 = e.3.or(r.success);
    }

    // regroup per (env, method, iter)
    let mut groups: BTreeMap<(String, String, u32), Vec<(f64, Option<f64>, Option<f64>, Option<bool>)>> =
        BTreeMap::new();
    for ((env, method, _seed, _pair), iters) in &cells {
        let mut best_traj: Option<f64> = None;
        let mut ordered: Vec<_> = iters.iter().collect();
        ordered.sort_by_key(|(it, _)| **it);
        for (iter, (err_sum, dims, traj, success)) in ordered {
            if let Some(t) = traj {
                best_traj = Some(best_traj.map_or(*t, |b: f64| b.min(*t)));
            }
            groups
                .entry((env.clone(), method.clone(), *iter))
                .or_default()
                .push((err_sum / *dims as f64, *traj, best_traj, *success));
        }
    }

    groups
        .into_iter()
        .map(|((env, method, iter), vals)| {
            let mut errs: Vec<f64> = vals.iter().map(|v| v.0).collect();
            errs.sort_by(f64::total_cmp);
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let trajs: Vec<f64> = vals.iter().filter_map(|v| v.1).collect();
            let bests: Vec<f64> = vals.iter().filter_map(|v| v.2).collect();
            let succ: Vec<bool> = vals.iter().filter_map(|v| v.3).collect();
            SummaryRow {
                env,
                method,
                iter,
                cells: errs.len(),
                param_err_mean: mean,
                param_err_p25: percentile(&errs, 0.25),
                param_err_median: percentile(&errs, 0.5),
                param_err_p75: percentile(&errs, 0.75),
                traj_dist_mean: (!trajs.is_empty())
                    .then(|| trajs.iter().sum::<f64>() / trajs.len() as f64),
                traj_dist_best_mean: (!bests.is_empty())
                    .then(|| bests.iter().sum::<f64>() / bests.len() as f64),
                success_rate: (!succ.is_empty())
                    .then(|| succ.iter().filter(|&&s| s).count() as f64 / succ.len() as f64),
            }
        })
        .collect()
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> IoResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.env,
            r.method,
            r.iter,
            r.cells,
            r.param_err_mean,
            r.param_err_p25,
            r.param_err_median,
            r.param_err_p75,
            opt_f64(r.traj_dist_mean),
            opt_f64(r.traj_dist_best_mean),
            opt_f64(r.success_rate),
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, pair: u64, iter: u32, dim: u32, err: f64) -> MetricsRow {
        MetricsRow {
            env: "scoop".into(),
            method: "dr".into(),
            seed,
            pair,
            iter,
            dim,
            param_err: err,
            traj_dist: None,
            label: Some(1.0),
            success: Some(err < 0.1),
        }
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("sysid-csv-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn zero_rows_still_writes_the_header() {
        let path = tmp("empty.csv");
        write_metrics(&[], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn rows_round_trip_and_order_is_stable() {
        let rows = vec![row(1, 2, 3, 0, 0.5), row(0, 0, 0, 0, 0.25), row(1, 1, 9, 0, 0.125)];
        let path = tmp("roundtrip.csv");
        write_metrics(&rows, &path).unwrap();
        let first = fs::read_to_string(&path).unwrap();
        write_metrics(&rows, &path).unwrap();
        assert_eq!(first, fs::read_to_string(&path).unwrap());
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 3);
        // sorted by key: seed 0 first
        assert_eq!(back[0].seed, 0);
        assert!(back.contains(&rows[0]));
    }

    #[test]
    fn summary_aggregates_cells() {
        // two cells at iter 0, errors 0.2 / 0.4 -> mean 0.3
        let rows = vec![row(0, 0, 0, 0, 0.2), row(0, 1, 0, 0, 0.4)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].cells, 2);
        assert!((s[0].param_err_mean - 0.3).abs() < 1e-12);
        assert_eq!(s[0].success_rate, Some(0.0));
    }

    #[test]
    fn best_so_far_trajectory_never_increases() {
        let mk = |iter: u32, traj: f64| MetricsRow {
            env: "hockey".into(),
            method: "dr".into(),
            seed: 0,
            pair: 0,
            iter,
            dim: 0,
            param_err: 0.1,
            traj_dist: Some(traj),
            label: None,
            success: None,
        };
        let rows = vec![mk(0, 0.5), mk(1, 0.2), mk(2, 0.9)];
        let s = summarize(&rows);
        let bests: Vec<f64> = s.iter().map(|r| r.traj_dist_best_mean.unwrap()).collect();
        assert_eq!(bests, vec![0.5, 0.2, 0.2]);
    }
}
