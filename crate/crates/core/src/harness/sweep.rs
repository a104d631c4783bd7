use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::config::ExperimentConfig;
use crate::io::csv::SummaryRow;
use crate::io::{IoError, IoResult};
use crate::pipeline::run_eval;

/// Which hyperparameter the sweep varies: the generated transition count L
/// (datasets regenerated per value) or the context window k (one fixed
/// dataset, retrained per value).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Transitions,
    Window,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Transitions => "L",
            SweepAxis::Window => "k",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "L" | "transitions" => Ok(SweepAxis::Transitions),
            "k" | "window" => Ok(SweepAxis::Window),
            other => Err(format!("unknown sweep axis '{other}' (use L or k)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepMember {
    pub value: usize,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub axis: SweepAxis,
    pub members: Vec<SweepMember>,
}

/// Derive the member config for one sweep value.
pub fn member_config(base: &ExperimentConfig, axis: SweepAxis, value: usize) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.name = format!("{}-{}{}", base.name, axis.name(), value);
    cfg.paths.run_dir = base
        .paths
        .run_dir
        .join(format!("sweep_{}/{}", axis.name(), value));
    match axis {
        SweepAxis::Transitions => cfg.gen.transitions = value,
        SweepAxis::Window => {
            // the window sweep retrains on one fixed dataset
            cfg.model.window = value;
            cfg.paths.data_dir = Some(
                base.paths
                    .data_dir
                    .clone()
                    .unwrap_or_else(|| base.paths.run_dir.join("data")),
            );
        }
    }
    cfg
}

/// Run the sweep: one full dataset+train+eval pipeline per value, plus a
/// joined summary CSV at the sweep root. Refuses to touch an existing
/// output directory unless `force` is set.
pub fn ablation_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[usize],
    force: bool,
) -> IoResult<SweepOutcome> {
    let root = base.paths.run_dir.join(format!("sweep_{}", axis.name()));
    if root.exists() && !force {
        return Err(IoError::Format {
            path: root.display().to_string(),
            msg: "sweep output directory exists; pass --force to reuse/overwrite".into(),
        });
    }
    let mut members = Vec::with_capacity(values.len());
    for &value in values {
        let cfg = member_config(base, axis, value);
        let (_, summary) = run_eval(&cfg)?;
        members.push(SweepMember { value, summary });
    }
    write_joined_summary(&root.join("summary_joined.csv"), axis, &members)?;
    Ok(SweepOutcome { axis, members })
}

fn write_joined_summary(path: &Path, axis: SweepAxis, members: &[SweepMember]) -> IoResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| crate::io::io_err(dir, e))?;
    }
    let mut out = String::new();
    out.push_str(&format!(
        "{},{}\n",
        axis.name().to_lowercase(),
        crate::io::csv::SUMMARY_HEADER
    ));
    for m in members {
        for r in &m.summary {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                m.value,
                r.env,
                r.method,
                r.iter,
                r.cells,
                r.param_err_mean,
                r.param_err_p25,
                r.param_err_median,
                r.param_err_p75,
                r.traj_dist_mean.map(|v| v.to_string()).unwrap_or_default(),
                r.traj_dist_best_mean
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
                r.success_rate.map(|v| v.to_string()).unwrap_or_default(),
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| crate::io::io_err(path, e))
}
