//! CSV writers. Trajectories use the long layout `time,x,component,value`
//! with 1-based component indices.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use fts_core::sim::Trajectory;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

#[derive(Serialize)]
struct Sample {
    time: f64,
    x: f64,
    component: usize,
    value: f64,
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, every: usize) -> Result<()> {
    let mut w = writer(path)?;
    let last = traj.snapshots.len() - 1;
    for (p, s) in traj.snapshots.iter().enumerate() {
        if p % every != 0 && p != last {
            continue;
        }
        for c in 0..s.components {
            for (node, &value) in s.component(c).iter().enumerate() {
                w.serialize(Sample {
                    time: s.time,
                    x: s.grid.x(node),
                    component: c + 1,
                    value,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ControlSample {
    time: f64,
    component: usize,
    value: f64,
    exit_time: Option<f64>,
}

pub fn write_controls(path: &Path, traj: &Trajectory, k: usize) -> Result<()> {
    let mut w = writer(path)?;
    for ev in &traj.controls {
        for (c, &value) in ev.values.iter().enumerate() {
            w.serialize(ControlSample {
                time: ev.time,
                component: k + c + 1,
                value,
                exit_time: ev.exit_times.get(c).copied().flatten(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct AuxSample {
    time: f64,
    channel: usize,
    zeta: f64,
    dzeta: f64,
    eta: f64,
    deta: f64,
}

pub fn write_aux(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = writer(path)?;
    for rec in &traj.aux {
        for (c, v) in rec.channels.iter().enumerate() {
            w.serialize(AuxSample {
                time: rec.time,
                channel: c + 1,
                zeta: v.zeta,
                dzeta: v.dzeta,
                eta: v.eta,
                deta: v.deta,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes serializable rows as CSV to `path`, or to stdout.
pub fn write_rows<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
