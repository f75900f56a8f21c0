//! Metrics rows and the provenance-stamped CSV writer.
//!
//! Every CSV starts with `#`-prefixed provenance lines embedding the build
//! identifier and the complete resolved run configuration as JSON, so any
//! output file can be traced back to an exact, re-runnable setup. Rows never
//! contain wallclock readings; timing lives on [`MetricsRow`] for reporting
//! but stays out of the file so identical (config, seed) runs serialize
//! byte-identically.

use std::io::Write;

use crate::config::{build_id, RunConfig};
use crate::Result;

/// One evaluation point of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    /// Mean extrinsic team return per evaluation episode.
    pub team_return: f64,
    pub agent_returns: Vec<f64>,
    pub success_rate: f64,
    /// Mean over landmarks of the closest agent's distance (particle only).
    pub avg_distance: f64,
    /// Colliding agent pairs per evaluation episode (particle only).
    pub collisions: f64,
    /// Influence value of the estimator feeding the regularizer.
    pub f_value: f64,
    pub psi_mean: f64,
    pub psi_max: f64,
    pub critic_losses: Vec<f64>,
    /// Not serialized into the CSV.
    pub wallclock_secs: f64,
}

impl MetricsRow {
    pub fn column_header(n_agents: usize) -> String {
        let mut cols = vec![
            "episode".to_string(),
            "team_return".to_string(),
            "success_rate".to_string(),
            "avg_distance".to_string(),
            "collisions".to_string(),
            "f_value".to_string(),
            "psi_mean".to_string(),
            "psi_max".to_string(),
        ];
        for i in 0..n_agents {
            cols.push(format!("return_agent{i}"));
        }
        for i in 0..n_agents {
            cols.push(format!("critic_loss_agent{i}"));
        }
        cols.join(",")
    }

    pub fn to_csv_line(&self) -> String {
        let mut fields = vec![
            self.episode.to_string(),
            self.team_return.to_string(),
            self.success_rate.to_string(),
            self.avg_distance.to_string(),
            self.collisions.to_string(),
            self.f_value.to_string(),
            self.psi_mean.to_string(),
            self.psi_max.to_string(),
        ];
        fields.extend(self.agent_returns.iter().map(|v| v.to_string()));
        fields.extend(self.critic_losses.iter().map(|v| v.to_string()));
        fields.join(",")
    }
}

/// Provenance header lines shared by all emitted CSV files.
pub fn provenance_header(config: &RunConfig) -> String {
    format!(
        "# cordex metrics v1\n# build: {}\n# config: {}\n",
        build_id(),
        config.to_json_compact()
    )
}

/// Streams rows to any writer, provenance first.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, config: &RunConfig, n_agents: usize) -> Result<Self> {
        out.write_all(provenance_header(config).as_bytes())?;
        writeln!(out, "{}", MetricsRow::column_header(n_agents))?;
        Ok(MetricsWriter { out })
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv_line())?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
