use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::{run_experiment, write_file, write_run, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::csv_err;

/// The load-balancing weights swept by default.
pub const ALPHA_GRID: [f64; 4] = [0.05, 0.1, 1.0, 2.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    NExperts,
    Alpha,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_experts" | "n-experts" => Ok(SweepAxis::NExperts),
            "alpha" => Ok(SweepAxis::Alpha),
            other => Err(Error::config(format!(
                "unknown sweep axis `{other}`; expected n_experts or alpha"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::NExperts => "n_experts",
            SweepAxis::Alpha => "alpha",
        })
    }
}

/// `template` with `axis` set to `value` in every routed part of the model
/// (switch layers and the mixture-of-experts head).
pub fn apply_axis(template: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut config = template.clone();
    let model = &mut config.model;
    let sections: Vec<_> = model.switch.iter_mut().chain(model.moe_head.iter_mut()).collect();
    if sections.is_empty() {
        return Err(Error::config(
            "the template has neither [model.switch] nor [model.moe_head] to sweep over",
        ));
    }
    for moe in sections {
        match axis {
            SweepAxis::NExperts => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::config(format!(
                        "n_experts values must be positive integers, got {value}"
                    )));
                }
                moe.n_experts = value as usize;
            }
            SweepAxis::Alpha => moe.alpha = value,
        }
    }
    Ok(config)
}

/// One row of `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub config_hash: String,
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub em: f64,
    pub f1: f64,
    /// Mean entropy of the dispatch fractions over the last epoch.
    pub final_f_entropy: Option<f64>,
    pub output_dir: PathBuf,
}

/// `sweep --template PATH --axis NAME --values LIST [--out DIR]`. Every
/// value is validated before any training starts. Each run is written to its
/// own directory under `out` (the template's `output_dir` by default) and the
/// rows are collected in `out/sweep.csv`.
pub fn cmd_sweep(
    template: &Path,
    axis: SweepAxis,
    values: &[f64],
    out: Option<PathBuf>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let base = ExperimentConfig::load(template)?;
    let out = out.unwrap_or_else(|| base.output_dir.clone());
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|&v| {
            let mut c = apply_axis(&base, axis, v)?;
            c.output_dir = out.join(format!("{axis}-{v}"));
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (config, &value) in configs.iter().zip(values) {
        log::info!("sweep {axis} = {value}");
        let run = run_experiment(config)?;
        write_run(&run, &config.train, &config.output_dir)?;
        rows.push(SweepRow {
            axis: axis.to_string(),
            value,
            config_hash: run.provenance.config_hash.clone(),
            seed: run.provenance.seed,
            final_loss: run.metrics.final_loss,
            em: run.metrics.em,
            f1: run.metrics.f1,
            final_f_entropy: run.output.epochs.last().and_then(|e| e.mean_f_entropy),
            output_dir: config.output_dir.clone(),
        });
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::contract(e.to_string()))?;
    write_file(&out.join("sweep.csv"), bytes)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::MoEConfig;

    #[test]
    fn axis_parsing_and_application() {
        assert_eq!("alpha".parse::<SweepAxis>().unwrap(), SweepAxis::Alpha);
        assert!("depth".parse::<SweepAxis>().is_err());

        let mut t = ExperimentConfig::default();
        assert!(apply_axis(&t, SweepAxis::Alpha, 0.1).is_err());
        t.model.switch = Some(MoEConfig::default());
        let c = apply_axis(&t, SweepAxis::NExperts, 8.0).unwrap();
        assert_eq!(c.model.switch.unwrap().n_experts, 8);
        assert!(apply_axis(&t, SweepAxis::NExperts, 1.5).is_err());
        let c = apply_axis(&t, SweepAxis::Alpha, 2.0).unwrap();
        assert_eq!(c.model.switch.unwrap().alpha, 2.0);
    }
}
