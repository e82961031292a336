use std::path::PathBuf;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::RunConfig;
use super::pipeline::{read_aggregate, DistillSummary, Pipeline, TaskArg, DISTILL_SUMMARY};
use super::report::sweep_plots;
use super::runs::Stage;
use crate::coreset::Strategy;
use crate::distill::{ablation_variants, write_csv};
use crate::error::{Error, Result};

pub const SWEEP_SUMMARY: &str = "summary.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepKind {
    /// Masking domain × weighting grid plus the reconstruction-layer sweep.
    Ablation,
    /// Coreset size.
    Subset,
    /// Selection strategy at the configured budget.
    Strategy,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Ablation => "ablation",
            SweepKind::Subset => "subset",
            SweepKind::Strategy => "strategy",
        }
    }
}

/// One variant of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub mim: String,
    pub weighting: String,
    pub mid_layer: usize,
    pub strategy: String,
    pub budget: usize,
    pub train_samples: usize,
    pub final_loss_total: f64,
    pub final_val_loss_total: Option<f64>,
    pub probe_accuracy: Option<f64>,
    pub run_dir: String,
}

fn strategy_name(s: Strategy) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn variants(base: &RunConfig, kind: SweepKind) -> Vec<(String, RunConfig)> {
    match kind {
        SweepKind::Ablation => ablation_variants(&base.distill)
            .into_iter()
            .map(|(name, d)| {
                let mut c = base.clone();
                c.distill = d;
                (name, c)
            })
            .collect(),
        SweepKind::Subset => base
            .sweep
            .budget_fractions
            .iter()
            .map(|&f| {
                let mut c = base.clone();
                c.coreset.budget = None;
                c.coreset.budget_fraction = f;
                (format!("subset-{f}"), c)
            })
            .collect(),
        SweepKind::Strategy => base
            .sweep
            .strategies
            .iter()
            .map(|&s| {
                let mut c = base.clone();
                c.coreset.strategy = s;
                (strategy_name(s), c)
            })
            .collect(),
    }
}

/// Runs every variant of a sweep (sharing upstream stages), then writes a
/// summary CSV and plots into `<output_root>/sweep-<kind>-<hash>`.
pub fn sweep(base: &RunConfig, kind: SweepKind, force: bool) -> Result<Stage> {
    base.validate()?;
    let vs = variants(base, kind);
    for (_, c) in &vs {
        c.validate()?;
    }
    if vs.is_empty() {
        return Err(Error::Config(format!("{} sweep has no variants", kind.name())));
    }
    let mut rows = Vec::with_capacity(vs.len());
    let mut ids = Vec::with_capacity(vs.len());
    for (name, c) in &vs {
        info!("sweep {}: variant {name}", kind.name());
        let p = Pipeline::new(c.clone(), force)?;
        p.pretrain_teacher()?;
        let coreset = p.curate()?;
        let stage = p.distill()?;
        let summary: DistillSummary = serde_json::from_str(
            &std::fs::read_to_string(stage.path(DISTILL_SUMMARY)).map_err(|e| Error::io(stage.path(DISTILL_SUMMARY), e))?,
        )?;
        let probe_accuracy = if c.sweep.evaluate {
            let (a, _, _) = p.adapt(TaskArg::Cls, false)?;
            Some(read_aggregate(&a.dir)?)
        } else {
            None
        };
        ids.push(json!([stage.id, coreset.id]));
        rows.push(SweepRow {
            variant: name.clone(),
            mim: c.distill.mim.tag().to_string(),
            weighting: c.distill.weighting.tag().to_string(),
            mid_layer: c.distill.mid_layer,
            strategy: strategy_name(c.coreset.strategy),
            budget: summary.train_samples,
            train_samples: summary.train_samples,
            final_loss_total: summary.final_loss_total,
            final_val_loss_total: summary.final_val_loss_total,
            probe_accuracy,
            run_dir: stage.dir.display().to_string(),
        });
    }
    let stage = Stage::new(
        &base.paths.output_root,
        &format!("sweep-{}", kind.name()),
        &json!({ "kind": kind.name(), "variants": ids }),
    );
    stage.begin(base)?;
    write_csv(&rows, &stage.path(SWEEP_SUMMARY))?;
    let plots = sweep_plots(&rows, kind.name(), &stage.dir, "")?;
    let names: Vec<String> = plots
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let mut files: Vec<&str> = vec![SWEEP_SUMMARY];
    files.extend(names.iter().map(String::as_str));
    stage.finish(&files)?;
    Ok(stage)
}

/// Directories of every variant run listed in a sweep summary.
pub fn variant_dirs(rows: &[SweepRow]) -> Vec<PathBuf> {
    rows.iter().map(|r| PathBuf::from(&r.run_dir)).collect()
}
