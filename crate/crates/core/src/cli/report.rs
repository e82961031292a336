use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::pipeline::{ComparisonRow, DISTILL_LOG, VAL_LOG};
use super::runs::{read_stage_manifest, FILES_MANIFEST};
use super::sweep::{SweepRow, SWEEP_SUMMARY};
use crate::adapt::{read_eval_csv, AdaptLog};
use crate::distill::{read_csv, EpochLog, ValLog};
use crate::error::{Error, Result};

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::Other(format!("plotting {}: {e}", path.display()))
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.08).max(1e-9 + lo.abs() * 0.05);
    (lo - pad, hi + pad)
}

pub type Series = (String, Vec<(f64, f64)>);

/// Static SVG line chart with one line (plus markers) per series.
pub fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let err = plot_err(path);
    let xs = padded_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let ys = padded_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(64)
        .build_cartesian_2d(xs.0..xs.1, ys.0..ys.1)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(&err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(&err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(&err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

/// Static SVG bar chart with one labelled bar per entry.
pub fn bar_plot(path: &Path, title: &str, y_label: &str, bars: &[(String, f64)]) -> Result<()> {
    let err = plot_err(path);
    let (lo, hi) = padded_range(bars.iter().map(|b| b.1).chain(std::iter::once(0.0)));
    let n = bars.len().max(1);
    let root = SVGBackend::new(path, (80 * n as u32 + 200, 460)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let labels: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(60)
        .y_label_area_size(64)
        .build_cartesian_2d(0f64..n as f64, lo.min(0.0)..hi)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            labels.get(i).cloned().unwrap_or_default()
        })
        .y_desc(y_label)
        .draw()
        .map_err(&err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, (_, v))| {
            let color = PALETTE[i % PALETTE.len()];
            Rectangle::new([(i as f64 + 0.15, 0.0), (i as f64 + 0.85, *v)], color.filled())
        }))
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

/// Loss curves and learning rate of one distillation run.
pub fn distill_plots(run: &Path, out: &Path, tag: &str) -> Result<Vec<PathBuf>> {
    let log: Vec<EpochLog> = read_csv(&run.join(DISTILL_LOG))?;
    let val: Vec<ValLog> = read_csv(&run.join(VAL_LOG)).unwrap_or_default();
    let pts = |f: &dyn Fn(&EpochLog) -> f64| log.iter().map(|r| (r.epoch as f64, f(r))).collect::<Vec<_>>();
    let mut series: Vec<Series> = vec![
        ("train total".into(), pts(&|r| r.loss_total)),
        ("distill".into(), pts(&|r| r.loss_distill)),
        ("recon spatial".into(), pts(&|r| r.loss_recon_spa)),
        ("recon frequency".into(), pts(&|r| r.loss_recon_freq)),
    ];
    if !val.is_empty() {
        series.push(("val total".into(), val.iter().map(|r| (r.epoch as f64, r.loss_total)).collect()));
    }
    let loss = out.join(format!("loss_{tag}.svg"));
    line_plot(&loss, "Distillation loss", "epoch", "loss", &series)?;
    let lr = out.join(format!("lr_{tag}.svg"));
    line_plot(&lr, "Learning rate", "epoch", "lr (end of epoch)", &[("lr".into(), pts(&|r| r.lr))])?;
    Ok(vec![loss, lr])
}

/// Plots derived from a sweep summary.
pub fn sweep_plots(rows: &[SweepRow], kind: &str, out: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut made = Vec::new();
    let metric = |r: &SweepRow| r.final_val_loss_total.unwrap_or(r.final_loss_total);
    match kind {
        "ablation" => {
            let layer: Vec<&SweepRow> = rows.iter().filter(|r| r.variant.starts_with("layer-")).collect();
            if !layer.is_empty() {
                let p = out.join(format!("{prefix}metric_vs_layer.svg"));
                let mut series = vec![(
                    "validation loss".to_string(),
                    layer.iter().map(|r| (r.mid_layer as f64, metric(r))).collect(),
                )];
                if layer.iter().all(|r| r.probe_accuracy.is_some()) {
                    series.push((
                        "probe accuracy".to_string(),
                        layer.iter().map(|r| (r.mid_layer as f64, r.probe_accuracy.unwrap_or(f64::NAN))).collect(),
                    ));
                }
                line_plot(&p, "Reconstruction layer sweep", "mid layer", "metric", &series)?;
                made.push(p);
            }
            let modes: Vec<(String, f64)> = rows
                .iter()
                .filter(|r| !r.variant.starts_with("layer-"))
                .map(|r| (r.variant.clone(), metric(r)))
                .collect();
            if !modes.is_empty() {
                let p = out.join(format!("{prefix}mim_weighting.svg"));
                bar_plot(&p, "Masking domain × weighting", "validation loss", &modes)?;
                made.push(p);
            }
        }
        "subset" => {
            let p = out.join(format!("{prefix}metric_vs_subset_size.svg"));
            let series = vec![(
                "validation loss".to_string(),
                rows.iter().map(|r| (r.budget as f64, metric(r))).collect(),
            )];
            line_plot(&p, "Subset size", "coreset samples", "validation loss", &series)?;
            made.push(p);
        }
        _ => {
            let p = out.join(format!("{prefix}strategy.svg"));
            let bars: Vec<(String, f64)> = rows.iter().map(|r| (r.variant.clone(), metric(r))).collect();
            bar_plot(&p, "Selection strategy", "validation loss", &bars)?;
            made.push(p);
        }
    }
    Ok(made)
}

fn run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(FILES_MANIFEST).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(FILES_MANIFEST).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Writes plots and `summary.md` for every completed run under `root` (or
/// for `root` itself if it is a run directory) into `<root>/report`.
pub fn report(root: &Path) -> Result<PathBuf> {
    let dirs = run_dirs(root)?;
    if dirs.is_empty() {
        return Err(Error::Empty(format!("no completed runs under {}", root.display())));
    }
    let out = root.join("report");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut md = String::from("# Run report\n\n");
    let _ = writeln!(md, "| run | stage | files |\n|---|---|---|");
    for d in &dirs {
        let m = read_stage_manifest(d)?;
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(md, "| {name} | {} | {} |", m.stage, m.files.len());
    }
    for d in &dirs {
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let m = read_stage_manifest(d)?;
        let _ = writeln!(md, "\n## {name}\n");
        if m.stage == "distill" {
            let log: Vec<EpochLog> = read_csv(&d.join(DISTILL_LOG))?;
            if let Some(last) = log.last() {
                let _ = writeln!(
                    md,
                    "Final epoch {}: total {:.5}, distill {:.5}, recon spatial {:.5}, recon frequency {:.5}, mean s_cons {:.4}.\n",
                    last.epoch, last.loss_total, last.loss_distill, last.loss_recon_spa, last.loss_recon_freq, last.mean_s_cons
                );
            }
            for p in distill_plots(d, &out, &name)? {
                let _ = writeln!(md, "![{0}]({0})", p.file_name().unwrap_or_default().to_string_lossy());
            }
        } else if m.stage.starts_with("adapt") || m.stage.starts_with("vanilla") {
            let log: Vec<AdaptLog> = read_csv(&d.join("adapt_log.csv"))?;
            let p = out.join(format!("adapt_{name}.svg"));
            line_plot(
                &p,
                "Head training",
                "epoch",
                "loss",
                &[("loss".into(), log.iter().map(|r| (r.epoch as f64, r.loss)).collect())],
            )?;
            let _ = writeln!(md, "![{0}]({0})\n", p.file_name().unwrap_or_default().to_string_lossy());
            let _ = writeln!(md, "| class | metric | value | n |\n|---|---|---|---|");
            for r in read_eval_csv(&d.join("eval.csv"))? {
                let _ = writeln!(md, "| {} | {} | {:.4} | {} |", r.class, r.metric, r.value, r.n);
            }
            let cmp = d.join("comparison.csv");
            if cmp.exists() {
                let rows: Vec<ComparisonRow> = read_csv(&cmp)?;
                let _ = writeln!(md, "\n| class | metric | distilled | vanilla | delta |\n|---|---|---|---|---|");
                for r in rows {
                    let _ = writeln!(
                        md,
                        "| {} | {} | {:.4} | {:.4} | {:+.4} |",
                        r.class, r.metric, r.distilled, r.vanilla, r.delta
                    );
                }
            }
        } else if m.stage.starts_with("sweep") {
            let rows: Vec<SweepRow> = read_csv(&d.join(SWEEP_SUMMARY))?;
            let kind = m.stage.trim_start_matches("sweep-");
            let _ = writeln!(md, "| variant | train samples | final loss | final val loss |\n|---|---|---|---|");
            for r in &rows {
                let val = r.final_val_loss_total.map_or("–".to_string(), |v| format!("{v:.5}"));
                let _ = writeln!(md, "| {} | {} | {:.5} | {val} |", r.variant, r.train_samples, r.final_loss_total);
            }
            for p in sweep_plots(&rows, kind, &out, &format!("{name}_"))? {
                let _ = writeln!(md, "\n![{0}]({0})", p.file_name().unwrap_or_default().to_string_lossy());
            }
        } else {
            for f in &m.files {
                let _ = writeln!(md, "- `{}` ({} bytes)", f.path, f.bytes);
            }
        }
    }
    let p = out.join("summary.md");
    std::fs::write(&p, md).map_err(|e| Error::io(&p, e))?;
    Ok(out)
}
