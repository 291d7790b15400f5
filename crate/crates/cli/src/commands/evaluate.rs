use std::path::Path;

use anyhow::{Context, Result};

use focuskit_core::io::pfm;
use focuskit_core::metrics::{compute_metrics, LossConfig, MetricsReport};

use super::JobConfig;
use crate::artifact::{read_input, OutputSet};
use crate::cli::EvaluateArgs;

pub fn evaluate(args: &EvaluateArgs, out_dir: &Path) -> Result<MetricsReport> {
    let (pred_bytes, pred_ref) = read_input(&args.pred)?;
    let (gt_bytes, gt_ref) = read_input(&args.gt)?;
    let pred = pfm::decode_depth(&pred_bytes).with_context(|| format!("decoding {}", args.pred.display()))?;
    let gt = pfm::decode_depth(&gt_bytes).with_context(|| format!("decoding {}", args.gt.display()))?;
    let cfg = LossConfig {
        silog_lambda: args.silog_lambda,
        grad_scales: args.grad_scales,
    };
    let report = compute_metrics(&pred, &gt, &args.thresholds, &cfg)?;
    let table = report.to_table();
    print!("{table}");

    let config = JobConfig::new("evaluate", vec![pred_ref, gt_ref], args);
    let prov = config.provenance(None)?;
    let mut out = OutputSet::create(out_dir)?;
    out.write("metrics.txt", table.as_bytes())?;
    if let Some(scene) = &args.csv {
        out.write("metrics.csv", csv_row(scene, &report).as_bytes())?;
    }
    out.finish("metrics.json", &prov, &config, &report)?;
    Ok(report)
}

/// Header plus one row; per-scene files concatenate (minus headers) into a
/// sweep table.
pub fn csv_row(scene: &str, r: &MetricsReport) -> String {
    let mut head = String::from("scene,n_valid,abs_rel,sq_rel,mse,rmse,silog,grad_match,total_loss");
    let mut row = format!(
        "{},{},{},{},{},{},{},{},{}",
        scene.replace(',', "_"),
        r.n_valid,
        r.abs_rel,
        r.sq_rel,
        r.mse,
        r.rmse,
        r.silog,
        r.grad_match,
        r.total_loss
    );
    for d in &r.delta {
        head.push_str(&format!(",delta_{}", d.threshold));
        row.push_str(&format!(",{}", d.fraction));
    }
    format!("{head}\n{row}\n")
}
