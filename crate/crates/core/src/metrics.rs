//! Depth evaluation metrics and the training loss.
//!
//! Everything is computed on the intersection of the two validity masks.
//! Sums use a fixed pairwise reduction so reports are bit-stable regardless
//! of how the caller batches work.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::raster::DepthMap;

pub const DEFAULT_DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.5625, 1.953125];
pub const DEFAULT_SILOG_LAMBDA: f64 = 0.5;
pub const DEFAULT_GRAD_SCALES: usize = 4;
pub const GRAD_MATCH_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub silog_lambda: f64,
    pub grad_scales: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            silog_lambda: DEFAULT_SILOG_LAMBDA,
            grad_scales: DEFAULT_GRAD_SCALES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaScore {
    pub threshold: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub mse: f64,
    pub rmse: f64,
    pub delta: Vec<DeltaScore>,
    pub silog: f64,
    pub grad_match: f64,
    pub total_loss: f64,
    pub n_valid: usize,
    pub loss_config: LossConfig,
}

impl MetricsReport {
    pub fn delta_at(&self, threshold: f64) -> Option<f64> {
        self.delta.iter().find(|d| d.threshold == threshold).map(|d| d.fraction)
    }

    /// Aligned two-column text table.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("n_valid".into(), self.n_valid.to_string()),
            ("abs_rel".into(), format!("{:.6}", self.abs_rel)),
            ("sq_rel".into(), format!("{:.6}", self.sq_rel)),
            ("mse".into(), format!("{:.6e}", self.mse)),
            ("rmse".into(), format!("{:.6}", self.rmse)),
        ];
        for d in &self.delta {
            rows.push((format!("delta<{}", d.threshold), format!("{:.4}", d.fraction)));
        }
        rows.push(("silog".into(), format!("{:.6}", self.silog)));
        rows.push(("grad_match".into(), format!("{:.6}", self.grad_match)));
        rows.push(("total_loss".into(), format!("{:.6}", self.total_loss)));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v:>14}\n"))
            .collect()
    }
}

/// Fixed-shape pairwise summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().fold(0.0, |a, b| a + b);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// (pred, gt) pairs on the shared valid mask; both must be positive there.
fn valid_pairs(pred: &DepthMap, gt: &DepthMap) -> Result<Vec<(f64, f64)>> {
    if pred.dims() != gt.dims() {
        return Err(mismatch(format!("prediction is {:?} but ground truth is {:?}", pred.dims(), gt.dims())));
    }
    let pairs: Vec<(f64, f64)> = pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(pred.mask().iter().zip(gt.mask()))
        .filter(|(_, (a, b))| **a && **b)
        .map(|((p, g), _)| (*p, *g))
        .collect();
    if pairs.is_empty() {
        return Err(invalid("no pixel is valid in both prediction and ground truth"));
    }
    if let Some((p, g)) = pairs.iter().find(|(p, g)| !(*p > 0.0 && *g > 0.0)) {
        return Err(invalid(format!("depths must be positive on the valid mask (pred {p}, gt {g})")));
    }
    Ok(pairs)
}

pub fn silog_loss(pred: &DepthMap, gt: &DepthMap, lambda: f64) -> Result<f64> {
    let pairs = valid_pairs(pred, gt)?;
    let g: Vec<f64> = pairs.iter().map(|(p, t)| p.ln() - t.ln()).collect();
    Ok(silog_from_residuals(&g, lambda))
}

fn silog_from_residuals(g: &[f64], lambda: f64) -> f64 {
    let g2: Vec<f64> = g.iter().map(|v| v * v).collect();
    let m = mean(g);
    // rounding can push the difference a hair below zero when g is constant
    (mean(&g2) - lambda * m * m).max(0.0).sqrt()
}

/// Multi-scale gradient matching on the log-depth residual. Scale `s` keeps
/// every `2^s`-th pixel; at each scale the loss is the mean absolute forward
/// difference in x plus the same in y, each over pairs whose two ends are
/// valid in both maps. Scales without any valid pair contribute zero.
pub fn grad_match_loss(pred: &DepthMap, gt: &DepthMap, n_scales: usize) -> Result<f64> {
    valid_pairs(pred, gt)?;
    if n_scales == 0 {
        return Err(invalid("gradient matching needs at least one scale"));
    }
    let (w, h) = pred.dims();
    let min_side = 1usize << (n_scales - 1);
    if w < min_side || h < min_side {
        return Err(invalid(format!(
            "{w}x{h} is too small for {n_scales} scales (needs >= {min_side} per side)"
        )));
    }
    let residual: Vec<Option<f64>> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            match (pred.get(x, y), gt.get(x, y)) {
                (Some(p), Some(g)) => Some(p.ln() - g.ln()),
                _ => None,
            }
        })
        .collect();
    let mut per_scale = Vec::with_capacity(n_scales);
    for s in 0..n_scales {
        let step = 1usize << s;
        let mut dx = Vec::new();
        let mut dy = Vec::new();
        for y in (0..h).step_by(step) {
            for x in (0..w).step_by(step) {
                let Some(r) = residual[y * w + x] else { continue };
                if x + step < w {
                    if let Some(rx) = residual[y * w + x + step] {
                        dx.push((rx - r).abs());
                    }
                }
                if y + step < h {
                    if let Some(ry) = residual[(y + step) * w + x] {
                        dy.push((ry - r).abs());
                    }
                }
            }
        }
        let mx = if dx.is_empty() { 0.0 } else { mean(&dx) };
        let my = if dy.is_empty() { 0.0 } else { mean(&dy) };
        per_scale.push(mx + my);
    }
    Ok(mean(&per_scale))
}

pub fn combine_loss(silog: f64, grad_match: f64) -> f64 {
    silog + GRAD_MATCH_WEIGHT * grad_match
}

pub fn total_loss(pred: &DepthMap, gt: &DepthMap, cfg: &LossConfig) -> Result<f64> {
    let s = silog_loss(pred, gt, cfg.silog_lambda)?;
    let g = grad_match_loss(pred, gt, cfg.grad_scales)?;
    Ok(combine_loss(s, g))
}

pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, thresholds: &[f64], cfg: &LossConfig) -> Result<MetricsReport> {
    let pairs = valid_pairs(pred, gt)?;
    if let Some(k) = thresholds.iter().find(|k| !(k.is_finite() && **k >= 1.0)) {
        return Err(invalid(format!("delta threshold {k} must be >= 1")));
    }
    let mut thresholds = thresholds.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let abs_rel: Vec<f64> = pairs.iter().map(|(p, g)| (p - g).abs() / g).collect();
    let sq_rel: Vec<f64> = pairs.iter().map(|(p, g)| (p - g) * (p - g) / g).collect();
    let sq: Vec<f64> = pairs.iter().map(|(p, g)| (p - g) * (p - g)).collect();
    let ratio: Vec<f64> = pairs.iter().map(|(p, g)| (p / g).max(g / p)).collect();
    let n = pairs.len();
    let delta = thresholds
        .iter()
        .map(|&k| DeltaScore {
            threshold: k,
            fraction: ratio.iter().filter(|r| **r < k).count() as f64 / n as f64,
        })
        .collect();
    let mse = mean(&sq);
    let g: Vec<f64> = pairs.iter().map(|(p, t)| p.ln() - t.ln()).collect();
    let silog = silog_from_residuals(&g, cfg.silog_lambda);
    let grad_match = grad_match_loss(pred, gt, cfg.grad_scales)?;
    Ok(MetricsReport {
        abs_rel: mean(&abs_rel),
        sq_rel: mean(&sq_rel),
        mse,
        rmse: mse.sqrt(),
        delta,
        silog,
        grad_match,
        total_loss: combine_loss(silog, grad_match),
        n_valid: n,
        loss_config: *cfg,
    })
}
