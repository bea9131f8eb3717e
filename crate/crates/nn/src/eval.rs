//! Scoring trained bundles and the multi-seed variant comparison.

use std::fmt::Write as _;

use candle_core::Tensor;
use ego3dpose_core::dataset::Sample;
use ego3dpose_core::metrics::{bar_chart_svg, EvalAccumulator};
use ego3dpose_core::{EvalReport, Skeleton};
use serde::{Deserialize, Serialize};

use crate::batch;
use crate::config::Variant;
use crate::model::NetBundle;
use crate::train::HeatmapCache;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Mean angle (degrees) between matcher output and true limb direction.
    pub sm_angular_error_deg: Option<f64>,
}

/// Eval-mode predictions `(N, J, 3)` and, with a matcher, `(N, L, 3)`.
pub fn predict(bundle: &NetBundle, cache: &HeatmapCache, chunk: usize) -> Result<(Tensor, Option<Tensor>)> {
    let (mut poses, mut orients) = (Vec::new(), Vec::new());
    let idx: Vec<usize> = (0..cache.len()).collect();
    for c in idx.chunks(chunk.max(1)) {
        let (jh, peh) = cache.select(c)?;
        let out = bundle.forward_stage2(&jh, peh.as_ref(), false)?;
        poses.push(out.pose.detach());
        if let Some(o) = out.orientations {
            orients.push(o.detach());
        }
    }
    if poses.is_empty() {
        return Err(Error::Parameter("nothing to predict".into()));
    }
    let o = if orients.is_empty() { None } else { Some(Tensor::cat(&orients, 0)?) };
    Ok((Tensor::cat(&poses, 0)?, o))
}

/// Mean angle in degrees between rows of two `(N, L, 3)` tensors.
pub fn mean_angular_error_deg(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let p: Vec<Vec<Vec<f64>>> = pred.to_dtype(candle_core::DType::F64)?.to_vec3()?;
    let g: Vec<Vec<Vec<f64>>> = gt.to_dtype(candle_core::DType::F64)?.to_vec3()?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (ps, gs) in p.iter().zip(&g) {
        for (a, b) in ps.iter().zip(gs) {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            let c = if na > 0.0 && nb > 0.0 {
                (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            sum += c.acos().to_degrees();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Parameter("no orientations".into()));
    }
    Ok(sum / n as f64)
}

pub fn evaluate(
    bundle: &NetBundle,
    cache: &HeatmapCache,
    samples: &[&Sample],
    skeleton: &Skeleton,
    config_hash: &str,
) -> Result<Evaluation> {
    if cache.len() != samples.len() {
        return Err(Error::Parameter(format!("{} cached heatmaps for {} samples", cache.len(), samples.len())));
    }
    let (pose, orient) = predict(bundle, cache, 64)?;
    let pred = batch::to_points(&pose)?;
    let names = skeleton.estimated_joints.iter().map(|&j| skeleton.joint_names[j].clone()).collect();
    let mut acc = EvalAccumulator::new(skeleton.estimated_joints.clone(), names);
    for (p, s) in pred.iter().zip(samples) {
        acc.add(&s.category, p, &s.local_pose.joints)?;
    }
    let sm_angular_error_deg = match orient {
        Some(o) => Some(mean_angular_error_deg(&o, &batch::orientations(samples)?)?),
        None => None,
    };
    Ok(Evaluation { report: acc.finish(config_hash)?, sm_angular_error_deg })
}

/// Full-scale reference values (mm) for each variant: MPJPE, PA-MPJPE.
pub const REFERENCE_MM: [(Variant, f64, f64); 4] = [
    (Variant::Baseline, 79.08, 59.26),
    (Variant::Ph, 75.82, 58.52),
    (Variant::Sm, 66.72, 52.29),
    (Variant::PhSm, 60.82, 48.47),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub sm_angular_error_deg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub n: usize,
    pub mpjpe_mean: f64,
    pub mpjpe_std: f64,
    pub pa_mpjpe_mean: f64,
    pub pa_mpjpe_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<VariantSummary>,
    /// Expected orderings that the means break, e.g. `B+SM <= B`.
    pub violations: Vec<String>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

impl AblationTable {
    pub fn from_rows(rows: Vec<AblationRow>) -> Self {
        let mut summary = Vec::new();
        for v in Variant::ALL {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
            if mine.is_empty() {
                continue;
            }
            let (mpjpe_mean, mpjpe_std) = mean_std(&mine.iter().map(|r| r.mpjpe).collect::<Vec<_>>());
            let (pa_mpjpe_mean, pa_mpjpe_std) = mean_std(&mine.iter().map(|r| r.pa_mpjpe).collect::<Vec<_>>());
            summary.push(VariantSummary { variant: v, n: mine.len(), mpjpe_mean, mpjpe_std, pa_mpjpe_mean, pa_mpjpe_std });
        }
        let mean = |v: Variant| summary.iter().find(|s| s.variant == v).map(|s| s.mpjpe_mean);
        let mut violations = Vec::new();
        for (better, worse) in
            [(Variant::PhSm, Variant::Sm), (Variant::Sm, Variant::Baseline), (Variant::Ph, Variant::Baseline)]
        {
            if let (Some(a), Some(b)) = (mean(better), mean(worse)) {
                if a > b {
                    violations.push(format!("{better} <= {worse} (got {a:.2} > {b:.2} mm)"));
                }
            }
        }
        Self { rows, summary, violations }
    }

    pub fn summary_for(&self, v: Variant) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == v)
    }

    /// Per-seed rows followed by `mean` and `std` rows per variant.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,mpjpe_mm,pa_mpjpe_mm,sm_angle_deg\n");
        for r in &self.rows {
            let a = r.sm_angular_error_deg.map(|v| format!("{v:.3}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{:.4},{:.4},{a}", r.variant, r.seed, r.mpjpe, r.pa_mpjpe);
        }
        for m in &self.summary {
            let _ = writeln!(s, "{},mean,{:.4},{:.4},", m.variant, m.mpjpe_mean, m.pa_mpjpe_mean);
            let _ = writeln!(s, "{},std,{:.4},{:.4},", m.variant, m.mpjpe_std, m.pa_mpjpe_std);
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let bars: Vec<(String, f64, f64)> =
            self.summary.iter().map(|m| (m.variant.to_string(), m.mpjpe_mean, m.mpjpe_std)).collect();
        bar_chart_svg("Test MPJPE by variant", "MPJPE (mm)", &bars)
    }

    /// Human-readable table with relative change against `B`, next to the
    /// full-scale reference numbers.
    pub fn to_text(&self) -> String {
        let base = self.summary_for(Variant::Baseline).map(|s| s.mpjpe_mean);
        let mut s = String::from("variant    MPJPE mm          PA-MPJPE mm       vs B     | reference MPJPE  vs B\n");
        for m in &self.summary {
            let (_, ref_m, _) = REFERENCE_MM.iter().find(|r| r.0 == m.variant).copied().unwrap_or((m.variant, f64::NAN, f64::NAN));
            let rel = base.map(|b| 100.0 * (m.mpjpe_mean - b) / b).unwrap_or(f64::NAN);
            let ref_rel = 100.0 * (ref_m - REFERENCE_MM[0].1) / REFERENCE_MM[0].1;
            let _ = writeln!(
                s,
                "{:<10} {:>7.2} ± {:<6.2}  {:>7.2} ± {:<6.2}  {:>+6.1}%  | {:>7.2}          {:>+6.1}%",
                m.variant.to_string(),
                m.mpjpe_mean,
                m.mpjpe_std,
                m.pa_mpjpe_mean,
                m.pa_mpjpe_std,
                rel,
                ref_m,
                ref_rel
            );
        }
        if self.violations.is_empty() {
            s.push_str("ordering: ok\n");
        } else {
            for v in &self.violations {
                let _ = writeln!(s, "ordering violated: {v}");
            }
        }
        s
    }
}
