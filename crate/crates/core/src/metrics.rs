//! Pose error metrics, similarity (Procrustes) alignment, report tables and
//! plain SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mean Euclidean distance over the selected joints.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>], joints: &[usize]) -> Result<f64> {
    Ok(mean(&joint_errors(pred, gt, joints)?))
}

pub fn joint_errors(pred: &[Vector3<f64>], gt: &[Vector3<f64>], joints: &[usize]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} predicted vs {} ground-truth joints", pred.len(), gt.len())));
    }
    if joints.is_empty() {
        return Err(Error::Parameter("no joints selected".into()));
    }
    joints
        .iter()
        .map(|&j| {
            if j >= pred.len() {
                Err(Error::Index { what: "joint", index: j, len: pred.len() })
            } else {
                Ok((pred[j] - gt[j]).norm())
            }
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `x -> scale * rotation * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub rotation: Rotation3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), scale: 1.0, translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

fn centroid(p: &[Vector3<f64>]) -> Vector3<f64> {
    p.iter().sum::<Vector3<f64>>() / p.len() as f64
}

/// Rejects point sets that do not span a plane.
fn check_spread(p: &[Vector3<f64>], c: &Vector3<f64>, what: &str) -> Result<()> {
    let cov: Matrix3<f64> = p.iter().map(|x| (x - c) * (x - c).transpose()).sum();
    let mut s = cov.symmetric_eigenvalues().iter().copied().collect::<Vec<_>>();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 1e-12 && s[1] > 1e-9 * s[0]) {
        return Err(Error::Alignment(format!("{what} joints are coincident or collinear")));
    }
    Ok(())
}

/// Least-squares similarity taking `pred` onto `gt` (rotation, translation
/// and uniform scale, reflections excluded).
pub fn procrustes(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Similarity> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} vs {} joints", pred.len(), gt.len())));
    }
    if pred.len() < 3 {
        return Err(Error::Alignment(format!("need at least 3 joints, got {}", pred.len())));
    }
    if pred.iter().chain(gt).any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::Alignment("non-finite coordinates".into()));
    }
    let (mp, mg) = (centroid(pred), centroid(gt));
    check_spread(pred, &mp, "predicted")?;
    check_spread(gt, &mg, "ground-truth")?;
    let mut cross = Matrix3::zeros();
    let mut var = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (x, y) = (p - mp, g - mg);
        cross += y * x.transpose();
        var += x.norm_squared();
    }
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u.determinant() * v_t.determinant()).signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = Rotation3::from_matrix_unchecked(u * fix * v_t);
    // trace(D S) without relying on the order of the singular values.
    let scale = (rotation.matrix().transpose() * cross).trace() / var;
    let translation = mg - rotation * mp * scale;
    Ok(Similarity { rotation, scale, translation })
}

pub fn procrustes_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    let t = procrustes(pred, gt)?;
    Ok(pred.iter().map(|p| t.apply(p)).collect())
}

/// MPJPE after aligning the selected joints.
pub fn pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>], joints: &[usize]) -> Result<f64> {
    let (p, g) = select(pred, gt, joints)?;
    let aligned = procrustes_align(&p, &g)?;
    let all: Vec<usize> = (0..p.len()).collect();
    mpjpe(&aligned, &g, &all)
}

fn select(pred: &[Vector3<f64>], gt: &[Vector3<f64>], joints: &[usize]) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    joint_errors(pred, gt, joints)?;
    Ok((joints.iter().map(|&j| pred[j]).collect(), joints.iter().map(|&j| gt[j]).collect()))
}

/// PA-MPJPE that never fails: degenerate predictions fall back to the best
/// of the identity and the scale-zero collapse onto the ground-truth centroid.
pub fn pa_mpjpe_or_fallback(pred: &[Vector3<f64>], gt: &[Vector3<f64>], joints: &[usize]) -> Result<f64> {
    match pa_mpjpe(pred, gt, joints) {
        Err(Error::Alignment(_)) => {
            let (_, g) = select(pred, gt, joints)?;
            let c = centroid(&g);
            let collapse = mean(&g.iter().map(|x| (x - c).norm()).collect::<Vec<_>>());
            Ok(mpjpe(pred, gt, joints)?.min(collapse))
        }
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub n: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub unit: String,
    pub n_samples: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub per_category: Vec<CategoryRow>,
    /// Joint names in evaluation order.
    pub joints: Vec<String>,
    /// `per_joint_errors[j][s]`: error of joint `j` in sample `s`.
    pub per_joint_errors: Vec<Vec<f64>>,
    pub config_hash: String,
}

/// Collects per-sample errors (inputs in cm, reports in mm).
#[derive(Clone, Debug)]
pub struct EvalAccumulator {
    joints: Vec<usize>,
    names: Vec<String>,
    rows: Vec<(String, f64, f64)>,
    per_joint: Vec<Vec<f64>>,
}

const CM_TO_MM: f64 = 10.0;

impl EvalAccumulator {
    pub fn new(joints: Vec<usize>, names: Vec<String>) -> Self {
        let per_joint = vec![Vec::new(); joints.len()];
        Self { joints, names, rows: Vec::new(), per_joint }
    }

    pub fn add(&mut self, category: &str, pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<()> {
        let errs = joint_errors(pred, gt, &self.joints)?;
        let pa = pa_mpjpe_or_fallback(pred, gt, &self.joints)?;
        for (bucket, e) in self.per_joint.iter_mut().zip(&errs) {
            bucket.push(e * CM_TO_MM);
        }
        self.rows.push((category.to_string(), mean(&errs) * CM_TO_MM, pa * CM_TO_MM));
        Ok(())
    }

    pub fn finish(self, config_hash: &str) -> Result<EvalReport> {
        if self.rows.is_empty() {
            return Err(Error::Parameter("no samples evaluated".into()));
        }
        let mut cats: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
        for (c, m, p) in &self.rows {
            let e = cats.entry(c).or_default();
            e.0 += 1;
            e.1 += m;
            e.2 += p;
        }
        let n = self.rows.len();
        Ok(EvalReport {
            unit: "mm".into(),
            n_samples: n,
            mpjpe: self.rows.iter().map(|r| r.1).sum::<f64>() / n as f64,
            pa_mpjpe: self.rows.iter().map(|r| r.2).sum::<f64>() / n as f64,
            per_category: cats
                .into_iter()
                .map(|(c, (k, m, p))| CategoryRow { category: c.into(), n: k, mpjpe: m / k as f64, pa_mpjpe: p / k as f64 })
                .collect(),
            joints: self.names,
            per_joint_errors: self.per_joint,
            config_hash: config_hash.into(),
        })
    }
}

impl EvalReport {
    /// `scope,category,n,mpjpe_mm,pa_mpjpe_mm` with one `overall` row first.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scope,category,n,mpjpe_mm,pa_mpjpe_mm\n");
        let _ = writeln!(s, "overall,all,{},{:.4},{:.4}", self.n_samples, self.mpjpe, self.pa_mpjpe);
        for r in &self.per_category {
            let _ = writeln!(s, "category,{},{},{:.4},{:.4}", r.category, r.n, r.mpjpe, r.pa_mpjpe);
        }
        for (name, errs) in self.joints.iter().zip(&self.per_joint_errors) {
            let _ = writeln!(s, "joint,{name},{},{:.4},", errs.len(), mean(errs));
        }
        s
    }
}

/// Joint name with any `_l` / `_r` suffix removed.
pub fn joint_group(name: &str) -> &str {
    name.strip_suffix("_l").or_else(|| name.strip_suffix("_r")).unwrap_or(name)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    /// Thresholds in mm.
    pub thresholds: Vec<f64>,
    /// `(group, fraction of errors <= each threshold)`.
    pub rows: Vec<(String, Vec<f64>)>,
}

/// Per-joint-group cumulative error distribution, groups in first-seen order.
pub fn error_cdf(report: &EvalReport, thresholds: &[f64]) -> CdfTable {
    let mut order: Vec<&str> = Vec::new();
    let mut pooled: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (name, errs) in report.joints.iter().zip(&report.per_joint_errors) {
        let g = joint_group(name);
        if !pooled.contains_key(g) {
            order.push(g);
        }
        pooled.entry(g).or_default().extend(errs);
    }
    let rows = order
        .into_iter()
        .map(|g| {
            let errs = &pooled[g];
            let fr = thresholds
                .iter()
                .map(|t| errs.iter().filter(|&&e| e <= *t).count() as f64 / errs.len().max(1) as f64)
                .collect();
            (g.to_string(), fr)
        })
        .collect();
    CdfTable { thresholds: thresholds.to_vec(), rows }
}

impl CdfTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group");
        for t in &self.thresholds {
            let _ = write!(s, ",le_{t}mm");
        }
        s.push('\n');
        for (g, fr) in &self.rows {
            s.push_str(g);
            for f in fr {
                let _ = write!(s, ",{f:.4}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let series: Vec<(&str, Vec<(f64, f64)>)> = self
            .rows
            .iter()
            .map(|(g, fr)| (g.as_str(), self.thresholds.iter().copied().zip(fr.iter().copied()).collect()))
            .collect();
        line_chart_svg("Joint error CDF", "error (mm)", "fraction", &series)
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 60.0;

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn palette(i: usize) -> &'static str {
    const C: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
    C[i % C.len()]
}

/// Polyline chart; the y axis spans `[0, max(1, max y)]`.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (x_max, y_max) = pts.fold((1e-9f64, 1.0f64), |(a, b), &(x, y)| (a.max(x), b.max(y)));
    let sx = |x: f64| PAD + x / x_max * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y / y_max * (H - 2.0 * PAD);
    let mut s = svg_header(title);
    axes(&mut s, x_label, y_label, x_max, y_max);
    for (i, (name, p)) in series.iter().enumerate() {
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            palette(i),
            path.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>",
            W - PAD + 5.0,
            PAD + 14.0 * i as f64,
            palette(i),
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str, x_max: f64, y_max: f64) {
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{lb}\" text-anchor=\"middle\">{xl}</text>\n\
         <text x=\"15\" y=\"{cy}\" transform=\"rotate(-90 15 {cy})\" text-anchor=\"middle\">{yl}</text>\n\
         <text x=\"{r}\" y=\"{tb}\" text-anchor=\"end\">{x_max:.3}</text>\n\
         <text x=\"{yt}\" y=\"{ty}\" text-anchor=\"end\">{y_max:.3}</text>",
        b = H - PAD,
        r = W - PAD,
        cx = W / 2.0,
        lb = H - 20.0,
        cy = H / 2.0,
        tb = H - PAD + 14.0,
        yt = PAD - 4.0,
        ty = PAD + 4.0,
        xl = escape(x_label),
        yl = escape(y_label),
    );
}

/// Bars with error whiskers: `(label, mean, std)`.
pub fn bar_chart_svg(title: &str, y_label: &str, bars: &[(String, f64, f64)]) -> String {
    let y_max = bars.iter().map(|b| b.1 + b.2).fold(1e-9f64, f64::max) * 1.1;
    let sy = |y: f64| H - PAD - y / y_max * (H - 2.0 * PAD);
    let slot = (W - 2.0 * PAD) / bars.len().max(1) as f64;
    let mut s = svg_header(title);
    axes(&mut s, "", y_label, 0.0, y_max);
    for (i, (label, m, sd)) in bars.iter().enumerate() {
        let x = PAD + slot * (i as f64 + 0.2);
        let bw = slot * 0.6;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{bw:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
            sy(*m),
            (H - PAD - sy(*m)).max(0.0),
            palette(i)
        );
        let cx = x + bw / 2.0;
        let _ = writeln!(
            s,
            "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            sy(m - sd),
            sy(m + sd)
        );
        let _ = writeln!(
            s,
            "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{} ({m:.1})</text>",
            H - PAD + 14.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
