//! Wald confidence ellipses for a trial's `(S, M)` pair.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::sig6;
use crate::sampling::EndpointEstimate;

pub type Matrix2 = [[f64; 2]; 2];

/// Sensitivity values swept for the unestimable correlation.
pub const DEFAULT_RHO_SWEEP: [f64; 3] = [0.1, 0.66, 0.9];

/// Marginal counts below this mark a region as low-count.
pub const LOW_COUNT_THRESHOLD: u64 = 20;

/// `(1 - alpha)` quantile of chi-squared with two degrees of freedom.
pub fn chi2_quantile_2df(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0,1)")));
    }
    Ok(-2.0 * alpha.ln())
}

/// Covariance matrix from two variances and a correlation.
pub fn assemble_sigma(var_s: f64, var_m: f64, rho: f64) -> Result<Matrix2> {
    if !(var_s >= 0.0 && var_m >= 0.0) {
        return Err(Error::Domain("variances must be nonnegative".into()));
    }
    if rho.is_nan() || rho.abs() > 1.0 {
        return Err(Error::Domain(format!("|rho| = {} exceeds 1", rho.abs())));
    }
    let off = rho * (var_s * var_m).sqrt();
    Ok([[var_s, off], [off, var_m]])
}

fn det(m: &Matrix2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// The set `{v : (v - c)^T shape^-1 (v - c) < threshold}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldRegion {
    pub center: (f64, f64),
    /// Finite-sample covariance of `(S_hat, M_hat)`.
    pub shape: Matrix2,
    pub threshold: f64,
    pub alpha: f64,
    pub rho_used: f64,
    /// Some contributing count is below [`LOW_COUNT_THRESHOLD`]; nominal
    /// coverage is doubtful.
    pub low_count: bool,
    #[serde(skip)]
    inverse: Matrix2,
}

impl WaldRegion {
    pub fn new(center: (f64, f64), shape: Matrix2, alpha: f64, rho_used: f64) -> Result<Self> {
        let threshold = chi2_quantile_2df(alpha)?;
        let d = det(&shape);
        if !(shape[0][0] > 0.0 && shape[1][1] > 0.0 && d > 0.0) || !d.is_finite() {
            return Err(Error::DegenerateRegion(format!(
                "shape matrix is singular (det = {d})"
            )));
        }
        let inverse = [
            [shape[1][1] / d, -shape[0][1] / d],
            [-shape[1][0] / d, shape[0][0] / d],
        ];
        Ok(Self {
            center,
            shape,
            threshold,
            alpha,
            rho_used,
            low_count: false,
            inverse,
        })
    }

    pub fn mahalanobis_sq(&self, point: (f64, f64)) -> f64 {
        let (dx, dy) = (point.0 - self.center.0, point.1 - self.center.1);
        let inv = &self.inverse;
        dx * (inv[0][0] * dx + inv[0][1] * dy) + dy * (inv[1][0] * dx + inv[1][1] * dy)
    }

    pub fn contains(&self, point: (f64, f64)) -> bool {
        self.mahalanobis_sq(point) < self.threshold
    }

    /// `pi * threshold * sqrt(det(shape))`.
    pub fn area(&self) -> f64 {
        PI * self.threshold * det(&self.shape).sqrt()
    }

    /// Angle of the major axis from the `S` axis, in `(-pi/2, pi/2]`.
    pub fn major_axis_angle(&self) -> f64 {
        let [[a, b], [_, c]] = self.shape;
        0.5 * (2.0 * b).atan2(a - c)
    }

    fn cholesky(&self) -> Matrix2 {
        let l11 = self.shape[0][0].sqrt();
        let l21 = self.shape[1][0] / l11;
        let l22 = (self.shape[1][1] - l21 * l21).max(0.0).sqrt();
        [[l11, 0.0], [l21, l22]]
    }

    /// `k` boundary points at equally spaced angles, as `(theta, S, M)`.
    pub fn boundary(&self, k: usize) -> Result<Vec<(f64, f64, f64)>> {
        if k < 4 {
            return Err(Error::Domain(format!("need at least 4 boundary points, got {k}")));
        }
        let l = self.cholesky();
        let radius = self.threshold.sqrt();
        Ok((0..k)
            .map(|i| {
                let theta = 2.0 * PI * i as f64 / k as f64;
                let (u, v) = (radius * theta.cos(), radius * theta.sin());
                (
                    theta,
                    self.center.0 + l[0][0] * u,
                    self.center.1 + l[1][0] * u + l[1][1] * v,
                )
            })
            .collect())
    }
}

/// Region for one trial from standardized variances; the shape is divided by
/// the control arm size.
pub fn wald_region(est: &EndpointEstimate, var_s: f64, var_m: f64, rho: f64, alpha: f64) -> Result<WaldRegion> {
    let sigma = assemble_sigma(var_s, var_m, rho)?;
    let n = est.n as f64;
    let shape = [
        [sigma[0][0] / n, sigma[0][1] / n],
        [sigma[1][0] / n, sigma[1][1] / n],
    ];
    let mut region = WaldRegion::new((est.s_hat, est.m_hat), shape, alpha, rho)?;
    region.low_count = est.min_count() < LOW_COUNT_THRESHOLD;
    Ok(region)
}

pub fn region_contains(region: &WaldRegion, point: (f64, f64)) -> bool {
    region.contains(point)
}

pub fn ellipse_boundary(region: &WaldRegion, k: usize) -> Result<Vec<(f64, f64, f64)>> {
    region.boundary(k)
}

/// Writes a boundary polyline as CSV: `trial,rho,theta,S,M`.
pub fn write_boundary_csv<W: Write>(trial: &str, region: &WaldRegion, k: usize, out: W) -> Result<()> {
    let points = region.boundary(k)?;
    let io = |e: csv::Error| Error::Domain(format!("write failed: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trial", "rho", "theta", "S", "M"]).map_err(io)?;
    let rho = sig6(region.rho_used);
    for (theta, s, m) in points {
        w.write_record([trial, &rho, &sig6(theta), &sig6(s), &sig6(m)])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Domain(format!("write failed: {e}")))?;
    Ok(())
}

/// A labelled region for panel rendering.
pub struct PanelEntry<'a> {
    pub label: &'a str,
    pub region: &'a WaldRegion,
}

/// Renders all regions, their centres and an optional regression line
/// `M = b0 + b1 S` as a standalone SVG document.
pub fn render_panel_svg(title: &str, entries: &[PanelEntry<'_>], line: Option<(f64, f64)>) -> Result<String> {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 48.0;
    const K: usize = 128;
    let outlines: Vec<Vec<(f64, f64, f64)>> = entries
        .iter()
        .map(|e| e.region.boundary(K))
        .collect::<Result<_>>()?;
    let (mut lo_s, mut hi_s, mut lo_m, mut hi_m) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for p in outlines.iter().flatten() {
        lo_s = lo_s.min(p.1);
        hi_s = hi_s.max(p.1);
        lo_m = lo_m.min(p.2);
        hi_m = hi_m.max(p.2);
    }
    let span_s = (hi_s - lo_s).max(1e-9);
    let span_m = (hi_m - lo_m).max(1e-9);
    let px = |s: f64| PAD + (s - lo_s) / span_s * (SIZE - 2.0 * PAD);
    let py = |m: f64| SIZE - PAD - (m - lo_m) / span_m * (SIZE - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    // axes through the origin
    let _ = writeln!(
        svg,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        px(lo_s), py(0.0), px(hi_s), py(0.0)
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        px(0.0), py(lo_m), px(0.0), py(hi_m)
    );
    for (entry, outline) in entries.iter().zip(&outlines) {
        let points: Vec<String> = outline
            .iter()
            .map(|&(_, s, m)| format!("{:.2},{:.2}", px(s), py(m)))
            .collect();
        let colour = if entry.region.low_count { "#d95f02" } else { "#1b9e77" };
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{colour}" fill-opacity="0.15" stroke="{colour}"/>"#,
            points.join(" ")
        );
        let (cs, cm) = entry.region.center;
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="black"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10">{}</text>"#,
            px(cs), py(cm), px(cs) + 5.0, py(cm) - 5.0, escape(entry.label)
        );
    }
    if let Some((b0, b1)) = line {
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="blue"/>"#,
            px(lo_s), py(b0 + b1 * lo_s), px(hi_s), py(b0 + b1 * hi_s)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">late-stage incidence reduction S</text>"#,
        SIZE / 2.0,
        SIZE - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})">mortality reduction M</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
