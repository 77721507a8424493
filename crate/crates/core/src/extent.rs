//! Body-extent estimation and symmetric FOV border extension.
//!
//! The complete-body bounding box is estimated from the anatomical part of
//! the visible body contour with a direct least-squares ellipse fit. The
//! frame is then enlarged about its center far enough to cover the estimate.

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::metrics::BBox;
use crate::raster::{boundary, convex_hull, dilate, warp_image, warp_mask, ImageGrid, MaskGrid};

/// Safety factor applied on top of the estimated extension.
pub const DEFAULT_R0: f64 = 1.05;

/// Dilation radius of the FOV boundary when discarding artificial contour.
pub const DEFAULT_FOV_MARGIN: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Ellipse,
    Circle,
}

/// Ellipse in geometric form. `semi_axes[0]` is the major semi-axis and
/// `tilt` its angle from the +x axis, in (−π/2, π/2].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseFit {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub tilt: f64,
    /// RMS algebraic distance of the points in normalized coordinates, with
    /// the conic coefficient vector scaled to unit norm.
    pub residual: f64,
    pub method: FitMethod,
}

impl EllipseFit {
    /// Half extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> [f64; 2] {
        let [a, b] = self.semi_axes;
        let (s, c) = self.tilt.sin_cos();
        [
            (a * a * c * c + b * b * s * s).sqrt(),
            (a * a * s * s + b * b * c * c).sqrt(),
        ]
    }

    pub fn bbox(&self) -> BBox {
        let [hx, hy] = self.half_extents();
        BBox {
            x_min: self.center[0] - hx,
            y_min: self.center[1] - hy,
            x_max: self.center[0] + hx,
            y_max: self.center[1] + hy,
        }
    }

    /// Normalized radial coordinate: < 1 inside, 1 on the curve.
    pub fn radial(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let (s, c) = self.tilt.sin_cos();
        let u = (dx * c + dy * s) / self.semi_axes[0];
        let v = (-dx * s + dy * c) / self.semi_axes[1];
        (u * u + v * v).sqrt()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.radial(x, y) <= 1.0
    }

    /// Image of the ellipse under `p ↦ pivot + (p − pivot)·factor`.
    pub fn scaled_about(&self, pivot: [f64; 2], factor: f64) -> EllipseFit {
        EllipseFit {
            center: [
                pivot[0] + (self.center[0] - pivot[0]) * factor,
                pivot[1] + (self.center[1] - pivot[1]) * factor,
            ],
            semi_axes: [self.semi_axes[0] * factor, self.semi_axes[1] * factor],
            ..*self
        }
    }

    pub fn mask(&self, width: usize, height: usize) -> Result<MaskGrid> {
        MaskGrid::from_fn(width, height, |x, y| self.contains(x as f64 + 0.5, y as f64 + 0.5))
    }
}

// ---------------------------------------------------------------------------
// Contour points
// ---------------------------------------------------------------------------

/// Body-boundary pixel centers that are not on, or within `margin` pixels of,
/// the FOV boundary.
pub fn anatomical_boundary_points(body: &MaskGrid, fov: &MaskGrid, margin: usize) -> Result<Vec<[f64; 2]>> {
    check_dims(body.dims(), fov.dims())?;
    if body.is_empty() {
        return Err(Error::Empty("body mask"));
    }
    contour_points(&boundary(body), fov, margin)
}

fn contour_points(contour: &MaskGrid, fov: &MaskGrid, margin: usize) -> Result<Vec<[f64; 2]>> {
    let artificial = dilate(&boundary(fov), margin);
    let anatomical = contour.and_not(&artificial)?;
    if anatomical.is_empty() {
        return Err(Error::Degenerate("body contour lies entirely on the FOV boundary".into()));
    }
    Ok(anatomical.iter_set().map(|(x, y)| [x as f64 + 0.5, y as f64 + 0.5]).collect())
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Centroid and isotropic scale mapping the points to mean distance √2.
fn normalization(points: &[[f64; 2]]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_dist = points.iter().map(|p| (p[0] - mx).hypot(p[1] - my)).sum::<f64>() / n;
    let s = if mean_dist > 1e-12 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    (mx, my, s)
}

/// Eigenvector of a 3×3 matrix for an eigenvalue, from the best-conditioned
/// cross product of two rows of `m − λI`.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    [(0, 1), (0, 2), (1, 2)]
        .iter()
        .map(|&(i, j)| rows[i].cross(&rows[j]))
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
        .filter(|v| v.norm_squared() > 0.0)
        .map(|v| v.normalize())
}

/// Direct least-squares ellipse fit (numerically stable variant of the
/// constrained scatter-matrix eigenproblem). Falls back to a circle fit when
/// there are fewer than six points or the problem is rank deficient.
pub fn fit_ellipse(points: &[[f64; 2]]) -> Result<EllipseFit> {
    if points.len() < 6 {
        return fit_circle(points);
    }
    match fit_conic(points) {
        Some(fit) => Ok(fit),
        None => fit_circle(points),
    }
}

fn fit_conic(points: &[[f64; 2]]) -> Option<EllipseFit> {
    let (mx, my, s) = normalization(points);
    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let (x, y) = ((p[0] - mx) * s, (p[1] - my) * s);
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let s3_inv = s3.try_inverse()?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // premultiply by the inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]]
    let reduced = Matrix3::new(
        m[(2, 0)] / 2.0, m[(2, 1)] / 2.0, m[(2, 2)] / 2.0,
        -m[(1, 0)], -m[(1, 1)], -m[(1, 2)],
        m[(0, 0)] / 2.0, m[(0, 1)] / 2.0, m[(0, 2)] / 2.0,
    );
    if !reduced.iter().all(|v| v.is_finite()) {
        return None;
    }
    let scale = reduced.norm().max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for ev in reduced.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-9 * scale {
            continue;
        }
        let Some(v) = null_vector(&(reduced - Matrix3::identity() * ev.re)) else {
            continue;
        };
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 && best.as_ref().is_none_or(|(c, _)| cond > *c) {
            best = Some((cond, v));
        }
    }
    let (_, a1) = best?;
    let a2 = t * a1;
    let norm_coeffs = [a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]];
    let unit = norm_coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    let residual = (points
        .iter()
        .map(|p| {
            let (x, y) = ((p[0] - mx) * s, (p[1] - my) * s);
            let q = a1[0] * x * x + a1[1] * x * y + a1[2] * y * y + a2[0] * x + a2[1] * y + a2[2];
            (q / unit).powi(2)
        })
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    let conic = denormalize(&norm_coeffs, mx, my, s);
    conic_to_ellipse(&conic, residual)
}

/// Coefficients in original coordinates given those in x' = s(x − mx).
fn denormalize(c: &[f64; 6], mx: f64, my: f64, s: f64) -> [f64; 6] {
    let [a, b, cc, d, e, f] = *c;
    let s2 = s * s;
    [
        a * s2,
        b * s2,
        cc * s2,
        -2.0 * a * s2 * mx - b * s2 * my + d * s,
        -b * s2 * mx - 2.0 * cc * s2 * my + e * s,
        a * s2 * mx * mx + b * s2 * mx * my + cc * s2 * my * my - d * s * mx - e * s * my + f,
    ]
}

fn conic_to_ellipse(c: &[f64; 6], residual: f64) -> Option<EllipseFit> {
    // fix the overall sign so the quadratic part is positive definite
    let sign = if c[0] + c[2] < 0.0 { -1.0 } else { 1.0 };
    let [a, b, cc, d, e, f] = c.map(|v| v * sign);
    if b * b - 4.0 * a * cc >= 0.0 {
        return None;
    }
    let q = Matrix2::new(2.0 * a, b, b, 2.0 * cc);
    let center = q.try_inverse()? * nalgebra::Vector2::new(-d, -e);
    let (x0, y0) = (center[0], center[1]);
    let f0 = f + (d * x0 + e * y0) / 2.0;
    if !(f0 < 0.0) {
        return None;
    }
    // eigenvalues of [[a, b/2], [b/2, c]]
    let mean = (a + cc) / 2.0;
    let half_diff = ((a - cc) / 2.0).hypot(b / 2.0);
    let (major, minor) = ((-f0 / (mean - half_diff)).sqrt(), (-f0 / (mean + half_diff)).sqrt());
    // direction of the larger eigenvalue is the minor axis
    let minor_dir = 0.5 * b.atan2(a - cc);
    let tilt = if (major - minor).abs() <= 1e-9 * major {
        0.0
    } else {
        wrap_half_pi(minor_dir + std::f64::consts::FRAC_PI_2)
    };
    let fit = EllipseFit { center: [x0, y0], semi_axes: [major, minor], tilt, residual, method: FitMethod::Ellipse };
    fit.center.iter().chain(fit.semi_axes.iter()).all(|v| v.is_finite()).then_some(fit)
}

fn wrap_half_pi(mut t: f64) -> f64 {
    use std::f64::consts::PI;
    while t > PI / 2.0 {
        t -= PI;
    }
    while t <= -PI / 2.0 {
        t += PI;
    }
    t
}

/// Algebraic least-squares circle fit.
pub fn fit_circle(points: &[[f64; 2]]) -> Result<EllipseFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, found: points.len() });
    }
    let (mx, my, s) = normalization(points);
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for p in points {
        let (x, y) = ((p[0] - mx) * s, (p[1] - my) * s);
        let row = Vector3::new(x, y, 1.0);
        ata += row * row.transpose();
        atb -= row * (x * x + y * y);
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .filter(|v| v.iter().all(|c| c.is_finite()))
        .ok_or_else(|| Error::FitFailed("collinear points".into()))?;
    let (cx, cy) = (-sol[0] / 2.0, -sol[1] / 2.0);
    let r2 = cx * cx + cy * cy - sol[2];
    if !(r2 > 0.0) {
        return Err(Error::FitFailed("circle fit has no real radius".into()));
    }
    let r = r2.sqrt();
    let residual = (points
        .iter()
        .map(|p| {
            let (x, y) = ((p[0] - mx) * s, (p[1] - my) * s);
            let q = x * x + y * y + sol[0] * x + sol[1] * y + sol[2];
            q * q / (2.0 + sol.norm_squared())
        })
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    Ok(EllipseFit {
        center: [mx + cx / s, my + cy / s],
        semi_axes: [r / s, r / s],
        tilt: 0.0,
        residual,
        method: FitMethod::Circle,
    })
}

// ---------------------------------------------------------------------------
// Body bounding box
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyExtent {
    /// Predicted complete-body bbox; always contains `observed`.
    pub bbox: BBox,
    pub observed: BBox,
    pub fit: Option<EllipseFit>,
    /// True when the fit was unavailable and `bbox` is the observed bbox.
    pub low_confidence: bool,
}

/// Estimates the complete-body bbox of a possibly truncated body.
///
/// Only the convex part of the visible contour is fitted, so that cavities
/// opened by the truncation (lungs cut by the FOV edge) contribute no points.
pub fn predict_body_bbox(body: &MaskGrid, fov: &MaskGrid, margin: usize) -> Result<BodyExtent> {
    check_dims(body.dims(), fov.dims())?;
    let observed = BBox::from_mask(body).ok_or(Error::Empty("body mask"))?;
    let fallback = BodyExtent { bbox: observed, observed, fit: None, low_confidence: true };
    // hull boundary pixels that are body pixels; chords bridging cavities
    // opened by the truncation touch the body only at their ends
    let skin = boundary(&convex_hull(body)).and(body)?;
    let points = match contour_points(&skin, fov, margin) {
        Ok(p) => p,
        Err(Error::Degenerate(_)) => return Ok(fallback),
        Err(e) => return Err(e),
    };
    let fit = match fit_ellipse(&points) {
        Ok(f) => f,
        Err(e) if e.is_numeric() || matches!(e, Error::InsufficientData { .. }) => return Ok(fallback),
        Err(e) => return Err(e),
    };
    // reject wildly extrapolated fits (nearly straight arcs)
    let (w, h) = body.dims();
    let limit = 4.0 * w.max(h) as f64;
    let fb = fit.bbox();
    if fb.width() > limit || fb.height() > limit || fb.coords().iter().any(|c| c.abs() > limit) {
        return Ok(fallback);
    }
    // pixel centers sit half a pixel inside the contour
    let padded = BBox { x_min: fb.x_min - 0.5, y_min: fb.y_min - 0.5, x_max: fb.x_max + 0.5, y_max: fb.y_max + 0.5 };
    Ok(BodyExtent { bbox: padded.union_hull(&observed), observed, fit: Some(fit), low_confidence: false })
}

// ---------------------------------------------------------------------------
// Border extension
// ---------------------------------------------------------------------------

/// Extension ratio `r0 · max(1, R_est)`, where `R_est` is the largest
/// center-to-edge distance of `pred` over the half image dimension.
pub fn extension_ratio(pred: &BBox, width: usize, height: usize, r0: f64) -> Result<f64> {
    if !(r0 >= 1.0 && r0.is_finite()) {
        return Err(Error::InvalidArgument(format!("r0 must be at least 1, got {r0}")));
    }
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let rx = (pred.x_min - cx).abs().max((pred.x_max - cx).abs()) / cx;
    let ry = (pred.y_min - cy).abs().max((pred.y_max - cy).abs()) / cy;
    Ok(r0 * rx.max(ry).max(1.0))
}

#[derive(Debug, Clone)]
pub struct ExtensionResult {
    pub extended_image: ImageGrid,
    pub extended_fov: MaskGrid,
    pub ratio: f64,
    pub new_spacing: f64,
}

impl ExtensionResult {
    /// Maps a point of the unextended frame into the extended frame.
    pub fn map_point(&self, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = (self.extended_image.width() as f64 / 2.0, self.extended_image.height() as f64 / 2.0);
        ((x - cx) / self.ratio + cx, (y - cy) / self.ratio + cy)
    }

    pub fn map_box(&self, b: &BBox) -> BBox {
        let (x_min, y_min) = self.map_point(b.x_min, b.y_min);
        let (x_max, y_max) = self.map_point(b.x_max, b.y_max);
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn map_ellipse(&self, e: &EllipseFit) -> EllipseFit {
        let pivot = [self.extended_image.width() as f64 / 2.0, self.extended_image.height() as f64 / 2.0];
        e.scaled_about(pivot, 1.0 / self.ratio)
    }
}

/// Extends the frame symmetrically by `ratio` and resamples back to the
/// original dimensions: equivalent to padding with `fill` (image) / false
/// (mask) to `dim·ratio` and resizing, done as a single continuous warp.
/// Pixel spacing grows by exactly `ratio`.
pub fn extend_border(img: &ImageGrid, fov: &MaskGrid, ratio: f64, fill: f64) -> Result<ExtensionResult> {
    check_dims(img.dims(), fov.dims())?;
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!("extension ratio must be at least 1, got {ratio}")));
    }
    if ratio == 1.0 {
        return Ok(ExtensionResult {
            extended_image: img.clone(),
            extended_fov: fov.clone(),
            ratio,
            new_spacing: img.spacing(),
        });
    }
    let (w, h) = img.dims();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let to_source = |u: f64, v: f64| ((u - cx) * ratio + cx, (v - cy) * ratio + cy);
    let new_spacing = img.spacing() * ratio;
    let extended_image = warp_image(img, w, h, new_spacing, fill, to_source)?;
    let extended_fov = warp_mask(fov, w, h, to_source)?;
    Ok(ExtensionResult { extended_image, extended_fov, ratio, new_spacing })
}

/// Applies the same extension to an auxiliary mask (body, tissue labels).
pub fn extend_mask(mask: &MaskGrid, ratio: f64) -> Result<MaskGrid> {
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!("extension ratio must be at least 1, got {ratio}")));
    }
    let (w, h) = mask.dims();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    warp_mask(mask, w, h, |u, v| ((u - cx) * ratio + cx, (v - cy) * ratio + cy))
}
