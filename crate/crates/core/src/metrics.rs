//! Truncation and detection metrics: tissue cropping index, severity
//! strata, IoU/GIoU, bounding-box losses, Dice and pixel RMSE.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::raster::{boundary, ImageGrid, MaskGrid};

/// Default weight of the GIoU term in the combined box loss.
pub const DEFAULT_GIOU_WEIGHT: f64 = 1500.0;

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self { x_min, y_min, x_max, y_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(Error::InvalidArgument(format!("invalid box {self:?}")));
        }
        Ok(())
    }

    /// Tight box around the set pixels, covering whole pixels.
    pub fn from_mask(mask: &MaskGrid) -> Option<Self> {
        mask.pixel_bounds().map(|(x0, y0, x1, y1)| Self {
            x_min: x0 as f64,
            y_min: y0 as f64,
            x_max: (x1 + 1) as f64,
            y_max: (y1 + 1) as f64,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn union_hull(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    pub fn contains(&self, other: &BBox, tol: f64) -> bool {
        other.x_min >= self.x_min - tol
            && other.y_min >= self.y_min - tol
            && other.x_max <= self.x_max + tol
            && other.y_max <= self.y_max + tol
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

// Two zero-area boxes: identical → 1, otherwise intersection is 0.
fn degenerate_overlap(a: &BBox, b: &BBox) -> Option<f64> {
    if a.area() == 0.0 && b.area() == 0.0 {
        return Some(if a == b { 1.0 } else { 0.0 });
    }
    None
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if let Some(v) = degenerate_overlap(a, b) {
        return v;
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Generalized IoU: `IoU − |C \ (A ∪ B)| / |C|`, with `C` the smallest
/// enclosing axis-aligned box. Lies in `(−1, 1]`.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    if let Some(v) = degenerate_overlap(a, b) {
        return v;
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.union_hull(b).area();
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    if hull <= 0.0 {
        // collinear zero-area boxes; the enclosing box has no area either
        return iou;
    }
    iou - (hull - union) / hull
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxLosses {
    /// Mean squared coordinate difference over the four coordinates (px²).
    pub mse: f64,
    /// `1 − GIoU`.
    pub giou_loss: f64,
    /// `mse + λ · giou_loss`.
    pub total: f64,
}

pub fn bbox_losses(pred: &BBox, gt: &BBox, lambda: f64) -> Result<BoxLosses> {
    pred.validate()?;
    gt.validate()?;
    let mse = pred
        .coords()
        .iter()
        .zip(gt.coords())
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / 4.0;
    let giou_loss = 1.0 - giou(pred, gt);
    Ok(BoxLosses {
        mse,
        giou_loss,
        total: mse + lambda * giou_loss,
    })
}

// ---------------------------------------------------------------------------
// Truncation severity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityLevel {
    None,
    Trace,
    Mild,
    Moderate,
    Severe,
}

impl SeverityLevel {
    pub const TRUNCATED: [SeverityLevel; 4] = [
        SeverityLevel::Trace,
        SeverityLevel::Mild,
        SeverityLevel::Moderate,
        SeverityLevel::Severe,
    ];

    /// Strata: 0 | (0, 0.15] | (0.15, 0.3] | (0.3, 0.5] | > 0.5.
    pub fn from_tci(tci: f64) -> Self {
        if tci <= 0.0 {
            SeverityLevel::None
        } else if tci <= 0.15 {
            SeverityLevel::Trace
        } else if tci <= 0.3 {
            SeverityLevel::Mild
        } else if tci <= 0.5 {
            SeverityLevel::Moderate
        } else {
            SeverityLevel::Severe
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SeverityLevel::None => "none",
            SeverityLevel::Trace => "trace",
            SeverityLevel::Mild => "mild",
            SeverityLevel::Moderate => "moderate",
            SeverityLevel::Severe => "severe",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl std::fmt::Display for SeverityLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Tissue cropping index: the share of body-boundary pixels that are also
/// FOV-boundary pixels.
pub fn tci(body: &MaskGrid, fov: &MaskGrid) -> Result<f64> {
    check_dims(body.dims(), fov.dims())?;
    let eb = boundary(body);
    let total = eb.count();
    if total == 0 {
        return Err(Error::Empty("body mask"));
    }
    let ef = boundary(fov);
    let shared = eb.bits().iter().zip(ef.bits()).filter(|(&a, &b)| a && b).count();
    Ok(shared as f64 / total as f64)
}

/// Scan-level index: mean of the slice-level values.
pub fn scan_tci(slice_tcis: &[f64]) -> Result<f64> {
    if slice_tcis.is_empty() {
        return Err(Error::Empty("slice TCI list"));
    }
    Ok(slice_tcis.iter().sum::<f64>() / slice_tcis.len() as f64)
}

// ---------------------------------------------------------------------------
// Overlap and intensity agreement
// ---------------------------------------------------------------------------

/// Dice coefficient; two empty masks agree perfectly.
pub fn dice(a: &MaskGrid, b: &MaskGrid) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Root mean square intensity difference over `region`.
pub fn pixel_rmse(x: &ImageGrid, y: &ImageGrid, region: &MaskGrid) -> Result<f64> {
    check_dims(x.dims(), y.dims())?;
    check_dims(x.dims(), region.dims())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((a, b), &r) in x.values().iter().zip(y.values()).zip(region.bits()) {
        if r {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("RMSE region"));
    }
    Ok((sum / n as f64).sqrt())
}
