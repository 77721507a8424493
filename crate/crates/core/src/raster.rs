//! 2-D rasters and the grid operations shared by the rest of the crate.
//!
//! Coordinates are continuous pixel coordinates: pixel `(x, y)` covers
//! `[x, x + 1) × [y, y + 1)` and its center sits at `(x + 0.5, y + 0.5)`.
//! Storage is row-major.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};

/// Scalar raster in Hounsfield Units with isotropic pixel spacing (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    spacing: f64,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, spacing: f64, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid(format!("zero dimension {width}x{height}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        if values.len() != width * height {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at index {i}")));
        }
        Ok(Self { width, height, spacing, values })
    }

    pub fn filled(width: usize, height: usize, spacing: f64, value: f64) -> Result<Self> {
        Self::new(width, height, spacing, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        spacing: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, spacing, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn with_spacing(mut self, spacing: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        self.spacing = spacing;
        Ok(self)
    }

    /// Applies `f` to every value. The result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.width, self.height, self.spacing, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v.clamp(lo, hi)).collect(),
            ..self.clone()
        }
    }

    /// Bilinear sample at a continuous coordinate. Neighbors outside the frame
    /// take `fill` when given, otherwise the nearest edge value.
    pub fn sample_bilinear(&self, x: f64, y: f64, fill: Option<f64>) -> f64 {
        let u = x - 0.5;
        let v = y - 0.5;
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = u - x0;
        let fy = v - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);

        let at = |xi: i64, yi: i64| -> f64 {
            let inside = xi >= 0 && yi >= 0 && (xi as usize) < self.width && (yi as usize) < self.height;
            match (inside, fill) {
                (true, _) => self.get(xi as usize, yi as usize),
                (false, Some(f)) => f,
                (false, None) => {
                    let cx = xi.clamp(0, self.width as i64 - 1) as usize;
                    let cy = yi.clamp(0, self.height as i64 - 1) as usize;
                    self.get(cx, cy)
                }
            }
        };

        let row = |yi: i64| -> f64 {
            let a = at(x0, yi);
            if fx == 0.0 {
                a
            } else {
                a + (at(x0 + 1, yi) - a) * fx
            }
        };
        let top = row(y0);
        if fy == 0.0 {
            top
        } else {
            top + (row(y0 + 1) - top) * fy
        }
    }

    /// Nearest-neighbor sample; `None` outside the frame.
    pub fn sample_nearest(&self, x: f64, y: f64) -> Option<f64> {
        let (xi, yi) = (x.floor(), y.floor());
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return None;
        }
        Some(self.get(xi as usize, yi as usize))
    }
}

/// Binary raster (body, FOV or tissue region).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskGrid {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl MaskGrid {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid(format!("zero dimension {width}x{height}")));
        }
        if bits.len() != width * height {
            return Err(Error::InvalidGrid(format!(
                "expected {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Like [`get`](Self::get) but out-of-frame coordinates read as `false`.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn and(&self, other: &MaskGrid) -> Result<MaskGrid> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &MaskGrid) -> Result<MaskGrid> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &MaskGrid) -> Result<MaskGrid> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> MaskGrid {
        MaskGrid {
            bits: self.bits.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }

    fn zip_with(&self, other: &MaskGrid, f: impl Fn(bool, bool) -> bool) -> Result<MaskGrid> {
        check_dims(self.dims(), other.dims())?;
        Ok(MaskGrid {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Inclusive pixel index bounds `(x_min, y_min, x_max, y_max)` of the true pixels.
    pub fn pixel_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bounds = Some(match bounds {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bounds
    }

    /// True when any set pixel lies on the outermost row or column.
    pub fn touches_frame(&self) -> bool {
        let (w, h) = (self.width, self.height);
        (0..w).any(|x| self.get(x, 0) || self.get(x, h - 1)) || (0..h).any(|y| self.get(0, y) || self.get(w - 1, y))
    }

    /// Iterator over `(x, y)` of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Nearest sample at a continuous coordinate; outside the frame is `false`.
    #[inline]
    pub fn sample_nearest(&self, x: f64, y: f64) -> bool {
        let (xi, yi) = (x.floor(), y.floor());
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return false;
        }
        self.get(xi as usize, yi as usize)
    }
}

const N4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const N8: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Boundary pixels: set pixels with at least one 4-neighbor that is unset or
/// outside the frame.
pub fn boundary(mask: &MaskGrid) -> MaskGrid {
    let mut out = MaskGrid::filled(mask.width, mask.height, false).expect("dims already validated");
    for (x, y) in mask.iter_set() {
        let edge = N4
            .iter()
            .any(|&(dx, dy)| !mask.get_signed(x as i64 + dx, y as i64 + dy));
        if edge {
            out.set(x, y, true);
        }
    }
    out
}

/// Dilation with a `(2r+1)²` square structuring element.
pub fn dilate(mask: &MaskGrid, radius: usize) -> MaskGrid {
    if radius == 0 {
        return mask.clone();
    }
    let r = radius as i64;
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = MaskGrid::filled(mask.width, mask.height, false).expect("dims already validated");
    for (x, y) in mask.iter_set() {
        let (x, y) = (x as i64, y as i64);
        for yy in (y - r).max(0)..=(y + r).min(h - 1) {
            for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                out.set(xx as usize, yy as usize, true);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Connected components of the set pixels, as lists of linear indices.
///
/// Components are ordered by their first pixel in row-major order.
pub fn components(mask: &MaskGrid, connectivity: Connectivity) -> Vec<Vec<usize>> {
    let offsets: &[(i64, i64)] = match connectivity {
        Connectivity::Four => &N4,
        Connectivity::Eight => &N8,
    };
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_signed(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Keeps only the largest 8-connected component. Ties go to the component
/// whose first pixel comes earliest in row-major order.
pub fn largest_component(mask: &MaskGrid) -> MaskGrid {
    let mut out = MaskGrid::filled(mask.width, mask.height, false).expect("dims already validated");
    let comps = components(mask, Connectivity::Eight);
    let mut best: Option<&Vec<usize>> = None;
    for c in &comps {
        if best.is_none_or(|b| c.len() > b.len()) {
            best = Some(c);
        }
    }
    if let Some(c) = best {
        for &i in c {
            out.bits[i] = true;
        }
    }
    out
}

/// Fills every unset region that is not 4-connected to the frame border.
pub fn fill_holes(mask: &MaskGrid) -> MaskGrid {
    let (w, h) = (mask.width, mask.height);
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let push = |x: usize, y: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        let i = y * w + x;
        if !mask.bits[i] && !outside[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        push(x, 0, &mut outside, &mut queue);
        push(x, h - 1, &mut outside, &mut queue);
    }
    for y in 0..h {
        push(0, y, &mut outside, &mut queue);
        push(w - 1, y, &mut outside, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for &(dx, dy) in &N4 {
            let (nx, ny) = (x + dx, y + dy);
            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                push(nx as usize, ny as usize, &mut outside, &mut queue);
            }
        }
    }
    MaskGrid {
        width: w,
        height: h,
        bits: outside.into_iter().map(|o| !o).collect(),
    }
}

/// Convex hull of the set pixel centers, rasterized by pixel-center membership.
pub fn convex_hull(mask: &MaskGrid) -> MaskGrid {
    let mut pts: Vec<(i64, i64)> = mask.iter_set().map(|(x, y)| (x as i64, y as i64)).collect();
    let mut out = MaskGrid::filled(mask.width, mask.height, false).expect("dims already validated");
    if pts.is_empty() {
        return out;
    }
    pts.sort_unstable();
    let hull = monotone_chain(&pts);

    let (y_lo, y_hi) = hull.iter().fold((i64::MAX, i64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let n = hull.len();
    for y in y_lo..=y_hi {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..n {
            let (a, b) = (hull[k], hull[(k + 1) % n]);
            if (a.1 - y) * (b.1 - y) > 0 {
                continue;
            }
            if a.1 == b.1 {
                lo = lo.min(a.0.min(b.0) as f64);
                hi = hi.max(a.0.max(b.0) as f64);
            } else {
                let t = (y - a.1) as f64 / (b.1 - a.1) as f64;
                let x = a.0 as f64 + t * (b.0 - a.0) as f64;
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        if lo > hi {
            continue;
        }
        let x0 = (lo - 1e-9).ceil().max(0.0) as usize;
        let x1 = ((hi + 1e-9).floor() as usize).min(mask.width - 1);
        for x in x0..=x1 {
            out.set(x, y as usize, true);
        }
    }
    out
}

fn monotone_chain(sorted: &[(i64, i64)]) -> Vec<(i64, i64)> {
    if sorted.len() <= 2 {
        let mut v = sorted.to_vec();
        v.dedup();
        return v;
    }
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in sorted {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in sorted.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Simplified body extractor: threshold, optionally restricted to a validity
/// mask, keep the largest component, fill interior holes (lungs).
pub fn extract_body_mask(img: &ImageGrid, valid: Option<&MaskGrid>, threshold: f64) -> Result<MaskGrid> {
    if let Some(v) = valid {
        check_dims(img.dims(), v.dims())?;
    }
    let raw = MaskGrid::from_fn(img.width, img.height, |x, y| {
        img.get(x, y) > threshold && valid.is_none_or(|v| v.get(x, y))
    })?;
    Ok(fill_holes(&largest_component(&raw)))
}

// ---------------------------------------------------------------------------
// Resampling and warps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Resamples an image with edge-to-edge alignment. Spacing scales with the
/// geometric mean of the per-axis size ratios, so pixel area tracks the
/// physical extent exactly.
pub fn resample(img: &ImageGrid, new_width: usize, new_height: usize, mode: Interpolation) -> Result<ImageGrid> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::InvalidArgument(format!(
            "target dimension must be positive, got {new_width}x{new_height}"
        )));
    }
    if (new_width, new_height) == img.dims() {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / new_width as f64;
    let sy = img.height as f64 / new_height as f64;
    let spacing = img.spacing * (sx * sy).sqrt();
    ImageGrid::from_fn(new_width, new_height, spacing, |x, y| {
        let (px, py) = ((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy);
        match mode {
            Interpolation::Bilinear => img.sample_bilinear(px, py, None),
            Interpolation::Nearest => img.sample_nearest(px, py).expect("inside frame"),
        }
    })
}

pub fn resample_mask(mask: &MaskGrid, new_width: usize, new_height: usize) -> Result<MaskGrid> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::InvalidArgument(format!(
            "target dimension must be positive, got {new_width}x{new_height}"
        )));
    }
    let sx = mask.width as f64 / new_width as f64;
    let sy = mask.height as f64 / new_height as f64;
    MaskGrid::from_fn(new_width, new_height, |x, y| {
        mask.sample_nearest((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy)
    })
}

/// Inverse-mapped warp: output pixel centers are mapped into source
/// coordinates by `to_source` and sampled bilinearly, with `fill` outside.
pub fn warp_image(
    src: &ImageGrid,
    out_width: usize,
    out_height: usize,
    out_spacing: f64,
    fill: f64,
    to_source: impl Fn(f64, f64) -> (f64, f64),
) -> Result<ImageGrid> {
    ImageGrid::from_fn(out_width, out_height, out_spacing, |x, y| {
        let (sx, sy) = to_source(x as f64 + 0.5, y as f64 + 0.5);
        src.sample_bilinear(sx, sy, Some(fill))
    })
}

pub fn warp_mask(
    src: &MaskGrid,
    out_width: usize,
    out_height: usize,
    to_source: impl Fn(f64, f64) -> (f64, f64),
) -> Result<MaskGrid> {
    MaskGrid::from_fn(out_width, out_height, |x, y| {
        let (sx, sy) = to_source(x as f64 + 0.5, y as f64 + 0.5);
        src.sample_nearest(sx, sy)
    })
}

// ---------------------------------------------------------------------------
// Affine augmentation
// ---------------------------------------------------------------------------

/// Similarity augmentation about the image center: scale, then rotate, then
/// translate. Translations are fractions of the image width/height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineAug {
    pub scale: f64,
    pub rotation_deg: f64,
    pub translate_x: f64,
    pub translate_y: f64,
}

impl AffineAug {
    pub const IDENTITY: AffineAug = AffineAug {
        scale: 1.0,
        rotation_deg: 0.0,
        translate_x: 0.0,
        translate_y: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Maps an output coordinate back to the source coordinate.
    pub fn inverse_point(&self, width: usize, height: usize, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let (tx, ty) = (self.translate_x * width as f64, self.translate_y * height as f64);
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let (dx, dy) = (x - cx - tx, y - cy - ty);
        let rx = cos * dx + sin * dy;
        let ry = -sin * dx + cos * dy;
        (cx + rx / self.scale, cy + ry / self.scale)
    }

    pub fn forward_point(&self, width: usize, height: usize, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let (tx, ty) = (self.translate_x * width as f64, self.translate_y * height as f64);
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let (dx, dy) = ((x - cx) * self.scale, (y - cy) * self.scale);
        (cx + tx + cos * dx - sin * dy, cy + ty + sin * dx + cos * dy)
    }
}

/// Sampling ranges for [`AffineAug`]. `max_translate_y` is the
/// anterior-posterior (row) axis, `max_translate_x` the transverse one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugRanges {
    pub scale: [f64; 2],
    pub max_rotation_deg: f64,
    pub max_translate_x: f64,
    pub max_translate_y: f64,
}

impl Default for AugRanges {
    fn default() -> Self {
        Self {
            scale: [0.7, 1.0],
            max_rotation_deg: 15.0,
            max_translate_x: 0.2,
            max_translate_y: 0.1,
        }
    }
}

impl AugRanges {
    pub const NONE: AugRanges = AugRanges {
        scale: [1.0, 1.0],
        max_rotation_deg: 0.0,
        max_translate_x: 0.0,
        max_translate_y: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!("bad scale range [{lo}, {hi}]")));
        }
        for (name, v) in [
            ("max_rotation_deg", self.max_rotation_deg),
            ("max_translate_x", self.max_translate_x),
            ("max_translate_y", self.max_translate_y),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AffineAug {
        let sym = |rng: &mut R, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let [lo, hi] = self.scale;
        let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let rotation_deg = sym(rng, self.max_rotation_deg);
        let translate_x = sym(rng, self.max_translate_x);
        let translate_y = sym(rng, self.max_translate_y);
        AffineAug {
            scale,
            rotation_deg,
            translate_x,
            translate_y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AffineOutput {
    pub image: ImageGrid,
    pub mask: MaskGrid,
    /// The transformed mask reaches the outermost row or column.
    pub touches_border: bool,
}

pub fn apply_affine_mask(mask: &MaskGrid, aug: &AffineAug) -> MaskGrid {
    if aug.is_identity() {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    warp_mask(mask, w, h, |x, y| aug.inverse_point(w, h, x, y)).expect("dims already validated")
}

/// Applies the same augmentation to an image (bilinear) and its mask (nearest).
pub fn apply_affine(img: &ImageGrid, mask: &MaskGrid, aug: &AffineAug, fill: f64) -> Result<AffineOutput> {
    check_dims(img.dims(), mask.dims())?;
    if !(aug.scale.is_finite() && aug.scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {}", aug.scale)));
    }
    let (w, h) = img.dims();
    let (image, mask) = if aug.is_identity() {
        (img.clone(), mask.clone())
    } else {
        (
            warp_image(img, w, h, img.spacing, fill, |x, y| aug.inverse_point(w, h, x, y))?,
            apply_affine_mask(mask, aug),
        )
    };
    let touches_border = mask.touches_frame();
    Ok(AffineOutput {
        image,
        mask,
        touches_border,
    })
}
