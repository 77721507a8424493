//! Synthetic FOV truncation.
//!
//! The valid FOV of a reconstructed slice is the intersection of a circular
//! reconstruction FOV (RFOV, centered) and a square display FOV (DFOV).
//! Three patterns are simulated:
//!
//! * `a`: DFOV is the largest square inscribed in the RFOV; the artificial
//!   boundary sits on the image edge once cropped.
//! * `b`: DFOV is the bounding square of the RFOV; the artificial boundary is
//!   the reconstruction circle.
//! * `c`: DFOV lies inside the RFOV bounding square but not inside the disc,
//!   giving both straight and arc truncation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::metrics::{tci, BBox, SeverityLevel};
use crate::raster::{apply_affine, apply_affine_mask, warp_image, AffineAug, AugRanges, ImageGrid, MaskGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FovPattern {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovSpec {
    pub rfov_center: [f64; 2],
    pub rfov_radius: f64,
    pub dfov_center: [f64; 2],
    pub dfov_side: f64,
    pub pattern: FovPattern,
}

impl FovSpec {
    /// Pixel-center membership in RFOV ∩ DFOV.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.rfov_center[0], y - self.rfov_center[1]);
        // relative slack keeps inscribed-square corners inside the disc
        let in_disc = dx * dx + dy * dy <= self.rfov_radius * self.rfov_radius * (1.0 + 1e-12);
        let half = self.dfov_side / 2.0;
        let in_square =
            (x - self.dfov_center[0]).abs() <= half && (y - self.dfov_center[1]).abs() <= half;
        in_disc && in_square
    }

    pub fn dfov_origin(&self) -> [f64; 2] {
        [
            self.dfov_center[0] - self.dfov_side / 2.0,
            self.dfov_center[1] - self.dfov_side / 2.0,
        ]
    }

    /// True when all four DFOV corners lie inside the RFOV disc.
    pub fn dfov_inside_disc(&self) -> bool {
        let half = self.dfov_side / 2.0;
        let r2 = self.rfov_radius * self.rfov_radius * (1.0 + 1e-12);
        [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)].iter().all(|(sx, sy)| {
            let dx = self.dfov_center[0] + sx * half - self.rfov_center[0];
            let dy = self.dfov_center[1] + sy * half - self.rfov_center[1];
            dx * dx + dy * dy <= r2
        })
    }

    pub fn crop_transform(&self, out_dim: usize) -> CropTransform {
        CropTransform {
            origin: self.dfov_origin(),
            side: self.dfov_side,
            out_dim,
        }
    }
}

/// Parameters of the simulation. Missing JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub p_a: f64,
    pub p_b: f64,
    pub p_c: f64,
    pub r_rfov_range: [f64; 2],
    pub r_dfov_range: [f64; 2],
    pub aug: AugRanges,
    pub seed: u64,
    /// Working dimension of the square slices.
    pub dim: usize,
    /// HU written into invalid (non-FOV) pixels and out-of-frame regions.
    pub fill: f64,
    /// Per-slice cap on samples of each severity level (stratified mode).
    pub max_per_severity: usize,
    /// Random draws per slice in stratified mode.
    pub attempts_per_slice: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            p_a: 0.5,
            p_b: 0.3,
            p_c: 0.2,
            r_rfov_range: [0.6, 0.9],
            r_dfov_range: [0.7, 1.0],
            aug: AugRanges::default(),
            seed: 0,
            dim: crate::WORKING_DIM,
            fill: crate::HU_WINDOW.0,
            max_per_severity: 5,
            attempts_per_slice: 200,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_a, self.p_b, self.p_c];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("pattern probabilities {ps:?} must sum to 1")));
        }
        for (name, [lo, hi]) in [("r_rfov_range", self.r_rfov_range), ("r_dfov_range", self.r_dfov_range)] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(Error::InvalidArgument(format!("{name} [{lo}, {hi}] must lie in (0, 1]")));
            }
        }
        if self.dim < 8 {
            return Err(Error::InvalidArgument(format!("dim {} too small", self.dim)));
        }
        if !self.fill.is_finite() {
            return Err(Error::InvalidArgument("fill must be finite".into()));
        }
        self.aug.validate()
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws a FOV configuration for a `cfg.dim`-sized square slice.
pub fn sample_fov<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> FovSpec {
    let dim = cfg.dim as f64;
    let center = [dim / 2.0, dim / 2.0];
    let u: f64 = rng.random();
    let pattern = if u < cfg.p_a {
        FovPattern::A
    } else if u < cfg.p_a + cfg.p_b {
        FovPattern::B
    } else {
        FovPattern::C
    };
    let r_rfov = uniform(rng, cfg.r_rfov_range);
    let radius = r_rfov * dim / 2.0;
    match pattern {
        FovPattern::A => FovSpec {
            rfov_center: center,
            rfov_radius: radius,
            dfov_center: center,
            dfov_side: radius * std::f64::consts::SQRT_2,
            pattern,
        },
        FovPattern::B => FovSpec {
            rfov_center: center,
            rfov_radius: radius,
            dfov_center: center,
            dfov_side: 2.0 * radius,
            pattern,
        },
        FovPattern::C => {
            // Redraw the rare configurations whose square falls entirely
            // inside the disc; those are pattern a in disguise.
            let mut spec = draw_pattern_c(cfg, rng, center, r_rfov, radius);
            for _ in 0..64 {
                if !spec.dfov_inside_disc() {
                    break;
                }
                spec = draw_pattern_c(cfg, rng, center, r_rfov, radius);
            }
            spec
        }
    }
}

fn draw_pattern_c<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R, center: [f64; 2], r_rfov: f64, radius: f64) -> FovSpec {
    let r_dfov = uniform(rng, cfg.r_dfov_range);
    let d = cfg.dim as f64 * (1.0 - r_dfov) * r_rfov;
    let ox = uniform(rng, [-d / 2.0, d / 2.0]);
    let oy = uniform(rng, [-d / 2.0, d / 2.0]);
    FovSpec {
        rfov_center: center,
        rfov_radius: radius,
        dfov_center: [center[0] + ox, center[1] + oy],
        dfov_side: r_dfov * 2.0 * radius,
        pattern: FovPattern::C,
    }
}

pub fn fov_mask(spec: &FovSpec, width: usize, height: usize) -> Result<MaskGrid> {
    MaskGrid::from_fn(width, height, |x, y| spec.contains(x as f64 + 0.5, y as f64 + 0.5))
}

/// Keeps values inside the mask and writes `fill` elsewhere.
pub fn corrupt(img: &ImageGrid, mask: &MaskGrid, fill: f64) -> Result<ImageGrid> {
    check_dims(img.dims(), mask.dims())?;
    let values = img
        .values()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &m)| if m { v } else { fill })
        .collect();
    ImageGrid::new(img.width(), img.height(), img.spacing(), values)
}

/// Maps full-slice coordinates into the DFOV crop resampled to `out_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub origin: [f64; 2],
    pub side: f64,
    pub out_dim: usize,
}

impl CropTransform {
    pub fn scale(&self) -> f64 {
        self.out_dim as f64 / self.side
    }

    pub fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.scale();
        ((x - self.origin[0]) * s, (y - self.origin[1]) * s)
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.scale();
        (x / s + self.origin[0], y / s + self.origin[1])
    }

    pub fn forward_box(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.forward(b.x_min, b.y_min);
        let (x1, y1) = self.forward(b.x_max, b.y_max);
        BBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 }
    }

    pub fn inverse_box(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.inverse(b.x_min, b.y_min);
        let (x1, y1) = self.inverse(b.x_max, b.y_max);
        BBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 }
    }

    fn is_identity_for(&self, width: usize, height: usize) -> bool {
        self.origin == [0.0, 0.0] && self.side == width as f64 && width == height && width == self.out_dim
    }
}

/// Crops the DFOV square, resamples it to `out_dim²`, and moves the body box
/// into the crop's coordinates (where it may extend beyond the frame).
pub fn crop_to_dfov(
    img: &ImageGrid,
    body_bbox_full: &BBox,
    spec: &FovSpec,
    out_dim: usize,
    fill: f64,
) -> Result<(ImageGrid, BBox)> {
    if !(spec.dfov_side >= 8.0) || out_dim == 0 {
        return Err(Error::Degenerate(format!("DFOV side {} below 8 px", spec.dfov_side)));
    }
    body_bbox_full.validate()?;
    let t = spec.crop_transform(out_dim);
    let cropped = if t.is_identity_for(img.width(), img.height()) {
        img.clone()
    } else {
        let spacing = img.spacing() / t.scale();
        warp_image(img, out_dim, out_dim, spacing, fill, |x, y| t.inverse(x, y))?
    };
    Ok((cropped, t.forward_box(body_bbox_full)))
}

/// FOV membership of each pixel of the DFOV crop, evaluated analytically.
pub fn cropped_fov_mask(spec: &FovSpec, out_dim: usize) -> Result<MaskGrid> {
    let t = spec.crop_transform(out_dim);
    MaskGrid::from_fn(out_dim, out_dim, |x, y| {
        let (sx, sy) = t.inverse(x as f64 + 0.5, y as f64 + 0.5);
        spec.contains(sx, sy)
    })
}

// ---------------------------------------------------------------------------
// Paired samples
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TruncationSample {
    /// Augmented slice with the complete body.
    pub uncorrupted: ImageGrid,
    /// Augmented full body mask.
    pub body: MaskGrid,
    pub corrupted: ImageGrid,
    pub fov_mask: MaskGrid,
    /// DFOV crop of the corrupted slice at the working dimension.
    pub cropped: ImageGrid,
    pub cropped_fov: MaskGrid,
    pub gt_bbox_full: BBox,
    pub gt_bbox_cropped: BBox,
    pub tci: f64,
    pub severity: SeverityLevel,
    pub spec: FovSpec,
    pub aug: AffineAug,
    pub touches_border: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Keep every sample, including bodies pushed onto the frame.
    Completion,
    /// Reject samples whose augmented body touches the frame.
    BboxTraining,
}

/// TCI of the visible body (body ∩ FOV) against the FOV.
pub fn truncation_index(body: &MaskGrid, fov: &MaskGrid) -> Result<f64> {
    let visible = body.and(fov)?;
    if visible.is_empty() {
        return Err(Error::Rejected("FOV misses the body entirely".into()));
    }
    tci(&visible, fov)
}

fn check_complete_body(slice: &ImageGrid, body: &MaskGrid) -> Result<()> {
    check_dims(slice.dims(), body.dims())?;
    let full = MaskGrid::filled(body.width(), body.height(), true)?;
    if body.is_empty() {
        return Err(Error::Empty("body mask"));
    }
    if tci(body, &full)? > 0.0 {
        return Err(Error::Rejected("input slice is already truncated".into()));
    }
    if slice.width() != slice.height() {
        return Err(Error::InvalidArgument("slices must be square".into()));
    }
    Ok(())
}

/// Draws augmentation and FOV geometry, then builds the paired sample.
pub fn generate_sample<R: Rng + ?Sized>(
    slice: &ImageGrid,
    body: &MaskGrid,
    cfg: &SimConfig,
    rng: &mut R,
    mode: SampleMode,
) -> Result<TruncationSample> {
    cfg.validate()?;
    check_complete_body(slice, body)?;
    let aug = cfg.aug.sample(rng);
    let spec = sample_fov(&SimConfig { dim: slice.width(), ..cfg.clone() }, rng);
    let sample = realize_sample(slice, body, &aug, &spec, cfg)?;
    if mode == SampleMode::BboxTraining && sample.touches_border {
        return Err(Error::Rejected("augmented body touches the frame".into()));
    }
    Ok(sample)
}

/// Builds a sample from fixed augmentation and FOV geometry.
pub fn realize_sample(
    slice: &ImageGrid,
    body: &MaskGrid,
    aug: &AffineAug,
    spec: &FovSpec,
    cfg: &SimConfig,
) -> Result<TruncationSample> {
    let (w, h) = slice.dims();
    let moved = apply_affine(slice, body, aug, cfg.fill)?;
    let fov = fov_mask(spec, w, h)?;
    let corrupted = corrupt(&moved.image, &fov, cfg.fill)?;
    let tci = truncation_index(&moved.mask, &fov)?;
    let gt_bbox_full = BBox::from_mask(&moved.mask).ok_or(Error::Empty("augmented body"))?;
    let (cropped, gt_bbox_cropped) = crop_to_dfov(&corrupted, &gt_bbox_full, spec, cfg.dim, cfg.fill)?;
    let cropped_fov = cropped_fov_mask(spec, cfg.dim)?;
    Ok(TruncationSample {
        uncorrupted: moved.image,
        body: moved.mask,
        corrupted,
        fov_mask: fov,
        cropped,
        cropped_fov,
        gt_bbox_full,
        gt_bbox_cropped,
        tci,
        severity: SeverityLevel::from_tci(tci),
        spec: *spec,
        aug: *aug,
        touches_border: moved.touches_border,
    })
}

/// Mixes a base seed with an index (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Validation/test-style generation: up to `cfg.attempts_per_slice` draws,
/// each seeded with `derive_seed(slice_seed, attempt)`, keeping at most
/// `cfg.max_per_severity` samples per truncated severity level. Untruncated
/// draws and bodies pushed onto the frame are skipped.
///
/// Every returned sample is reproducible with
/// `generate_sample(.., &mut rng_from_seed(seed), ..)`.
pub fn generate_stratified(
    slice: &ImageGrid,
    body: &MaskGrid,
    cfg: &SimConfig,
    slice_seed: u64,
) -> Result<Vec<(u64, TruncationSample)>> {
    cfg.validate()?;
    check_complete_body(slice, body)?;
    let (w, h) = slice.dims();
    let slice_cfg = SimConfig { dim: w, ..cfg.clone() };
    let mut counts = [0usize; 5];
    let mut out = Vec::new();
    for attempt in 0..cfg.attempts_per_slice as u64 {
        if SeverityLevel::TRUNCATED.iter().all(|s| counts[s.index()] >= cfg.max_per_severity) {
            break;
        }
        let seed = derive_seed(slice_seed, attempt);
        let mut rng = rng_from_seed(seed);
        let aug = cfg.aug.sample(&mut rng);
        let spec = sample_fov(&slice_cfg, &mut rng);

        // cheap mask-only screening before building the images
        let moved = apply_affine_mask(body, &aug);
        if moved.touches_frame() {
            continue;
        }
        let fov = fov_mask(&spec, w, h)?;
        let level = match truncation_index(&moved, &fov) {
            Ok(t) => SeverityLevel::from_tci(t),
            Err(Error::Rejected(_)) => continue,
            Err(e) => return Err(e),
        };
        if level == SeverityLevel::None || counts[level.index()] >= cfg.max_per_severity {
            continue;
        }
        let sample = realize_sample(slice, body, &aug, &spec, cfg)?;
        debug_assert_eq!(sample.severity, level);
        counts[level.index()] += 1;
        out.push((seed, sample));
    }
    Ok(out)
}
