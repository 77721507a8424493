//! Per-sample stage logic, independent of file layout.

use serde::{Deserialize, Serialize};

use fovx_core::bcstats::{mask_area_cm2, mean_under, segment_tissue, TissueThresholds};
use fovx_core::extent::{extend_border, extension_ratio, predict_body_bbox, BodyExtent, EllipseFit, ExtensionResult};
use fovx_core::fovsim::FovSpec;
use fovx_core::inpaint::{complete_sample, completion_known_mask, InpaintResult, SolverConfig};
use fovx_core::metrics::{dice, pixel_rmse, tci, BBox};
use fovx_core::raster::{boundary, dilate, extract_body_mask, warp_image, ImageGrid, MaskGrid};
use fovx_core::Result;

/// Body threshold used when extracting the visible body from a slice.
pub const BODY_THRESHOLD: f64 = -125.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtendParams {
    pub r0: f64,
    /// FOV-boundary dilation when selecting anatomical contour points.
    pub margin: usize,
    /// Width of the FOV rim discarded before processing; resampling blends
    /// fill into the outermost pixels of the FOV.
    pub guard: usize,
    pub fill: f64,
}

impl Default for ExtendParams {
    fn default() -> Self {
        Self { r0: fovx_core::extent::DEFAULT_R0, margin: 1, guard: 2, fill: fovx_core::HU_WINDOW.0 }
    }
}

pub struct Extended {
    pub ext: ExtensionResult,
    /// TCI of the visible body against the FOV; extension only runs when > 0.
    pub detected_tci: f64,
    pub estimate: Option<BodyExtent>,
}

impl Extended {
    pub fn prior(&self) -> Option<&EllipseFit> {
        self.estimate.as_ref().filter(|e| !e.low_confidence).and_then(|e| e.fit.as_ref())
    }
}

/// FOV with a rim of `guard` pixels removed (frame edges count as FOV edges).
pub fn reliable_fov(fov: &MaskGrid, guard: usize) -> Result<MaskGrid> {
    if guard == 0 {
        return Ok(fov.clone());
    }
    fov.and_not(&dilate(&boundary(fov), guard - 1))
}

pub fn extend_one(img: &ImageGrid, fov: &MaskGrid, p: &ExtendParams) -> Result<Extended> {
    let valid = reliable_fov(fov, p.guard)?;
    let body = extract_body_mask(img, Some(&valid), BODY_THRESHOLD)?;
    let detected_tci = if body.is_empty() { 0.0 } else { tci(&body, &valid)? };
    if detected_tci == 0.0 {
        let ext = extend_border(img, &valid, 1.0, p.fill)?;
        return Ok(Extended { ext, detected_tci, estimate: None });
    }
    let estimate = predict_body_bbox(&body, &valid, p.margin)?;
    let ratio = extension_ratio(&estimate.bbox, img.width(), img.height(), p.r0)?;
    let ext = extend_border(img, &valid, ratio, p.fill)?;
    Ok(Extended { ext, detected_tci, estimate: Some(estimate) })
}

/// Whether the extended frame contains `bbox` (given in unextended coords).
pub fn frame_covers(ext: &ExtensionResult, bbox: &BBox) -> bool {
    let (w, h) = ext.extended_image.dims();
    let frame = BBox { x_min: 0.0, y_min: 0.0, x_max: w as f64, y_max: h as f64 };
    frame.contains(&ext.map_box(bbox), 1e-9)
}

pub fn complete_one(ext: &ExtensionResult, prior: Option<&EllipseFit>, fill: f64, cfg: &SolverConfig) -> Result<InpaintResult> {
    complete_sample(ext, prior, fill, cfg)
}

pub fn unknown_count(ext: &ExtensionResult, prior: Option<&EllipseFit>) -> Result<usize> {
    Ok(completion_known_mask(ext, prior)?.not().count())
}

/// The complete augmented slice seen through the extended frame of a sample:
/// extended pixel → DFOV crop coordinates → full-slice coordinates.
pub fn truth_in_extended(uncorrupted: &ImageGrid, spec: &FovSpec, dim: usize, ratio: f64, fill: f64) -> Result<ImageGrid> {
    let t = spec.crop_transform(dim);
    let c = dim as f64 / 2.0;
    let spacing = uncorrupted.spacing() / t.scale() * ratio;
    warp_image(uncorrupted, dim, dim, spacing, fill, |u, v| {
        t.inverse((u - c) * ratio + c, (v - c) * ratio + c)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub sat_area: f64,
    pub muscle_area: f64,
    pub sat_atten: Option<f64>,
    pub muscle_atten: Option<f64>,
}

pub struct Measured {
    pub body: MaskGrid,
    pub comp: Composition,
}

pub fn measure_slice(img: &ImageGrid) -> Result<Measured> {
    let t = segment_tissue(img, &TissueThresholds::default())?;
    Ok(Measured {
        comp: Composition {
            sat_area: mask_area_cm2(&t.sat, img.spacing()),
            muscle_area: mask_area_cm2(&t.muscle, img.spacing()),
            sat_atten: mean_under(img, &t.sat).ok(),
            muscle_atten: mean_under(img, &t.muscle).ok(),
        },
        body: t.body,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantScore {
    pub pixel_rmse: f64,
    pub dsc: f64,
    pub comp: Composition,
}

/// Scores one image against the truth over the whole extended frame.
pub fn score(img: &ImageGrid, truth: &ImageGrid, truth_m: &Measured) -> Result<VariantScore> {
    let all = MaskGrid::filled(img.width(), img.height(), true)?;
    let m = measure_slice(img)?;
    Ok(VariantScore {
        pixel_rmse: pixel_rmse(img, truth, &all)?,
        dsc: dice(&m.body, &truth_m.body)?,
        comp: m.comp,
    })
}
