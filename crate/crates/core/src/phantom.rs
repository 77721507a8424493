//! Elliptical chest phantoms: skin-level fat ring, muscle ring, a soft-tissue
//! interior and two lungs, with mild noise inside the body.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extent::{EllipseFit, FitMethod};
use crate::raster::{ImageGrid, MaskGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dim: usize,
    pub spacing_mm: [f64; 2],
    /// Outer semi-axes as fractions of `dim`.
    pub semi_major: [f64; 2],
    pub semi_minor: [f64; 2],
    pub max_tilt_rad: f64,
    /// Center offset from the frame center, fraction of `dim`.
    pub max_offset: f64,
    /// Layer thicknesses as fractions of the outer minor semi-axis.
    pub fat_thickness: [f64; 2],
    pub muscle_thickness: [f64; 2],
    pub air_hu: f64,
    pub fat_hu: f64,
    pub muscle_hu: f64,
    pub interior_hu: f64,
    pub lung_hu: f64,
    pub noise_sd: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dim: crate::WORKING_DIM,
            spacing_mm: [1.4, 1.8],
            semi_major: [0.30, 0.40],
            semi_minor: [0.22, 0.30],
            max_tilt_rad: 0.15,
            max_offset: 0.03,
            fat_thickness: [0.08, 0.18],
            muscle_thickness: [0.08, 0.14],
            air_hu: -1000.0,
            fat_hu: -100.0,
            muscle_hu: 40.0,
            interior_hu: 30.0,
            lung_hu: -850.0,
            noise_sd: 6.0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.spacing_mm, self.semi_major, self.semi_minor, self.fat_thickness, self.muscle_thickness];
        if ranges.iter().any(|r| !(r[0] > 0.0 && r[0] <= r[1])) {
            return Err(Error::InvalidArgument("phantom ranges must be positive and ordered".into()));
        }
        if self.dim < 32 {
            return Err(Error::InvalidArgument(format!("phantom dim {} too small", self.dim)));
        }
        // the largest tilted body plus offset must clear the frame by 2 px
        let reach = (self.semi_major[1] + self.max_offset) * self.dim as f64 + 2.0;
        if reach >= self.dim as f64 / 2.0 {
            return Err(Error::InvalidArgument("phantom body can reach the frame edge".into()));
        }
        if self.fat_thickness[1] + self.muscle_thickness[1] >= 0.6 {
            return Err(Error::InvalidArgument("tissue layers too thick".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomGeometry {
    pub outer: EllipseFit,
    pub fat_inner: EllipseFit,
    pub muscle_inner: EllipseFit,
    pub lungs: [EllipseFit; 2],
    pub spacing_mm: f64,
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: ImageGrid,
    pub body: MaskGrid,
    pub sat: MaskGrid,
    pub muscle: MaskGrid,
    pub geometry: PhantomGeometry,
}

fn ellipse(center: [f64; 2], a: f64, b: f64, tilt: f64) -> EllipseFit {
    EllipseFit { center, semi_axes: [a, b], tilt, residual: 0.0, method: FitMethod::Ellipse }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

pub fn generate_phantom<R: Rng + ?Sized>(cfg: &PhantomConfig, rng: &mut R) -> Result<Phantom> {
    cfg.validate()?;
    let d = cfg.dim as f64;
    let spacing_mm = uniform(rng, cfg.spacing_mm);
    let a = uniform(rng, cfg.semi_major) * d;
    let b = uniform(rng, cfg.semi_minor).min(cfg.semi_major[0]) * d;
    let tilt = uniform(rng, [-cfg.max_tilt_rad, cfg.max_tilt_rad]);
    let off = cfg.max_offset * d;
    let center = [d / 2.0 + uniform(rng, [-off, off]), d / 2.0 + uniform(rng, [-off, off])];
    let tf = uniform(rng, cfg.fat_thickness) * b;
    let tm = uniform(rng, cfg.muscle_thickness) * b;

    let outer = ellipse(center, a, b, tilt);
    let fat_inner = ellipse(center, a - tf, b - tf, tilt);
    let muscle_inner = ellipse(center, a - tf - tm, b - tf - tm, tilt);
    let (ia, ib) = (a - tf - tm, b - tf - tm);
    let lung_a = ia * uniform(rng, [0.30, 0.38]);
    let lung_b = ib * uniform(rng, [0.55, 0.75]);
    let (s, c) = tilt.sin_cos();
    let dx = ia * 0.5;
    let lungs = [-1.0, 1.0].map(|side| {
        ellipse([center[0] + side * dx * c, center[1] + side * dx * s], lung_a, lung_b, tilt)
    });

    let noise = Normal::new(0.0, cfg.noise_sd.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n = cfg.dim;
    let mut values = vec![cfg.air_hu; n * n];
    let mut body = vec![false; n * n];
    let mut sat = vec![false; n * n];
    let mut muscle = vec![false; n * n];
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if !outer.contains(px, py) {
                continue;
            }
            let i = y * n + x;
            body[i] = true;
            let base = if !fat_inner.contains(px, py) {
                sat[i] = true;
                cfg.fat_hu
            } else if !muscle_inner.contains(px, py) {
                muscle[i] = true;
                cfg.muscle_hu
            } else if lungs.iter().any(|l| l.contains(px, py)) {
                cfg.lung_hu
            } else {
                cfg.interior_hu
            };
            values[i] = base + noise.sample(rng);
        }
    }
    Ok(Phantom {
        image: ImageGrid::new(n, n, spacing_mm, values)?,
        body: MaskGrid::new(n, n, body)?,
        sat: MaskGrid::new(n, n, sat)?,
        muscle: MaskGrid::new(n, n, muscle)?,
        geometry: PhantomGeometry { outer, fat_inner, muscle_inner, lungs, spacing_mm },
    })
}
