//! Harmonic inpainting.
//!
//! Unknown pixels solve the 5-point discrete Laplace equation with the known
//! pixels as Dirichlet data. Frame edges are mirror (Neumann) boundaries: a
//! pixel only couples to its in-frame neighbors, which keeps the operator
//! symmetric positive definite on every unknown component that touches known
//! data.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::extent::{EllipseFit, ExtensionResult};
use crate::raster::{ImageGrid, MaskGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    ConjugateGradient,
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Target relative residual ‖b − Ax‖ / ‖b‖.
    pub tol: f64,
    /// Iteration limit; `None` means ten times the unknown count.
    pub max_iters: Option<usize>,
    pub method: SolverMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iters: None, method: SolverMethod::ConjugateGradient }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == Some(0) {
            return Err(Error::InvalidArgument("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InpaintResult {
    pub image: ImageGrid,
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Diagnostics without the image, as recorded in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
    pub unknown_pixels: usize,
}

impl InpaintResult {
    pub fn diagnostics(&self, unknown_pixels: usize) -> SolveDiagnostics {
        SolveDiagnostics {
            residual: self.residual,
            iters: self.iters,
            converged: self.converged,
            unknown_pixels,
        }
    }
}

/// Sparse system over the unknown pixels. Each row has up to four unknown
/// neighbors; couplings to known pixels are folded into `rhs`.
struct Laplacian {
    pixels: Vec<usize>,
    diag: Vec<f64>,
    neighbors: Vec<[u32; 4]>,
    degree: Vec<u8>,
    rhs: Vec<f64>,
}

impl Laplacian {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            let nb = &self.neighbors[i][..self.degree[i] as usize];
            out[i] = self.diag[i] * x[i] - nb.iter().map(|&j| x[j as usize]).sum::<f64>();
        }
    }

    fn residual_norm(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        self.apply(x, scratch);
        scratch.iter().zip(&self.rhs).map(|(ax, b)| (b - ax).powi(2)).sum::<f64>().sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Solve {
    iters: usize,
    residual: f64,
    converged: bool,
}

fn conjugate_gradient(sys: &Laplacian, x: &mut [f64], tol: f64, max_iters: usize, denom: f64) -> Solve {
    let n = x.len();
    let mut ax = vec![0.0; n];
    sys.apply(x, &mut ax);
    let mut r: Vec<f64> = sys.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut best = (rr.sqrt() / denom, x.to_vec());
    let mut iters = 0;
    while rr.sqrt() / denom > tol && iters < max_iters {
        sys.apply(&p, &mut ax);
        let pap = dot(&p, &ax);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ax[i];
        }
        let rr_new = dot(&r, &r);
        for i in 0..n {
            p[i] = r[i] + (rr_new / rr) * p[i];
        }
        rr = rr_new;
        iters += 1;
        if rr.sqrt() / denom < best.0 {
            best.0 = rr.sqrt() / denom;
            best.1.copy_from_slice(x);
        }
    }
    // the recurrence drifts from the true residual; report the true one
    let mut residual = sys.residual_norm(x, &mut ax) / denom;
    if residual > tol {
        let best_true = sys.residual_norm(&best.1, &mut ax) / denom;
        if best_true < residual {
            x.copy_from_slice(&best.1);
            residual = best_true;
        }
    }
    Solve { iters, residual, converged: residual <= tol }
}

fn gauss_seidel(sys: &Laplacian, x: &mut [f64], tol: f64, max_iters: usize, denom: f64) -> Solve {
    let mut scratch = vec![0.0; x.len()];
    let mut residual = sys.residual_norm(x, &mut scratch) / denom;
    let mut iters = 0;
    while residual > tol && iters < max_iters {
        for i in 0..x.len() {
            let nb = &sys.neighbors[i][..sys.degree[i] as usize];
            x[i] = (sys.rhs[i] + nb.iter().map(|&j| x[j as usize]).sum::<f64>()) / sys.diag[i];
        }
        iters += 1;
        residual = sys.residual_norm(x, &mut scratch) / denom;
    }
    Solve { iters, residual, converged: residual <= tol }
}

/// Harmonic fill of the pixels where `known` is false. Known pixels are
/// returned unchanged; unknown pixels start from their input values.
pub fn harmonic_inpaint(img: &ImageGrid, known: &MaskGrid, cfg: &SolverConfig) -> Result<InpaintResult> {
    cfg.validate()?;
    check_dims(img.dims(), known.dims())?;
    let (w, h) = img.dims();
    let unknown = known.not();
    if unknown.is_empty() {
        return Ok(InpaintResult { image: img.clone(), residual: 0.0, iters: 0, converged: true });
    }
    // Every unknown component borders a known pixel unless nothing is known:
    // an in-frame neighbor of a component is either in it or known.
    if known.is_empty() {
        return Err(Error::Empty("known pixel set"));
    }
    let vals = img.values();
    let known_bits = known.bits();
    let neighbors_of = |i: usize| {
        let (x, y) = (i % w, i / w);
        let mut out = [usize::MAX; 4];
        if x > 0 {
            out[0] = i - 1;
        }
        if x + 1 < w {
            out[1] = i + 1;
        }
        if y > 0 {
            out[2] = i - w;
        }
        if y + 1 < h {
            out[3] = i + w;
        }
        out
    };

    let mut out = vals.to_vec();
    let mut index = vec![u32::MAX; w * h];
    let pixels: Vec<usize> = (0..w * h).filter(|&i| !known_bits[i]).collect();
    for (k, &i) in pixels.iter().enumerate() {
        index[i] = k as u32;
    }

    let n = pixels.len();
    let mut sys = Laplacian {
        diag: vec![0.0; n],
        neighbors: vec![[0; 4]; n],
        degree: vec![0; n],
        rhs: vec![0.0; n],
        pixels,
    };
    for r in 0..n {
        for j in neighbors_of(sys.pixels[r]) {
            if j == usize::MAX {
                continue;
            }
            sys.diag[r] += 1.0;
            if known_bits[j] {
                sys.rhs[r] += vals[j];
            } else {
                let d = sys.degree[r] as usize;
                sys.neighbors[r][d] = index[j];
                sys.degree[r] += 1;
            }
        }
    }
    let mut x: Vec<f64> = sys.pixels.iter().map(|&i| vals[i]).collect();
    let bnorm = dot(&sys.rhs, &sys.rhs).sqrt();
    let denom = if bnorm > 0.0 { bnorm } else { 1.0 };
    let max_iters = cfg.max_iters.unwrap_or(10 * n);
    let solve = match cfg.method {
        SolverMethod::ConjugateGradient => conjugate_gradient(&sys, &mut x, cfg.tol, max_iters, denom),
        SolverMethod::GaussSeidel => gauss_seidel(&sys, &mut x, cfg.tol, max_iters, denom),
    };
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Solver("non-finite iterate".into()));
    }
    for (&i, v) in sys.pixels.iter().zip(&x) {
        out[i] = *v;
    }
    Ok(InpaintResult {
        image: ImageGrid::new(w, h, img.spacing(), out)?,
        residual: solve.residual,
        iters: solve.iters,
        converged: solve.converged,
    })
}

/// Known set used for completion: the extended FOV, plus everything outside
/// the body prior (mapped into the extended frame) when one is given.
pub fn completion_known_mask(ext: &ExtensionResult, prior: Option<&EllipseFit>) -> Result<MaskGrid> {
    match prior {
        None => Ok(ext.extended_fov.clone()),
        Some(e) => {
            let (w, h) = ext.extended_fov.dims();
            let outside = ext.map_ellipse(e).mask(w, h)?.not();
            ext.extended_fov.or(&outside)
        }
    }
}

/// Completes an extended slice. Pixels outside the prior and the FOV are
/// pinned to `fill` (background air); the rest of the missing region is
/// inpainted. Output is clamped to the working HU window.
pub fn complete_sample(
    ext: &ExtensionResult,
    prior: Option<&EllipseFit>,
    fill: f64,
    cfg: &SolverConfig,
) -> Result<InpaintResult> {
    let known = completion_known_mask(ext, prior)?;
    let img = &ext.extended_image;
    let fov = &ext.extended_fov;
    let seeded = ImageGrid::from_fn(img.width(), img.height(), img.spacing(), |x, y| {
        if known.get(x, y) && !fov.get(x, y) {
            fill
        } else {
            img.get(x, y)
        }
    })?;
    let mut res = harmonic_inpaint(&seeded, &known, cfg)?;
    res.image = res.image.clamp(crate::HU_WINDOW.0, crate::HU_WINDOW.1);
    Ok(res)
}
