//! Body-composition measurements and evaluation statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{check_dims, Error, Result};
use crate::fovsim::rng_from_seed;
use crate::raster::{extract_body_mask, ImageGrid, MaskGrid};

/// Two-sided 95% normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Variance inflation of Fisher's z for Spearman coefficients relative to
/// Pearson's 1/(n − 3) (Fieller, Hartley & Pearson).
pub const SPEARMAN_Z_VARIANCE: f64 = 1.06;

pub const DEFAULT_BOOTSTRAP: usize = 1000;

// ---------------------------------------------------------------------------
// Measurements
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcMeasurement {
    /// cm²
    pub sat_area: f64,
    /// cm²
    pub muscle_area: f64,
    /// HU
    pub sat_atten: f64,
    /// HU
    pub muscle_atten: f64,
    /// mm
    pub spacing_used: f64,
}

pub fn mask_area_cm2(mask: &MaskGrid, spacing_mm: f64) -> f64 {
    mask.count() as f64 * (spacing_mm / 10.0).powi(2)
}

pub fn mean_under(img: &ImageGrid, mask: &MaskGrid) -> Result<f64> {
    check_dims(img.dims(), mask.dims())?;
    let (sum, n) = img
        .values()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        return Err(Error::Empty("mask for attenuation"));
    }
    Ok(sum / n as f64)
}

pub fn measure(seg_sat: &MaskGrid, seg_muscle: &MaskGrid, img: &ImageGrid) -> Result<BcMeasurement> {
    check_dims(img.dims(), seg_sat.dims())?;
    check_dims(img.dims(), seg_muscle.dims())?;
    Ok(BcMeasurement {
        sat_area: mask_area_cm2(seg_sat, img.spacing()),
        muscle_area: mask_area_cm2(seg_muscle, img.spacing()),
        sat_atten: mean_under(img, seg_sat)?,
        muscle_atten: mean_under(img, seg_muscle)?,
        spacing_used: img.spacing(),
    })
}

/// Threshold segmenter standing in for a trained BC model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueThresholds {
    /// Body = largest component above this, holes filled.
    pub body: f64,
    /// Adipose is (body, fat_max]; lean soft tissue is above `fat_max`.
    pub fat_max: f64,
}

impl Default for TissueThresholds {
    fn default() -> Self {
        Self { body: -125.0, fat_max: -30.0 }
    }
}

#[derive(Debug, Clone)]
pub struct TissueMasks {
    pub body: MaskGrid,
    pub sat: MaskGrid,
    pub muscle: MaskGrid,
}

pub fn segment_tissue(img: &ImageGrid, th: &TissueThresholds) -> Result<TissueMasks> {
    let body = extract_body_mask(img, None, th.body)?;
    let (w, h) = img.dims();
    let sat = MaskGrid::from_fn(w, h, |x, y| {
        let v = img.get(x, y);
        body.get(x, y) && v > th.body && v <= th.fat_max
    })?;
    let muscle = MaskGrid::from_fn(w, h, |x, y| body.get(x, y) && img.get(x, y) > th.fat_max)?;
    Ok(TissueMasks { body, sat, muscle })
}

// ---------------------------------------------------------------------------
// Anthropometry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl std::str::FromStr for Sex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Ok(Sex::Male),
            "f" | "female" => Ok(Sex::Female),
            other => Err(Error::InvalidArgument(format!("unknown sex {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anthro {
    pub height_m: f64,
    pub weight_kg: f64,
    pub sex: Sex,
}

impl Anthro {
    pub fn new(height_m: f64, weight_kg: f64, sex: Sex) -> Result<Self> {
        let a = Self { height_m, weight_kg, sex };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.height_m > 0.5 && self.height_m < 2.5) {
            return Err(Error::InvalidArgument(format!("height {} m outside (0.5, 2.5)", self.height_m)));
        }
        if !(self.weight_kg > 20.0 && self.weight_kg < 300.0) {
            return Err(Error::InvalidArgument(format!("weight {} kg outside (20, 300)", self.weight_kg)));
        }
        Ok(())
    }

    pub fn bmi(&self) -> f64 {
        self.weight_kg / (self.height_m * self.height_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnthroIndices {
    pub ffm: f64,
    pub fm: f64,
    pub ffm_index: f64,
    pub fm_index: f64,
}

pub fn anthro_ffm_fm(a: &Anthro) -> Result<AnthroIndices> {
    a.validate()?;
    let (h, w) = (a.height_m, a.weight_kg);
    let ffm = match a.sex {
        Sex::Male => 5.1 * h.powf(1.14) * w.powf(0.41),
        Sex::Female => 5.34 * h.powf(1.47) * w.powf(0.33),
    };
    let fm = w - ffm;
    let h2 = h * h;
    Ok(AnthroIndices { ffm, fm, ffm_index: ffm / h2, fm_index: fm / h2 })
}

// ---------------------------------------------------------------------------
// Agreement
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub n: usize,
}

/// Bias and 95% limits of agreement of `measure − reference`.
pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltman> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, found: pairs.len() });
    }
    let diffs: Vec<f64> = pairs.iter().map(|(m, r)| m - r).collect();
    let bias = mean(&diffs);
    let sd = sample_sd(&diffs, bias);
    Ok(BlandAltman { bias, sd, loa_low: bias - 1.96 * sd, loa_high: bias + 1.96 * sd, n: pairs.len() })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64], m: f64) -> f64 {
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Rank correlation
// ---------------------------------------------------------------------------

/// 1-based ranks with ties sharing their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, found: x.len() });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("constant input has no correlation".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    pearson(&ranks(x), &ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    pub ci: [f64; 2],
    pub n: usize,
}

fn fisher_z(r: f64) -> f64 {
    // keep |r| = 1 finite
    r.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh()
}

/// Spearman coefficient with a Fisher-z 95% interval (SE = 1/√(n − 3)).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, found: x.len() });
    }
    let rho = spearman_rho(x, y)?;
    Ok(Correlation { rho, ci: fisher_ci(rho, x.len()), n: x.len() })
}

fn fisher_ci(r: f64, n: usize) -> [f64; 2] {
    let z = fisher_z(r);
    let se = 1.0 / ((n - 3) as f64).sqrt();
    [(z - Z_975 * se).tanh(), (z + Z_975 * se).tanh()]
}

// ---------------------------------------------------------------------------
// Dependent correlations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrKind {
    /// r(j,k) vs r(j,h): one shared variable.
    Overlapping,
    /// r(j,k) vs r(h,m): four variables on the same subjects.
    Nonoverlapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrReport {
    pub r1: f64,
    pub r2: f64,
    pub ci1: [f64; 2],
    pub ci2: [f64; 2],
    pub z: f64,
    pub p_value: f64,
    pub n: usize,
    pub test_kind: CorrKind,
}

pub enum CorrData<'a> {
    Overlapping { j: &'a [f64], k: &'a [f64], h: &'a [f64] },
    Nonoverlapping { j: &'a [f64], k: &'a [f64], h: &'a [f64], m: &'a [f64] },
}

pub const MIN_COMPARE_N: usize = 10;

fn check_columns(cols: &[&[f64]]) -> Result<usize> {
    let n = cols[0].len();
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument("correlation columns differ in length".into()));
    }
    if n < MIN_COMPARE_N {
        return Err(Error::InsufficientData { needed: MIN_COMPARE_N, found: n });
    }
    Ok(n)
}

fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// z statistic for a difference of Fisher z values with asymptotic
/// correlation `c` between them.
fn dependent_z(z1: f64, z2: f64, c: f64, n: usize) -> f64 {
    if z1 == z2 {
        return 0.0;
    }
    let var = SPEARMAN_Z_VARIANCE * (2.0 - 2.0 * c).max(0.0);
    if var == 0.0 {
        return f64::INFINITY.copysign(z1 - z2);
    }
    ((n - 3) as f64).sqrt() * (z1 - z2) / var.sqrt()
}

/// Compares two dependent Spearman correlations.
///
/// Overlapping: Hittner, May & Silver (2003), the Dunn-Clark z with the
/// covariance evaluated at the back-transformed mean correlation r̄:
///   c = [r_kh(1 − 2r̄²) − ½r̄²(1 − 2r̄² − r_kh²)] / (1 − r̄²)².
///
/// Non-overlapping: Silver, Hittner & May (2004), the Raghunathan-Rosenthal-
/// Rubin modification of Steiger's z, again at r̄:
///   c = [½r̄²(r_jh² + r_jm² + r_kh² + r_km²) + r_jh·r_km + r_jm·r_kh
///        − r̄(r_jh·r_jm + r_kh·r_km + r_jh·r_kh + r_jm·r_km)] / (1 − r̄²)².
///
/// In both, z = √(n − 3)(z₁ − z₂) / √(v(2 − 2c)) with v the Spearman variance
/// factor, and p is two-sided normal.
pub fn compare_correlations(data: &CorrData) -> Result<CorrReport> {
    match *data {
        CorrData::Overlapping { j, k, h } => {
            let n = check_columns(&[j, k, h])?;
            let (r1, r2, rkh) = (spearman_rho(j, k)?, spearman_rho(j, h)?, spearman_rho(k, h)?);
            let (z1, z2) = (fisher_z(r1), fisher_z(r2));
            let rb = ((z1 + z2) / 2.0).tanh();
            let rb2 = rb * rb;
            let c = (rkh * (1.0 - 2.0 * rb2) - 0.5 * rb2 * (1.0 - 2.0 * rb2 - rkh * rkh)) / (1.0 - rb2).powi(2);
            let z = dependent_z(z1, z2, c, n);
            Ok(report(r1, r2, z, n, CorrKind::Overlapping))
        }
        CorrData::Nonoverlapping { j, k, h, m } => {
            let n = check_columns(&[j, k, h, m])?;
            let (r1, r2) = (spearman_rho(j, k)?, spearman_rho(h, m)?);
            let (rjh, rjm, rkh, rkm) = (spearman_rho(j, h)?, spearman_rho(j, m)?, spearman_rho(k, h)?, spearman_rho(k, m)?);
            let (z1, z2) = (fisher_z(r1), fisher_z(r2));
            let rb = ((z1 + z2) / 2.0).tanh();
            let rb2 = rb * rb;
            let c = (0.5 * rb2 * (rjh * rjh + rjm * rjm + rkh * rkh + rkm * rkm) + rjh * rkm + rjm * rkh
                - rb * (rjh * rjm + rkh * rkm + rjh * rkh + rjm * rkm))
                / (1.0 - rb2).powi(2);
            let z = dependent_z(z1, z2, c, n);
            Ok(report(r1, r2, z, n, CorrKind::Nonoverlapping))
        }
    }
}

fn report(r1: f64, r2: f64, z: f64, n: usize, test_kind: CorrKind) -> CorrReport {
    CorrReport {
        r1,
        r2,
        ci1: fisher_ci(r1, n),
        ci2: fisher_ci(r2, n),
        z,
        p_value: two_sided_p(z),
        n,
        test_kind,
    }
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub center: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Percentile bootstrap of `stat` over resampled indices; `center` is the
/// statistic on the full sample and `sd` the bootstrap standard error.
pub fn bootstrap<F>(n: usize, resamples: usize, seed: u64, stat: F) -> Result<Estimate>
where
    F: Fn(&[usize]) -> f64,
{
    if n == 0 {
        return Err(Error::Empty("bootstrap sample"));
    }
    if resamples < 2 {
        return Err(Error::InvalidArgument("need at least 2 bootstrap resamples".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    let center = stat(&all);
    let mut rng = rng_from_seed(seed);
    let mut idx = vec![0usize; n];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            stat(&idx)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let m = mean(&stats);
    Ok(Estimate {
        center,
        sd: sample_sd(&stats, m),
        ci_low: quantile_sorted(&stats, 0.025),
        ci_high: quantile_sorted(&stats, 0.975),
        n,
    })
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// RMSE of errors with a bootstrap 95% interval.
pub fn rmse_with_ci(errors: &[f64], resamples: usize, seed: u64) -> Result<Estimate> {
    bootstrap(errors.len(), resamples, seed, |idx| {
        (idx.iter().map(|&i| errors[i] * errors[i]).sum::<f64>() / idx.len() as f64).sqrt()
    })
}

/// Mean of values with a bootstrap 95% interval.
pub fn mean_with_ci(values: &[f64], resamples: usize, seed: u64) -> Result<Estimate> {
    bootstrap(values.len(), resamples, seed, |idx| idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64)
}
