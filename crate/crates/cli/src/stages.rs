//! The batch stages behind the `fovx` subcommands:
//! phantom → simulate → extend → complete → evaluate.
//!
//! Samples are processed in parallel with per-sample seeds and collected in
//! input order, so outputs do not depend on the worker count.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use fovx_core::bcstats::{
    anthro_ffm_fm, bland_altman, compare_correlations, mean_with_ci, rmse_with_ci, spearman, Anthro, CorrData, Sex,
    DEFAULT_BOOTSTRAP,
};
use fovx_core::extent::{BodyExtent, EllipseFit, ExtensionResult};
use fovx_core::fovsim::{derive_seed, generate_stratified, rng_from_seed, FovPattern, FovSpec, SimConfig};
use fovx_core::inpaint::{SolveDiagnostics, SolverConfig};
use fovx_core::io::{read_image, read_mask, write_image, write_mask};
use fovx_core::metrics::{BBox, SeverityLevel};
use fovx_core::phantom::{generate_phantom, PhantomConfig, PhantomGeometry};
use fovx_core::raster::{AffineAug, ImageGrid, MaskGrid};
use fovx_core::HU_WINDOW;

use crate::error::{CliError, CliResult};
use crate::manifest::{load_manifest, Manifest, RunDir};
use crate::pipeline::{complete_one, extend_one, frame_covers, measure_slice, score, truth_in_extended, unknown_count, ExtendParams, VariantScore};

fn load_image(base: &Path, rel: &str) -> CliResult<ImageGrid> {
    let p = base.join(rel);
    read_image(&p).map_err(|e| CliError::from(e).context(p.display()))
}

fn load_mask(base: &Path, rel: &str) -> CliResult<MaskGrid> {
    let p = base.join(rel);
    read_mask(&p).map_err(|e| CliError::from(e).context(p.display()))
}

fn save_image(run: &RunDir, dir: &Path, name: &str, img: &ImageGrid) -> CliResult<String> {
    let p = dir.join(name);
    write_image(&p, img).map_err(|e| CliError::from(e).context(p.display()))?;
    run.rel(&p)
}

fn save_mask(run: &RunDir, dir: &Path, name: &str, mask: &MaskGrid) -> CliResult<String> {
    let p = dir.join(name);
    write_mask(&p, mask).map_err(|e| CliError::from(e).context(p.display()))?;
    run.rel(&p)
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("plain data serializes")
}

/// Resolves the upstream directory recorded in a manifest.
fn upstream<R>(dir: &Path, m: &Manifest<R>) -> CliResult<PathBuf> {
    let rel = m.input.as_deref().ok_or_else(|| CliError::input(format!("{} records no input stage", dir.display())))?;
    Ok(dir.join(rel))
}

// ---------------------------------------------------------------------------
// phantom
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomRecord {
    pub id: String,
    pub seed: u64,
    pub spacing_mm: f64,
    pub image: String,
    pub body: String,
    pub sat: String,
    pub muscle: String,
    pub geometry: PhantomGeometry,
}

pub fn run_phantom(count: usize, seed: u64, cfg: &PhantomConfig, out: &Path, resume: bool) -> CliResult<Manifest<PhantomRecord>> {
    cfg.validate()?;
    let params = json!({ "count": count, "seed": seed, "config": cfg });
    let run = RunDir::open(out, "phantom", None, params, resume)?;
    let records = (0..count)
        .into_par_iter()
        .map(|i| {
            let id = format!("{i:05}");
            let dir = run.sample_dir("phantoms", &id)?;
            if let Some(r) = run.existing_record(&dir)? {
                return Ok(r);
            }
            let s = derive_seed(seed, i as u64);
            let p = generate_phantom(cfg, &mut rng_from_seed(s))?;
            let rec = PhantomRecord {
                id,
                seed: s,
                spacing_mm: p.geometry.spacing_mm,
                image: save_image(&run, &dir, "image.pgm", &p.image)?,
                body: save_mask(&run, &dir, "body.pgm", &p.body)?,
                sat: save_mask(&run, &dir, "sat.pgm", &p.sat)?,
                muscle: save_mask(&run, &dir, "muscle.pgm", &p.muscle)?,
                geometry: p.geometry,
            };
            run.write_record(&dir, &rec)?;
            Ok(rec)
        })
        .collect::<CliResult<Vec<_>>>()?;
    info!("wrote {} phantoms to {}", records.len(), out.display());
    run.finish(json!({ "phantoms": records.len() }), records)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub uncorrupted: String,
    pub body: String,
    pub corrupted: String,
    pub fov: String,
    pub cropped: String,
    pub cropped_fov: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub source: String,
    pub seed: u64,
    pub tci: f64,
    pub severity: SeverityLevel,
    pub spec: FovSpec,
    pub aug: AffineAug,
    pub touches_border: bool,
    pub gt_bbox_full: BBox,
    /// Ground-truth body bbox in the DFOV-cropped frame; may extrude it.
    pub gt_bbox_cropped: BBox,
    pub files: SampleFiles,
}

fn severity_histogram<'a>(levels: impl Iterator<Item = &'a SeverityLevel>) -> BTreeMap<&'static str, usize> {
    let mut hist: BTreeMap<&'static str, usize> = SeverityLevel::TRUNCATED.iter().map(|s| (s.name(), 0)).collect();
    for s in levels {
        *hist.entry(s.name()).or_default() += 1;
    }
    hist
}

pub fn run_simulate(input: &Path, cfg: &SimConfig, out: &Path, resume: bool) -> CliResult<Manifest<SampleRecord>> {
    cfg.validate()?;
    let slices: Manifest<PhantomRecord> = load_manifest(input, "phantom")?;
    let params = json!({ "config": cfg });
    let run = RunDir::open(out, "simulate", Some(input), params, resume)?;
    let per_slice = slices
        .records
        .par_iter()
        .enumerate()
        .map(|(i, src)| -> CliResult<Vec<SampleRecord>> {
            let dir = run.sample_dir("samples", &src.id)?;
            if let Some(r) = run.existing_record(&dir)? {
                return Ok(r);
            }
            let image = load_image(input, &src.image)?.clamp(HU_WINDOW.0, HU_WINDOW.1);
            let body = load_mask(input, &src.body)?;
            let samples = generate_stratified(&image, &body, cfg, derive_seed(cfg.seed, i as u64))
                .map_err(|e| CliError::from(e).context(format!("slice {}", src.id)))?;
            let mut recs = Vec::with_capacity(samples.len());
            for (k, (seed, s)) in samples.into_iter().enumerate() {
                let sdir = dir.join(format!("{k:02}"));
                std::fs::create_dir_all(&sdir).map_err(|e| CliError::io(&sdir, e))?;
                let files = SampleFiles {
                    uncorrupted: save_image(&run, &sdir, "uncorrupted.pgm", &s.uncorrupted)?,
                    body: save_mask(&run, &sdir, "body.pgm", &s.body)?,
                    corrupted: save_image(&run, &sdir, "corrupted.pgm", &s.corrupted)?,
                    fov: save_mask(&run, &sdir, "fov.pgm", &s.fov_mask)?,
                    cropped: save_image(&run, &sdir, "cropped.pgm", &s.cropped)?,
                    cropped_fov: save_mask(&run, &sdir, "cropped_fov.pgm", &s.cropped_fov)?,
                };
                recs.push(SampleRecord {
                    id: format!("{}_{k:02}", src.id),
                    source: src.id.clone(),
                    seed,
                    tci: s.tci,
                    severity: s.severity,
                    spec: s.spec,
                    aug: s.aug,
                    touches_border: s.touches_border,
                    gt_bbox_full: s.gt_bbox_full,
                    gt_bbox_cropped: s.gt_bbox_cropped,
                    files,
                });
            }
            run.write_record(&dir, &recs)?;
            Ok(recs)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let records: Vec<SampleRecord> = per_slice.into_iter().flatten().collect();
    let mut patterns: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        let name = match r.spec.pattern {
            FovPattern::A => "a",
            FovPattern::B => "b",
            FovPattern::C => "c",
        };
        *patterns.entry(name).or_default() += 1;
    }
    let summary = json!({
        "slices": slices.records.len(),
        "samples": records.len(),
        "severity": severity_histogram(records.iter().map(|r| &r.severity)),
        "pattern": patterns,
    });
    info!("simulated {} samples from {} slices", records.len(), slices.records.len());
    run.finish(summary, records)
}

// ---------------------------------------------------------------------------
// extend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendRecord {
    pub id: String,
    /// Seed of the simulated sample, used to pair it with its truth.
    pub sample_seed: u64,
    pub severity: SeverityLevel,
    /// TCI of the body visible in the cropped slice; 0 means passthrough.
    pub detected_tci: f64,
    pub extended: bool,
    pub ratio: f64,
    pub new_spacing: f64,
    pub estimate: Option<BodyExtent>,
    /// Body ellipse used to bound completion, in unextended coordinates.
    pub prior: Option<EllipseFit>,
    pub residual: Option<f64>,
    pub low_confidence: bool,
    /// Whether the extended frame contains the ground-truth body bbox.
    pub covers_truth: bool,
    pub image: String,
    pub fov: String,
}

pub fn run_extend(input: &Path, p: &ExtendParams, out: &Path, resume: bool) -> CliResult<Manifest<ExtendRecord>> {
    if !(p.r0 >= 1.0) {
        return Err(CliError::input(format!("r0 must be at least 1, got {}", p.r0)));
    }
    let samples: Manifest<SampleRecord> = load_manifest(input, "simulate")?;
    let run = RunDir::open(out, "extend", Some(input), to_value(p), resume)?;
    let records = samples
        .records
        .par_iter()
        .map(|s| -> CliResult<ExtendRecord> {
            let dir = run.sample_dir("extended", &s.id)?;
            if let Some(r) = run.existing_record(&dir)? {
                return Ok(r);
            }
            let img = load_image(input, &s.files.cropped)?;
            let fov = load_mask(input, &s.files.cropped_fov)?;
            let e = extend_one(&img, &fov, p).map_err(|e| CliError::from(e).context(&s.id))?;
            let rec = ExtendRecord {
                id: s.id.clone(),
                sample_seed: s.seed,
                severity: s.severity,
                detected_tci: e.detected_tci,
                extended: e.estimate.is_some(),
                ratio: e.ext.ratio,
                new_spacing: e.ext.new_spacing,
                prior: e.prior().copied(),
                residual: e.estimate.as_ref().and_then(|x| x.fit.as_ref()).map(|f| f.residual),
                low_confidence: e.estimate.as_ref().is_some_and(|x| x.low_confidence),
                covers_truth: frame_covers(&e.ext, &s.gt_bbox_cropped),
                image: save_image(&run, &dir, "extended.pgm", &e.ext.extended_image)?,
                fov: save_mask(&run, &dir, "extended_fov.pgm", &e.ext.extended_fov)?,
                estimate: e.estimate,
            };
            run.write_record(&dir, &rec)?;
            Ok(rec)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let n = records.len();
    let rate = |f: &dyn Fn(&ExtendRecord) -> bool| {
        let sel: Vec<_> = records.iter().filter(|r| f(r)).collect();
        let covered = sel.iter().filter(|r| r.covers_truth).count();
        json!({ "n": sel.len(), "covered": covered, "rate": if sel.is_empty() { None } else { Some(covered as f64 / sel.len() as f64) } })
    };
    let mut by_severity = BTreeMap::new();
    for s in SeverityLevel::TRUNCATED {
        by_severity.insert(s.name(), rate(&|r: &ExtendRecord| r.severity == s));
    }
    let summary = json!({
        "samples": n,
        "extended": records.iter().filter(|r| r.extended).count(),
        "low_confidence": records.iter().filter(|r| r.low_confidence).count(),
        "coverage": rate(&|_| true),
        "coverage_by_severity": by_severity,
    });
    info!("extended {n} samples");
    run.finish(summary, records)
}

// ---------------------------------------------------------------------------
// complete
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteRecord {
    pub id: String,
    pub severity: SeverityLevel,
    /// Unextended samples are copied through unchanged.
    pub passthrough: bool,
    pub diagnostics: Option<SolveDiagnostics>,
    pub image: String,
}

fn load_extension(dir: &Path, r: &ExtendRecord) -> CliResult<ExtensionResult> {
    Ok(ExtensionResult {
        extended_image: load_image(dir, &r.image)?,
        extended_fov: load_mask(dir, &r.fov)?,
        ratio: r.ratio,
        new_spacing: r.new_spacing,
    })
}

pub fn run_complete(input: &Path, cfg: &SolverConfig, out: &Path, resume: bool) -> CliResult<Manifest<CompleteRecord>> {
    cfg.validate()?;
    let ext: Manifest<ExtendRecord> = load_manifest(input, "extend")?;
    let fill = HU_WINDOW.0;
    let params = json!({ "solver": cfg, "fill": fill });
    let run = RunDir::open(out, "complete", Some(input), params, resume)?;
    let records = ext
        .records
        .par_iter()
        .map(|r| -> CliResult<CompleteRecord> {
            let dir = run.sample_dir("completed", &r.id)?;
            if let Some(c) = run.existing_record(&dir)? {
                return Ok(c);
            }
            let e = load_extension(input, r)?;
            let (image, diagnostics) = if r.extended {
                let res = complete_one(&e, r.prior.as_ref(), fill, cfg).map_err(|err| CliError::from(err).context(&r.id))?;
                let d = res.diagnostics(unknown_count(&e, r.prior.as_ref())?);
                if !d.converged {
                    warn!("{}: solver stopped at residual {:.3e} after {} iterations", r.id, d.residual, d.iters);
                }
                (res.image, Some(d))
            } else {
                (e.extended_image, None)
            };
            let rec = CompleteRecord {
                id: r.id.clone(),
                severity: r.severity,
                passthrough: !r.extended,
                diagnostics,
                image: save_image(&run, &dir, "completed.pgm", &image)?,
            };
            run.write_record(&dir, &rec)?;
            Ok(rec)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let diags: Vec<&SolveDiagnostics> = records.iter().filter_map(|r| r.diagnostics.as_ref()).collect();
    let summary = json!({
        "samples": records.len(),
        "passthrough": records.iter().filter(|r| r.passthrough).count(),
        "solved": diags.len(),
        "converged": diags.iter().filter(|d| d.converged).count(),
        "within_tol": diags.iter().filter(|d| d.residual <= cfg.tol).count(),
        "max_residual": diags.iter().map(|d| d.residual).fold(0.0, f64::max),
        "total_iters": diags.iter().map(|d| d.iters).sum::<usize>(),
    });
    run.finish(summary, records)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { resamples: DEFAULT_BOOTSTRAP, seed: 0 }
    }
}

pub const VARIANTS: [&str; 3] = ["truth", "truncated", "completed"];

pub const SUMMARY_HEADER: [&str; 8] = ["metric", "variant", "severity", "n", "center", "sd", "ci_low", "ci_high"];
pub const SAMPLE_HEADER: [&str; 9] = ["id", "severity", "variant", "pixel_rmse", "dsc", "sat_area", "muscle_area", "sat_atten", "muscle_atten"];
pub const BLAND_ALTMAN_HEADER: [&str; 8] = ["measure", "variant", "severity", "n", "bias", "sd", "loa_low", "loa_high"];
pub const CORRELATION_HEADER: [&str; 9] = ["tissue_index", "anthro_index", "variant", "n", "rho", "ci_low", "ci_high", "z", "p_value"];

/// Scores of one sample: truth first, then truncated and completed.
#[derive(Debug, Clone)]
pub struct SampleScores {
    pub id: String,
    pub severity: SeverityLevel,
    pub scores: [VariantScore; 3],
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One bootstrap summary row per (metric, variant, severity) with data.
pub fn summary_rows(samples: &[SampleScores], cfg: &EvalConfig) -> CliResult<Vec<[String; 8]>> {
    type Extract = fn(&VariantScore) -> Option<f64>;
    // per-sample mean metrics, then RMSE-vs-truth metrics
    let means: [(&str, Extract); 2] = [("pixel_rmse", |s| Some(s.pixel_rmse)), ("dsc", |s| Some(s.dsc))];
    let errors: [(&str, Extract); 4] = [
        ("sat_area_rmse", |s| Some(s.comp.sat_area)),
        ("muscle_area_rmse", |s| Some(s.comp.muscle_area)),
        ("sat_atten_rmse", |s| s.comp.sat_atten),
        ("muscle_atten_rmse", |s| s.comp.muscle_atten),
    ];
    let strata: Vec<(&str, Vec<&SampleScores>)> = SeverityLevel::TRUNCATED
        .iter()
        .map(|lv| (lv.name(), samples.iter().filter(|s| s.severity == *lv).collect()))
        .chain(std::iter::once(("all", samples.iter().collect())))
        .collect();
    let mut rows = Vec::new();
    let mut push = |metric: &str, variant: &str, severity: &str, est: fovx_core::bcstats::Estimate| {
        rows.push([
            metric.to_string(),
            variant.to_string(),
            severity.to_string(),
            est.n.to_string(),
            est.center.to_string(),
            est.sd.to_string(),
            est.ci_low.to_string(),
            est.ci_high.to_string(),
        ]);
    };
    let mut stream = 0u64;
    let mut next_seed = || {
        stream += 1;
        derive_seed(cfg.seed, stream)
    };
    for (metric, f) in means {
        for (v, variant) in VARIANTS.iter().enumerate().skip(1) {
            for (severity, group) in &strata {
                let vals: Vec<f64> = group.iter().filter_map(|s| f(&s.scores[v])).collect();
                let seed = next_seed();
                if !vals.is_empty() {
                    push(metric, variant, severity, mean_with_ci(&vals, cfg.resamples, seed)?);
                }
            }
        }
    }
    for (metric, f) in errors {
        for (v, variant) in VARIANTS.iter().enumerate().skip(1) {
            for (severity, group) in &strata {
                let errs: Vec<f64> = group
                    .iter()
                    .filter_map(|s| Some(f(&s.scores[v])? - f(&s.scores[0])?))
                    .collect();
                let seed = next_seed();
                if !errs.is_empty() {
                    push(metric, variant, severity, rmse_with_ci(&errs, cfg.resamples, seed)?);
                }
            }
        }
    }
    Ok(rows)
}

pub fn bland_altman_rows(samples: &[SampleScores]) -> CliResult<Vec<[String; 8]>> {
    type Extract = fn(&VariantScore) -> f64;
    let measures: [(&str, Extract); 2] = [("sat_area", |s| s.comp.sat_area), ("muscle_area", |s| s.comp.muscle_area)];
    let mut rows = Vec::new();
    for (measure, f) in measures {
        for (v, variant) in VARIANTS.iter().enumerate().skip(1) {
            let levels = SeverityLevel::TRUNCATED.iter().map(|l| Some(*l)).chain(std::iter::once(None));
            for level in levels {
                let pairs: Vec<(f64, f64)> = samples
                    .iter()
                    .filter(|s| level.is_none_or(|l| s.severity == l))
                    .map(|s| (f(&s.scores[v]), f(&s.scores[0])))
                    .collect();
                if pairs.len() < 2 {
                    continue;
                }
                let ba = bland_altman(&pairs)?;
                rows.push([
                    measure.to_string(),
                    variant.to_string(),
                    level.map_or("all", |l| l.name()).to_string(),
                    pairs.len().to_string(),
                    ba.bias.to_string(),
                    ba.sd.to_string(),
                    ba.loa_low.to_string(),
                    ba.loa_high.to_string(),
                ]);
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Deserialize)]
pub struct CohortRow {
    pub id: String,
    pub height_m: f64,
    pub weight_kg: f64,
    pub sex: String,
}

pub fn read_cohort(path: &Path) -> CliResult<Vec<CohortRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::from(e).context(path.display()))?;
    rdr.deserialize().map(|r| r.map_err(|e| CliError::from(e).context(path.display()))).collect()
}

/// Spearman correlations of height-normalized tissue areas (cm²/m²) with
/// anthropometric indices; truncated and completed coefficients are each
/// tested against the truth coefficient (overlapping on the anthropometric
/// variable).
pub fn correlation_rows(samples: &[SampleScores], cohort: &[CohortRow]) -> CliResult<Vec<[String; 9]>> {
    let by_id: HashMap<&str, &SampleScores> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut scans = Vec::with_capacity(cohort.len());
    for row in cohort {
        let s = by_id
            .get(row.id.as_str())
            .ok_or_else(|| CliError::input(format!("cohort id {} has no evaluated sample", row.id)))?;
        let sex: Sex = row.sex.parse().map_err(CliError::from)?;
        let a = Anthro::new(row.height_m, row.weight_kg, sex)?;
        scans.push((a, anthro_ffm_fm(&a)?, *s));
    }
    type Tissue = fn(&VariantScore) -> f64;
    let pairs: [(&str, Tissue, &str, fn(&fovx_core::bcstats::AnthroIndices) -> f64); 2] = [
        ("muscle_index", |s| s.comp.muscle_area, "ffm_index", |i| i.ffm_index),
        ("sat_index", |s| s.comp.sat_area, "fm_index", |i| i.fm_index),
    ];
    let mut rows = Vec::new();
    for (tissue, area, anthro, index) in pairs {
        let j: Vec<f64> = scans.iter().map(|(_, i, _)| index(i)).collect();
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|v| scans.iter().map(|(a, _, s)| area(&s.scores[v]) / (a.height_m * a.height_m)).collect())
            .collect();
        for (v, variant) in VARIANTS.iter().enumerate() {
            let c = spearman(&j, &cols[v])?;
            let (z, p) = if v == 0 {
                (None, None)
            } else {
                let rep = compare_correlations(&CorrData::Overlapping { j: &j, k: &cols[v], h: &cols[0] })?;
                (Some(rep.z), Some(rep.p_value))
            };
            rows.push([
                tissue.to_string(),
                anthro.to_string(),
                variant.to_string(),
                c.n.to_string(),
                c.rho.to_string(),
                c.ci[0].to_string(),
                c.ci[1].to_string(),
                opt(z),
                opt(p),
            ]);
        }
    }
    Ok(rows)
}

fn write_csv<const N: usize>(path: &Path, header: [&str; N], rows: &[[String; N]]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::input(e.to_string()))?;
    fovx_core::io::write_atomic(path, &bytes).map_err(|e| CliError::io(path, e))
}

pub const SUMMARY_CSV: &str = "evaluation.csv";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const BLAND_ALTMAN_CSV: &str = "bland_altman.csv";
pub const CORRELATIONS_CSV: &str = "correlations.csv";

pub fn run_evaluate(
    input: &Path,
    truth: &Path,
    cohort: Option<&Path>,
    cfg: &EvalConfig,
    out: &Path,
    resume: bool,
) -> CliResult<Manifest<String>> {
    let done: Manifest<CompleteRecord> = load_manifest(input, "complete")?;
    let ext_dir = upstream(input, &done)?;
    let ext: Manifest<ExtendRecord> = load_manifest(&ext_dir, "extend")?;
    let sim: Manifest<SampleRecord> = load_manifest(truth, "simulate")?;
    let ext_by_id: HashMap<&str, &ExtendRecord> = ext.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let sim_by_id: HashMap<&str, &SampleRecord> = sim.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let cohort_rows = cohort.map(read_cohort).transpose()?;
    let mut params = json!({ "config": cfg });
    if let Some(c) = cohort {
        params["cohort"] = json!(crate::manifest::relative(c, out).unwrap_or_else(|_| c.display().to_string()));
    }
    let run = RunDir::open(out, "evaluate", Some(input), params, resume)?;

    let fill = HU_WINDOW.0;
    let samples = done
        .records
        .par_iter()
        .map(|c| -> CliResult<SampleScores> {
            let missing = |what: &str| CliError::input(format!("sample {} has no {what} record", c.id));
            let e = ext_by_id.get(c.id.as_str()).ok_or_else(|| missing("extend"))?;
            let s = sim_by_id
                .get(c.id.as_str())
                .filter(|s| s.seed == e.sample_seed)
                .ok_or_else(|| missing("matching truth"))?;
            let truncated = load_image(&ext_dir, &e.image)?;
            let completed = load_image(input, &c.image)?;
            let uncorrupted = load_image(truth, &s.files.uncorrupted)?;
            let truth_img = truth_in_extended(&uncorrupted, &s.spec, truncated.width(), e.ratio, fill)?;
            let truth_m = measure_slice(&truth_img)?;
            let scores = [
                score(&truth_img, &truth_img, &truth_m)?,
                score(&truncated, &truth_img, &truth_m)?,
                score(&completed, &truth_img, &truth_m)?,
            ];
            Ok(SampleScores { id: c.id.clone(), severity: s.severity, scores })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let per_sample: Vec<[String; 9]> = samples
        .iter()
        .flat_map(|s| {
            VARIANTS.iter().zip(&s.scores).map(|(variant, v)| {
                [
                    s.id.clone(),
                    s.severity.name().to_string(),
                    variant.to_string(),
                    v.pixel_rmse.to_string(),
                    v.dsc.to_string(),
                    v.comp.sat_area.to_string(),
                    v.comp.muscle_area.to_string(),
                    opt(v.comp.sat_atten),
                    opt(v.comp.muscle_atten),
                ]
            })
        })
        .collect();
    let mut files = vec![SUMMARY_CSV.to_string(), SAMPLES_CSV.to_string(), BLAND_ALTMAN_CSV.to_string()];
    write_csv(&run.root.join(SUMMARY_CSV), SUMMARY_HEADER, &summary_rows(&samples, cfg)?)?;
    write_csv(&run.root.join(SAMPLES_CSV), SAMPLE_HEADER, &per_sample)?;
    write_csv(&run.root.join(BLAND_ALTMAN_CSV), BLAND_ALTMAN_HEADER, &bland_altman_rows(&samples)?)?;
    if let Some(rows) = &cohort_rows {
        write_csv(&run.root.join(CORRELATIONS_CSV), CORRELATION_HEADER, &correlation_rows(&samples, rows)?)?;
        files.push(CORRELATIONS_CSV.to_string());
    }
    let summary = json!({
        "samples": samples.len(),
        "severity": severity_histogram(samples.iter().map(|s| &s.severity)),
    });
    run.finish(summary, files)
}
