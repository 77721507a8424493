use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fovx_cli::manifest::Manifest;
use fovx_cli::pipeline::ExtendParams;
use fovx_cli::stages::*;
use fovx_cli::Kind;
use fovx_core::fovsim::{FovPattern, SimConfig};
use fovx_core::inpaint::SolverConfig;
use fovx_core::io::{read_mask, write_mask};
use fovx_core::metrics::{tci, SeverityLevel};
use fovx_core::phantom::PhantomConfig;
use fovx_core::raster::MaskGrid;

fn small_sim() -> SimConfig {
    SimConfig { max_per_severity: 2, seed: 11, ..Default::default() }
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|rec| header.iter().cloned().zip(rec.unwrap().iter().map(String::from)).collect())
        .collect()
}

#[test]
fn zero_phantoms_give_an_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let m = run_phantom(0, 1, &PhantomConfig::default(), &tmp.path().join("p"), false).unwrap();
    assert!(m.records.is_empty());
    assert_eq!(m.schema_version, fovx_cli::manifest::SCHEMA_VERSION);
}

#[test]
fn phantoms_are_deterministic_and_untruncated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = PhantomConfig::default();
    let a = run_phantom(4, 9, &cfg, &tmp.path().join("a"), false).unwrap();
    run_phantom(4, 9, &cfg, &tmp.path().join("b"), false).unwrap();
    assert_eq!(tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    for r in &a.records {
        let body = read_mask(&tmp.path().join("a").join(&r.body)).unwrap();
        let full = MaskGrid::filled(body.width(), body.height(), true).unwrap();
        assert_eq!(tci(&body, &full).unwrap(), 0.0);
    }
}

#[test]
fn simulate_honours_pattern_probabilities_and_caps() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    run_phantom(3, 2, &PhantomConfig::default(), &ph, false).unwrap();
    let cfg = SimConfig { p_a: 1.0, p_b: 0.0, p_c: 0.0, ..small_sim() };
    let m = run_simulate(&ph, &cfg, &tmp.path().join("sim"), false).unwrap();
    assert!(!m.records.is_empty());
    assert!(m.records.iter().all(|r| r.spec.pattern == FovPattern::A));
    let mut per: BTreeMap<(String, SeverityLevel), usize> = BTreeMap::new();
    for r in &m.records {
        assert!(r.tci > 0.0);
        *per.entry((r.source.clone(), r.severity)).or_default() += 1;
    }
    assert!(per.values().all(|&n| n <= 2));
}

#[test]
fn simulate_rejects_truncated_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    let m = run_phantom(2, 2, &PhantomConfig::default(), &ph, false).unwrap();
    let full = MaskGrid::filled(256, 256, true).unwrap();
    write_mask(&ph.join(&m.records[1].body), &full).unwrap();
    let err = run_simulate(&ph, &small_sim(), &tmp.path().join("sim"), false).unwrap_err();
    assert_eq!(err.kind, Kind::Input);
    assert!(err.to_string().contains("truncated"), "{err}");
}

#[test]
fn occupied_output_is_refused_and_resume_completes_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    let cfg = PhantomConfig::default();
    let m = run_phantom(3, 5, &cfg, &ph, false).unwrap();
    let before = tree(&ph);
    assert_eq!(run_phantom(3, 5, &cfg, &ph, false).unwrap_err().kind, Kind::Input);
    // a different seed must not be mixed into the same directory
    assert!(run_phantom(3, 6, &cfg, &ph, true).is_err());
    // interrupt: drop the manifest and one finished sample
    fs::remove_file(ph.join("manifest.json")).unwrap();
    fs::remove_dir_all(ph.join("phantoms").join(&m.records[2].id)).unwrap();
    run_phantom(3, 5, &cfg, &ph, true).unwrap();
    let after = tree(&ph);
    let keys = |t: &BTreeMap<String, Vec<u8>>| t.keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&after), keys(&before));
    for (k, v) in &before {
        assert!(after[k] == *v, "{k} differs");
    }
}

#[test]
fn full_pipeline_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (ph, sim, ext, comp, eval) = (root.join("ph"), root.join("sim"), root.join("ext"), root.join("comp"), root.join("eval"));
    run_phantom(4, 42, &PhantomConfig::default(), &ph, false).unwrap();
    let s = run_simulate(&ph, &small_sim(), &sim, false).unwrap();
    assert!(s.records.len() >= 24);
    let e = run_extend(&sim, &ExtendParams::default(), &ext, false).unwrap();
    assert_eq!(e.summary["samples"], s.records.len());
    assert!(e.records.iter().all(|r| r.ratio >= 1.0));
    assert!(e.records.iter().filter(|r| r.extended).all(|r| r.ratio >= ExtendParams::default().r0));
    let solver = SolverConfig::default();
    let c = run_complete(&ext, &solver, &comp, false).unwrap();
    for r in &c.records {
        let d = r.diagnostics.as_ref().unwrap();
        assert!(d.converged && d.residual <= solver.tol, "{}: {d:?}", r.id);
    }
    // a cohort over the first 12 samples
    let cohort = root.join("cohort.csv");
    let mut text = String::from("id,height_m,weight_kg,sex\n");
    for (i, r) in s.records.iter().take(12).enumerate() {
        let sex = if i % 2 == 0 { "male" } else { "female" };
        text += &format!("{},{},{},{sex}\n", r.id, 1.55 + 0.02 * i as f64, 55.0 + 3.0 * ((i * 7) % 11) as f64);
    }
    fs::write(&cohort, text).unwrap();
    let cfg = EvalConfig { resamples: 200, seed: 1 };
    let m: Manifest<String> = run_evaluate(&comp, &sim, Some(&cohort), &cfg, &eval, false).unwrap();
    assert_eq!(m.records, [SUMMARY_CSV, SAMPLES_CSV, BLAND_ALTMAN_CSV, CORRELATIONS_CSV]);

    let header = |f: &str| fs::read_to_string(eval.join(f)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header(SUMMARY_CSV), "metric,variant,severity,n,center,sd,ci_low,ci_high");
    assert_eq!(header(SAMPLES_CSV), "id,severity,variant,pixel_rmse,dsc,sat_area,muscle_area,sat_atten,muscle_atten");
    assert_eq!(header(BLAND_ALTMAN_CSV), "measure,variant,severity,n,bias,sd,loa_low,loa_high");
    assert_eq!(header(CORRELATIONS_CSV), "tissue_index,anthro_index,variant,n,rho,ci_low,ci_high,z,p_value");

    let rows = csv_rows(&eval.join(SUMMARY_CSV));
    let get = |metric: &str, variant: &str, severity: &str| -> f64 {
        rows.iter()
            .find(|r| r["metric"] == metric && r["variant"] == variant && r["severity"] == severity)
            .unwrap_or_else(|| panic!("missing {metric}/{variant}/{severity}"))["center"]
            .parse()
            .unwrap()
    };
    let levels = ["trace", "mild", "moderate", "severe"];
    for w in levels.windows(2) {
        assert!(get("pixel_rmse", "truncated", w[0]) <= get("pixel_rmse", "truncated", w[1]));
    }
    for l in levels {
        assert!(get("pixel_rmse", "completed", l) < get("pixel_rmse", "truncated", l), "{l}");
        assert!(get("sat_area_rmse", "completed", l) < get("sat_area_rmse", "truncated", l), "{l}");
    }

    // truth scored against itself is perfect
    for r in csv_rows(&eval.join(SAMPLES_CSV)).iter().filter(|r| r["variant"] == "truth") {
        assert_eq!(r["pixel_rmse"], "0");
        assert_eq!(r["dsc"], "1");
    }

    let ba = csv_rows(&eval.join(BLAND_ALTMAN_CSV));
    let bias = |variant: &str| -> f64 {
        ba.iter().find(|r| r["measure"] == "sat_area" && r["variant"] == variant && r["severity"] == "all").unwrap()["bias"]
            .parse()
            .unwrap()
    };
    assert!(bias("truncated") < 0.0);
    assert!(bias("completed").abs() < bias("truncated").abs());

    let corr = csv_rows(&eval.join(CORRELATIONS_CSV));
    assert_eq!(corr.len(), 6);
    for r in corr.iter().filter(|r| r["variant"] != "truth") {
        let p: f64 = r["p_value"].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    // evaluate refuses truth from a different simulation run
    let other = root.join("sim2");
    run_simulate(&ph, &SimConfig { seed: 99, ..small_sim() }, &other, false).unwrap();
    let err = run_evaluate(&comp, &other, None, &cfg, &root.join("eval2"), false).unwrap_err();
    assert_eq!(err.kind, Kind::Input);
    assert!(err.to_string().contains("matching truth"), "{err}");
}
