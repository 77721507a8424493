use fovx_core::fovsim::rng_from_seed;
use fovx_core::inpaint::{harmonic_inpaint, SolverConfig, SolverMethod};
use fovx_core::raster::{components, Connectivity, ImageGrid, MaskGrid};
use rand::Rng;

/// Random image and a known mask with a few unknown blobs, always leaving
/// known pixels present.
fn instance(seed: u64, max_dim: usize) -> (ImageGrid, MaskGrid) {
    let mut rng = rng_from_seed(seed);
    let w = rng.random_range(4..=max_dim);
    let h = rng.random_range(4..=max_dim);
    let img = ImageGrid::from_fn(w, h, 1.0, |_, _| rng.random_range(-150.0..150.0)).unwrap();
    let blobs: Vec<(f64, f64, f64)> = (0..rng.random_range(1..4))
        .map(|_| {
            let r = rng.random_range(1.0..(w.min(h) as f64 / 2.0));
            (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64), r)
        })
        .collect();
    let mut known = MaskGrid::from_fn(w, h, |x, y| {
        !blobs.iter().any(|&(cx, cy, r)| (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) <= r * r)
    })
    .unwrap();
    if known.is_empty() {
        known.set(0, 0, true);
    }
    (img, known)
}

fn neighbors(w: usize, h: usize, i: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    let mut v = Vec::with_capacity(4);
    if x > 0 {
        v.push(i - 1);
    }
    if x + 1 < w {
        v.push(i + 1);
    }
    if y > 0 {
        v.push(i - w);
    }
    if y + 1 < h {
        v.push(i + w);
    }
    v.into_iter()
}

/// Range of the Dirichlet values touching each unknown component (4-adjacent).
fn boundary_ranges(img: &ImageGrid, known: &MaskGrid) -> Vec<(Vec<usize>, f64, f64)> {
    let (w, h) = known.dims();
    components(&known.not(), Connectivity::Four)
        .into_iter()
        .map(|comp| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &comp {
                for j in neighbors(w, h, i) {
                    if known.bits()[j] {
                        lo = lo.min(img.values()[j]);
                        hi = hi.max(img.values()[j]);
                    }
                }
            }
            (comp, lo, hi)
        })
        .collect()
}

/// Laplace residual b − Ax on the unknown pixels, and ‖b‖, recomputed from
/// the grid: b collects known neighbors, A is degree minus unknown neighbors.
fn laplace_residual(x: &ImageGrid, known: &MaskGrid) -> (Vec<f64>, f64) {
    let (w, h) = known.dims();
    let (v, k) = (x.values(), known.bits());
    let mut r = Vec::new();
    let mut b2 = 0.0;
    for i in (0..w * h).filter(|&i| !k[i]) {
        let (mut b, mut ax) = (0.0, 0.0);
        for j in neighbors(w, h, i) {
            ax += v[i];
            if k[j] {
                b += v[j];
            } else {
                ax -= v[j];
            }
        }
        b2 += b * b;
        r.push(b - ax);
    }
    (r, b2.sqrt())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn methods_agree_and_respect_the_maximum_principle() {
    let tol = 1e-6;
    for seed in 0..40 {
        let (img, known) = instance(seed, 64);
        let cg = harmonic_inpaint(&img, &known, &SolverConfig { tol, ..Default::default() }).unwrap();
        let gs = harmonic_inpaint(
            &img,
            &known,
            &SolverConfig { tol, max_iters: Some(2_000_000), method: SolverMethod::GaussSeidel },
        )
        .unwrap();
        assert!(cg.converged && gs.converged, "seed {seed}");
        let (rc, bn) = laplace_residual(&cg.image, &known);
        let (rg, _) = laplace_residual(&gs.image, &known);
        // reported residuals are honest
        assert!(norm(&rc) / bn <= tol * (1.0 + 1e-6) && (norm(&rc) / bn - cg.residual).abs() < 1e-9);
        assert!(norm(&rg) / bn <= tol * (1.0 + 1e-6) && (norm(&rg) / bn - gs.residual).abs() < 1e-9);
        // the two solutions differ by less than 10·tol in the residual norm
        let diff: Vec<f64> = rc.iter().zip(&rg).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) / bn <= 10.0 * tol, "seed {seed}");
        for (comp, lo, hi) in boundary_ranges(&img, &known) {
            let slack = tol * (hi - lo).max(1.0);
            for &i in &comp {
                for v in [cg.image.values()[i], gs.image.values()[i]] {
                    assert!(v >= lo - slack && v <= hi + slack, "seed {seed}: {v} outside [{lo}, {hi}]");
                }
            }
        }
    }
}

#[test]
fn tight_solves_agree_per_pixel() {
    let tight = |method| SolverConfig { tol: 1e-12, max_iters: Some(5_000_000), method };
    for seed in 300..310 {
        let (img, known) = instance(seed, 32);
        let cg = harmonic_inpaint(&img, &known, &tight(SolverMethod::ConjugateGradient)).unwrap();
        let gs = harmonic_inpaint(&img, &known, &tight(SolverMethod::GaussSeidel)).unwrap();
        for (a, b) in cg.image.values().iter().zip(gs.image.values()) {
            assert!((a - b).abs() <= 1e-5, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn known_pixels_are_bit_identical() {
    for seed in 100..130 {
        let (img, known) = instance(seed, 48);
        let r = harmonic_inpaint(&img, &known, &SolverConfig::default()).unwrap();
        for i in 0..img.values().len() {
            if known.bits()[i] {
                assert_eq!(r.image.values()[i].to_bits(), img.values()[i].to_bits());
            }
        }
    }
}

#[test]
fn resolving_is_idempotent() {
    let cfg = SolverConfig { tol: 1e-10, ..Default::default() };
    for seed in 200..220 {
        let (img, known) = instance(seed, 48);
        let once = harmonic_inpaint(&img, &known, &cfg).unwrap();
        let twice = harmonic_inpaint(&once.image, &known, &cfg).unwrap();
        let scale = 300.0;
        for (a, b) in once.image.values().iter().zip(twice.image.values()) {
            assert!((a - b).abs() <= 1e-6 * scale, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn iteration_cap_reports_best_iterate() {
    let (img, known) = instance(7, 64);
    let r = harmonic_inpaint(&img, &known, &SolverConfig { tol: 1e-12, max_iters: Some(3), method: SolverMethod::GaussSeidel }).unwrap();
    assert!(!r.converged);
    assert_eq!(r.iters, 3);
    assert!(r.residual > 1e-12 && r.residual.is_finite());
}
