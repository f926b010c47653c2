use std::path::Path;

use nlmpm::excitation::zero_mean_project;
use nlmpm::forward::{power_product, solve_forward, SolverOptions};
use nlmpm::geometry::{build_mesh, outer_support, CellRegion, StructuredTriMesh};
use nlmpm::imaging::{mis_estimation_check, NoiseLevel};
use nlmpm::materials::{build_limit_material, build_test_material, Contrast, LawClass, LawShape, MaterialAssignment, MaterialLaw};
use nlmpm::oracle::{dense_minimize, fd_gradient_suite, pointwise_monotonicity_suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::commands::measure;
use crate::config::{ExperimentConfig, Setup};
use crate::output::write_results;
use crate::Failure;

#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub total: usize,
    pub passed: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        Self { suite: suite.into(), total: 0, passed: 0, failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else {
            self.failures.push(what());
        }
    }
}

#[derive(Serialize)]
struct VerifyReport {
    mutation: String,
    all_passed: bool,
    suites: Vec<SuiteReport>,
}

fn random_data(r: &mut ChaCha8Rng, mesh: &StructuredTriMesh) -> Vec<f64> {
    let w = mesh.boundary_weights();
    let raw: Vec<f64> = (0..w.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    zero_mean_project(&w, &raw).expect("random data is not constant")
}

fn random_rect(r: &mut ChaCha8Rng, n: usize, off_rim: bool) -> CellRegion {
    let lo = usize::from(off_rim);
    let span = n - 2 * lo;
    let (w, h) = (r.random_range(1..=span.min(4)), r.random_range(1..=span.min(4)));
    let (i, j) = (r.random_range(lo..=lo + span - w), r.random_range(lo..=lo + span - h));
    CellRegion::rect(n, n, i, j, w, h).expect("fits by construction")
}

fn random_law(r: &mut ChaCha8Rng, contrast: Contrast) -> MaterialLaw {
    match contrast {
        Contrast::High => {
            let (a, b, s0) = (r.random_range(1.5..3.0), r.random_range(0.1..2.0), r.random_range(0.1..2.0));
            MaterialLaw::bounded(LawShape::Sigmoid { a, b, s0 }, a, a + b).expect("valid")
        }
        Contrast::Low => {
            let (b, s0) = (r.random_range(0.2..0.6), r.random_range(0.02..0.5));
            MaterialLaw::vanishing(LawShape::Sigmoid { a: 0.0, b, s0 }, 0.01, b, 3.0, 1.0).expect("valid")
        }
    }
}

fn contrast_of(trial: usize) -> Contrast {
    if trial % 2 == 0 {
        Contrast::High
    } else {
        Contrast::Low
    }
}

fn battery(cfg: &ExperimentConfig, s: &Setup) -> Result<Vec<SuiteReport>, Failure> {
    let n = cfg.verify.trials.max(1);
    let seed = cfg.verify.seed;
    let opts = SolverOptions::default();
    let mut suites = Vec::new();

    let mut fd = SuiteReport::new("gradient vs finite differences");
    for r in fd_gradient_suite(n, seed)? {
        fd.check(r.pass, || format!("{}: {:.2e}", r.quantity, r.rel_err));
    }
    suites.push(fd);

    let mut pm = SuiteReport::new("pointwise monotonicity");
    for r in pointwise_monotonicity_suite(n, seed.wrapping_add(1))? {
        pm.check(r.pass, || format!("{}: {} vs {}", r.quantity, r.main, r.oracle));
    }
    suites.push(pm);

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut dense = SuiteReport::new("Newton vs coordinate descent");
    let mut mp = SuiteReport::new("monotone forward direction");
    let mut chain = SuiteReport::new("insulator ≤ anomaly ≤ conductor");
    for trial in 0..n {
        let contrast = contrast_of(trial);
        let law = random_law(&mut rng, contrast);

        let k = rng.random_range(3..=5);
        let mesh = build_mesh(k, k, (1.0, 1.0))?;
        let m = MaterialAssignment::with_anomaly(vec![1.0; k * k], random_rect(&mut rng, k, false), law.clone(), contrast)?;
        let f = random_data(&mut rng, &mesh);
        let (e_newton, e_dense) = (solve_forward(&mesh, &m, &f, &opts)?.energy, dense_minimize(&mesh, &m, &f)?.energy);
        dense.check((e_newton - e_dense).abs() <= 1e-6, || format!("trial {trial}: {e_newton} vs {e_dense}"));

        let g = 6;
        let mesh = build_mesh(g, g, (1.0, 1.0))?;
        let bg = vec![1.0; g * g];
        let a = random_rect(&mut rng, g, true);
        let px: Vec<usize> = a.pixels().collect();
        let t = CellRegion::from_pixels(g, g, px.iter().copied().filter(|_| rng.random_bool(0.5)))?;
        let f = random_data(&mut rng, &mesh);
        let truth = MaterialAssignment::with_anomaly(bg.clone(), a.clone(), law.clone(), contrast)?;
        let pa = power_product(&mesh, &truth, &f, &opts)?;
        let pt = power_product(&mesh, &build_test_material(&bg, &t, &law, contrast)?, &f, &opts)?;
        let margin = if contrast == Contrast::High { pa - pt } else { pt - pa };
        mp.check(margin >= -1e-8 * pa.abs().max(pt.abs()), || format!("trial {trial}: margin {margin:e}"));

        let p0 = power_product(&mesh, &build_limit_material(&bg, &a, LawClass::Pei)?, &f, &opts)?;
        let pinf = power_product(&mesh, &build_limit_material(&bg, &a, LawClass::Pec)?, &f, &opts)?;
        let tol = 1e-8 * pinf.abs();
        chain.check(p0 <= pa + tol && pa <= pinf + tol, || format!("trial {trial}: {p0} {pa} {pinf}"));
    }
    suites.extend([dense, mp, chain]);

    let mut hull = SuiteReport::new("outer support");
    for trial in 0..n {
        let (nx, ny) = (rng.random_range(3..=8), rng.random_range(3..=8));
        let a = CellRegion::from_mask(nx, ny, (0..nx * ny).map(|_| rng.random_bool(0.5)).collect())?;
        let sa = outer_support(&a);
        hull.check(a.is_subset(&sa)? && outer_support(&sa) == sa, || format!("trial {trial}"));
    }
    suites.push(hull);

    // Noise rules on the configured phantom.
    let mut base_cfg = cfg.clone();
    let (eta1, eta2) = cfg.noise.as_ref().map(|n| (n.eta1, n.eta2)).unwrap_or((0.05, 0.01));
    let range = cfg.noise.as_ref().and_then(|n| n.range);
    base_cfg.noise = None;
    let (mut exact, _, _) = measure(&base_cfg, s)?;
    if let Some(l) = range {
        exact = exact.with_range(l)?;
    }
    let eta = NoiseLevel::new(eta1, eta2)?;
    // The mutation feeds the rules regularization parameters of the wrong sign.
    let eta_star = match cfg.verify.mutation.as_str() {
        "sign_flip" => NoiseLevel { eta1: -eta.eta1, eta2: -eta.eta2 },
        _ => eta,
    };
    let mut nest = SuiteReport::new("A_dag ⊆ A_reg ⊆ A_det");
    let mut mis = SuiteReport::new("mis-estimated noise");
    for k in 0..n {
        let noisy = exact.with_noise(exact.noise_model(eta, seed.wrapping_add(k as u64))?);
        let res = noisy.reconstruct_all(eta, eta_star)?;
        nest.check(res.is_nested()?, || format!("seed offset {k}"));
        for factor in [2.0, 0.5] {
            let rep = mis_estimation_check(&noisy, eta, eta_star.scaled(factor))?;
            mis.check(rep.holds(), || format!("seed offset {k}, η*×{factor}: {}", rep.violations.join("; ")));
        }
    }
    suites.extend([nest, mis]);
    Ok(suites)
}

pub fn run(cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<(), Failure> {
    let suites = battery(cfg, s)?;
    let all_passed = suites.iter().all(|r| r.failures.is_empty());
    for r in &suites {
        println!("{:<34} {}/{}", r.suite, r.passed, r.total);
    }
    let report = VerifyReport { mutation: cfg.verify.mutation.clone(), all_passed, suites };
    write_results(&out.join("verify.json"), "verify", cfg, &report)?;
    if all_passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.suites.iter().filter(|r| !r.failures.is_empty()).map(|r| r.suite.as_str()).collect();
        Err(Failure::Verification(failed.join(", ")))
    }
}
