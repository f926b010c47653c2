use nlmpm::excitation::{fourier_family, zero_mean_project};
use nlmpm::forward::{discrete_energy, energy_gradient, power_product, solve_forward, SolverOptions};
use nlmpm::geometry::{build_mesh, connected_components, outer_support, CellRegion};
use nlmpm::imaging::{block_tests, MeasurementSet, NoiseLevel, Rule};
use nlmpm::materials::{build_test_material, Contrast, LawShape, MaterialAssignment, MaterialLaw};
use proptest::prelude::*;

fn region(n: usize) -> impl Strategy<Value = CellRegion> {
    proptest::collection::vec(any::<bool>(), n * n).prop_map(move |m| CellRegion::from_mask(n, n, m).unwrap())
}

fn sigmoid_law() -> impl Strategy<Value = MaterialLaw> {
    (1.5f64..3.0, 0.1f64..2.0, 0.1f64..2.0)
        .prop_map(|(a, b, s0)| MaterialLaw::bounded(LawShape::Sigmoid { a, b, s0 }, a, a + b).unwrap())
}

/// 4-connected components by repeated relabelling to a fixed point.
fn brute_components(r: &CellRegion) -> usize {
    let (nx, ny) = r.dims();
    let mut label: Vec<usize> = (0..nx * ny).collect();
    loop {
        let mut changed = false;
        for j in 0..ny {
            for i in 0..nx {
                let p = j * nx + i;
                if !r.contains(p) {
                    continue;
                }
                for (di, dj) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                    let (x, y) = (i as i64 + di, j as i64 + dj);
                    if x < 0 || y < 0 || x >= nx as i64 || y >= ny as i64 {
                        continue;
                    }
                    let q = y as usize * nx + x as usize;
                    if r.contains(q) && label[q] < label[p] {
                        label[p] = label[q];
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    r.pixels().filter(|&p| label[p] == p).count()
}

fn zero_mean(n: usize, raw: &[f64]) -> Vec<f64> {
    let mesh = build_mesh(n, n, (1.0, 1.0)).unwrap();
    zero_mean_project(&mesh.boundary_weights(), raw).unwrap_or_else(|_| fourier_family(&mesh, 1).unwrap().members[0].values.clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outer_support_is_a_hull(a in region(7), b in region(7)) {
        let sa = outer_support(&a);
        prop_assert!(a.is_subset(&sa).unwrap());
        prop_assert_eq!(outer_support(&sa), sa.clone());
        let ab = a.intersection(&b).unwrap();
        prop_assert!(outer_support(&ab).is_subset(&sa).unwrap());
    }

    #[test]
    fn components_match_brute_force(a in region(6)) {
        prop_assert_eq!(connected_components(&a).count, brute_components(&a));
    }

    #[test]
    fn primitive_convex_and_flux_monotone(law in sigmoid_law(), s in 0.0f64..20.0, t in 0.0f64..20.0) {
        let (lo, hi) = if s < t { (s, t) } else { (t, s) };
        prop_assert!(law.flux(lo) <= law.flux(hi) + 1e-12);
        let mid = 0.5 * (lo + hi);
        let q = |x: f64| law.q_primitive(x).unwrap();
        prop_assert!(q(mid) <= 0.5 * (q(lo) + q(hi)) + 1e-10 * (1.0 + q(hi)));
    }

    #[test]
    fn gradient_matches_finite_differences(law in sigmoid_law(), u in proptest::collection::vec(-2.0f64..2.0, 16)) {
        let mesh = build_mesh(3, 3, (1.0, 1.0)).unwrap();
        let m = MaterialAssignment::with_anomaly(vec![1.0; 9], CellRegion::full(3, 3), law, Contrast::High).unwrap();
        let g = energy_gradient(&mesh, &m, &u).unwrap();
        let v = mesh.vertex_index(1, 1);
        let h = 1e-6;
        let mut up = u.clone();
        up[v] += h;
        let mut dn = u.clone();
        dn[v] -= h;
        let fd = (discrete_energy(&mesh, &m, &up).unwrap() - discrete_energy(&mesh, &m, &dn).unwrap()) / (2.0 * h);
        prop_assert!((fd - g[v]).abs() <= 1e-5 * (1.0 + g[v].abs()));
    }

    #[test]
    fn linear_power_scales_quadratically(raw in proptest::collection::vec(-1.0f64..1.0, 20), alpha in 0.1f64..10.0) {
        let mesh = build_mesh(5, 5, (1.0, 1.0)).unwrap();
        let m = MaterialAssignment::uniform(5, 5, 1.3).unwrap();
        let f = zero_mean(5, &raw);
        let fa: Vec<f64> = f.iter().map(|v| alpha * v).collect();
        let opts = SolverOptions::default();
        let (p, pa) = (power_product(&mesh, &m, &f, &opts).unwrap(), power_product(&mesh, &m, &fa, &opts).unwrap());
        prop_assert!((pa - alpha * alpha * p).abs() <= 1e-10 * pa.abs().max(1e-300));
    }

    #[test]
    fn monotone_forward_direction(law in sigmoid_law(), raw in proptest::collection::vec(-1.0f64..1.0, 24), pick in proptest::collection::vec(any::<bool>(), 16)) {
        let n = 6;
        let mesh = build_mesh(n, n, (1.0, 1.0)).unwrap();
        let a = CellRegion::rect(n, n, 1, 1, 4, 4).unwrap();
        let px: Vec<usize> = a.pixels().collect();
        let t = CellRegion::from_pixels(n, n, px.iter().zip(&pick).filter(|(_, k)| **k).map(|(p, _)| *p)).unwrap();
        let f = zero_mean(n, &raw);
        let opts = SolverOptions::default();
        let truth = MaterialAssignment::with_anomaly(vec![1.0; n * n], a, law.clone(), Contrast::High).unwrap();
        let test = build_test_material(&vec![1.0; n * n], &t, &law, Contrast::High).unwrap();
        let (pa, pt) = (power_product(&mesh, &truth, &f, &opts).unwrap(), power_product(&mesh, &test, &f, &opts).unwrap());
        prop_assert!(pa - pt >= -1e-8 * pa.abs());
    }

    #[test]
    fn newton_solution_is_stationary(law in sigmoid_law(), raw in proptest::collection::vec(-3.0f64..3.0, 16)) {
        let mesh = build_mesh(4, 4, (1.0, 1.0)).unwrap();
        let m = MaterialAssignment::with_anomaly(vec![1.0; 16], CellRegion::rect(4, 4, 1, 1, 2, 2).unwrap(), law, Contrast::High).unwrap();
        let f = zero_mean(4, &raw);
        let s = solve_forward(&mesh, &m, &f, &SolverOptions::default()).unwrap();
        let g = energy_gradient(&mesh, &m, &s.u).unwrap();
        let interior: f64 = (0..mesh.num_vertices()).filter(|&v| !mesh.is_boundary_vertex(v)).map(|v| g[v] * g[v]).sum();
        prop_assert!(interior.sqrt() <= 1e-8 * (1.0 + s.energy));
    }
}

fn blob_data() -> MeasurementSet {
    let n = 10;
    let mesh = build_mesh(n, n, (1.0, 1.0)).unwrap();
    let a = CellRegion::rect(n, n, 4, 4, 2, 2).unwrap();
    let law = MaterialLaw::bounded(LawShape::Sigmoid { a: 2.0, b: 1.0, s0: 1.0 }, 2.0, 3.0).unwrap();
    let truth = MaterialAssignment::with_anomaly(vec![1.0; n * n], a, law, Contrast::High).unwrap();
    let fam = fourier_family(&mesh, 4).unwrap();
    MeasurementSet::simulate(&mesh, &truth, &fam, block_tests(n, n, 2).unwrap(), &SolverOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reconstructions_nest(seed in any::<u64>(), e1 in 0.0f64..0.3, e2 in 0.0f64..0.05) {
        let data = blob_data();
        let eta = NoiseLevel::new(e1, e2).unwrap();
        let res = data.with_noise(data.noise_model(eta, seed).unwrap()).reconstruct_all(eta, eta).unwrap();
        prop_assert!(res.is_nested().unwrap());
    }

    #[test]
    fn deterministic_mask_grows_with_noise(e1 in 0.0f64..0.3, e2 in 0.0f64..0.05, s in 1.0f64..3.0) {
        let data = blob_data();
        let small = NoiseLevel::new(e1 / s, e2 / s).unwrap();
        let large = NoiseLevel::new(e1, e2).unwrap();
        let m_small = data.reconstruct(Rule::Deterministic { eta: small, eta_star: small }).unwrap().mask;
        let m_large = data.reconstruct(Rule::Deterministic { eta: large, eta_star: large }).unwrap().mask;
        prop_assert!(m_small.is_subset(&m_large).unwrap());
    }

    #[test]
    fn more_excitations_never_grow_the_mask(keep in proptest::collection::vec(any::<bool>(), 8)) {
        let data = blob_data();
        let subset: Vec<usize> = (0..8).filter(|&i| keep[i]).collect();
        prop_assume!(!subset.is_empty());
        let full = data.reconstruct(Rule::Ideal).unwrap().mask;
        let part = data.select_excitations(&subset).reconstruct(Rule::Ideal).unwrap().mask;
        prop_assert!(full.is_subset(&part).unwrap());
    }
}
