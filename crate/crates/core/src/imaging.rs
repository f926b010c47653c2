//! Monotonicity tests on boundary power products and the reconstructions built from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::ExcitationFamily;
use crate::forward::{power_product, LinearSolver, SolverOptions};
use crate::geometry::{outer_support, CellRegion, StructuredTriMesh};
use crate::materials::{build_test_material, Contrast, MaterialAssignment, MaterialLaw};

/// Proportional (`eta1`) and range (`eta2`) noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub eta1: f64,
    pub eta2: f64,
}

impl NoiseLevel {
    pub const ZERO: NoiseLevel = NoiseLevel { eta1: 0.0, eta2: 0.0 };

    pub fn new(eta1: f64, eta2: f64) -> Result<Self> {
        let level = Self { eta1, eta2 };
        level.validate()?;
        Ok(level)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta1) || !(self.eta2 >= 0.0) || !self.eta2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise levels need 0 ≤ η1 < 1 and η2 ≥ 0, got ({}, {})",
                self.eta1, self.eta2
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { eta1: self.eta1 * s, eta2: self.eta2 * s }
    }

    /// Componentwise `self ≤ other`.
    pub fn le(&self, other: &NoiseLevel) -> bool {
        self.eta1 <= other.eta1 && self.eta2 <= other.eta2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub level: NoiseLevel,
    /// Instrument range `L`.
    pub range: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(level: NoiseLevel, range: f64, seed: u64) -> Result<Self> {
        level.validate()?;
        if !(range > 0.0) || !range.is_finite() {
            return Err(Error::InvalidParameter(format!("instrument range must be positive, got {range}")));
        }
        Ok(Self { level, range, seed })
    }

    /// `(ξ1, ξ2)` uniform on `[−1, 1]`, fixed by `(seed, index)`.
    pub fn draws(&self, index: usize) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
    }

    pub fn apply(&self, p: f64, index: usize) -> f64 {
        let (xi1, xi2) = self.draws(index);
        apply_noise_with(p, self.level, self.range, xi1, xi2)
    }
}

/// `P(1 + η1 ξ1) + η2 ξ2 L`.
pub fn apply_noise_with(p: f64, level: NoiseLevel, range: f64, xi1: f64, xi2: f64) -> f64 {
    p * (1.0 + level.eta1 * xi1) + level.eta2 * xi2 * range
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    Ideal,
    Regularized { eta_star: NoiseLevel },
    Deterministic { eta: NoiseLevel, eta_star: NoiseLevel },
    UnregularizedNoisy,
}

/// Exact and noisy products of the unknown material together with the
/// products of every test material, per excitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub contrast: Contrast,
    pub labels: Vec<String>,
    /// `P_A(f)`.
    pub exact: Vec<f64>,
    /// `P^η_A(f)`.
    pub noisy: Option<Vec<f64>>,
    pub noise: Option<NoiseModel>,
    /// `P_∅(f)`.
    pub empty: Vec<f64>,
    /// Instrument range used by the noise model and the regularized rules.
    pub range: f64,
    pub tests: Vec<CellRegion>,
    /// `P_T(f)` indexed `[test][excitation]`.
    pub test_products: Vec<Vec<f64>>,
}

/// All `k×k` blocks that stay off the rim, in row-major order of their corner.
pub fn block_tests(nx: usize, ny: usize, k: usize) -> Result<Vec<CellRegion>> {
    if k == 0 || k + 2 > nx || k + 2 > ny {
        return Err(Error::InvalidParameter(format!("block size {k} does not fit inside a {nx}×{ny} grid")));
    }
    let mut out = Vec::new();
    for j in 1..=ny - 1 - k {
        for i in 1..=nx - 1 - k {
            out.push(CellRegion::rect(nx, ny, i, j, k, k)?);
        }
    }
    Ok(out)
}

/// Products of the linear test materials built from `law`'s declared bounds.
pub fn test_products(
    mesh: &StructuredTriMesh,
    background: &[f64],
    law: &MaterialLaw,
    contrast: Contrast,
    tests: &[CellRegion],
    family: &ExcitationFamily,
) -> Result<Vec<Vec<f64>>> {
    tests
        .par_iter()
        .map(|t| {
            let material = build_test_material(background, t, law, contrast)?;
            let solver = LinearSolver::new(mesh, &material)?;
            family.values().map(|f| solver.power(f)).collect()
        })
        .collect()
}

impl MeasurementSet {
    /// Simulates exact measurements of `truth` and the test products for `tests`.
    pub fn simulate(
        mesh: &StructuredTriMesh,
        truth: &MaterialAssignment,
        family: &ExcitationFamily,
        tests: Vec<CellRegion>,
        opts: &SolverOptions,
    ) -> Result<Self> {
        if family.is_empty() {
            return Err(Error::InvalidParameter("empty excitation family".into()));
        }
        let law = truth.law().ok_or_else(|| Error::InvalidParameter("truth carries no anomaly law".into()))?;
        let contrast = truth
            .contrast()
            .ok_or_else(|| Error::InvalidParameter("truth carries no contrast case".into()))?;
        let members: Vec<&[f64]> = family.values().collect();
        let exact = members
            .par_iter()
            .map(|f| power_product(mesh, truth, f, opts))
            .collect::<Result<Vec<f64>>>()?;
        let (nx, ny) = truth.dims();
        let bg = MaterialAssignment::background_only(nx, ny, truth.background().to_vec())?;
        let bg_solver = LinearSolver::new(mesh, &bg)?;
        let empty = members.iter().map(|f| bg_solver.power(f)).collect::<Result<Vec<f64>>>()?;
        let test_products = test_products(mesh, truth.background(), law, contrast, &tests, family)?;
        let range = 1.2 * empty.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            contrast,
            labels: family.members.iter().map(|m| m.label.clone()).collect(),
            exact,
            noisy: None,
            noise: None,
            empty,
            range,
            tests,
            test_products,
        })
    }

    pub fn num_excitations(&self) -> usize {
        self.exact.len()
    }

    pub fn with_range(mut self, range: f64) -> Result<Self> {
        if !(range > 0.0) || !range.is_finite() {
            return Err(Error::InvalidParameter(format!("instrument range must be positive, got {range}")));
        }
        self.range = range;
        Ok(self)
    }

    /// Noise model at `level` using this set's instrument range.
    pub fn noise_model(&self, level: NoiseLevel, seed: u64) -> Result<NoiseModel> {
        NoiseModel::new(level, self.range, seed)
    }

    /// Copy carrying noisy measurements drawn from `model`.
    pub fn with_noise(&self, model: NoiseModel) -> Self {
        let noisy = self.exact.iter().enumerate().map(|(i, &p)| model.apply(p, i)).collect();
        Self { noisy: Some(noisy), noise: Some(model), range: model.range, ..self.clone() }
    }

    /// Restriction to a subset of excitations (by index, in the given order).
    pub fn select_excitations(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        Self {
            contrast: self.contrast,
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            exact: pick(&self.exact),
            noisy: self.noisy.as_deref().map(pick),
            noise: self.noise,
            empty: pick(&self.empty),
            range: self.range,
            tests: self.tests.clone(),
            test_products: self.test_products.iter().map(|row| pick(row)).collect(),
        }
    }

    fn noisy_or_err(&self) -> Result<&[f64]> {
        self.noisy
            .as_deref()
            .ok_or_else(|| Error::MissingMeasurements("rule needs noisy measurements".into()))
    }

    /// Worst case over excitations of the rule's left-hand side for test `t`;
    /// the test passes iff the margin is nonnegative.
    pub fn margin(&self, t: usize, rule: &Rule) -> Result<f64> {
        let pt = self
            .test_products
            .get(t)
            .ok_or_else(|| Error::MissingMeasurements(format!("no products for test {t}")))?;
        if pt.len() != self.exact.len() {
            return Err(Error::MissingMeasurements(format!("test {t} lacks products for some excitations")));
        }
        let l = self.range;
        let high = self.contrast == Contrast::High;
        let noisy = match rule {
            Rule::Regularized { .. } | Rule::UnregularizedNoisy => Some(self.noisy_or_err()?),
            _ => None,
        };
        let mut worst = f64::INFINITY;
        for (i, &p_t) in pt.iter().enumerate() {
            let p_a = self.exact[i];
            let v = match (rule, high) {
                (Rule::Ideal, true) => p_a - p_t,
                (Rule::Ideal, false) => p_t - p_a,
                (Rule::UnregularizedNoisy, true) => noisy.unwrap()[i] - p_t,
                (Rule::UnregularizedNoisy, false) => p_t - noisy.unwrap()[i],
                (Rule::Regularized { eta_star: s }, true) => (noisy.unwrap()[i] + s.eta2 * l) / (1.0 - s.eta1) - p_t,
                (Rule::Regularized { eta_star: s }, false) => p_t - (noisy.unwrap()[i] - s.eta2 * l) / (1.0 + s.eta1),
                (Rule::Deterministic { eta: e, eta_star: s }, true) => {
                    (p_a * (1.0 + e.eta1) + e.eta2 * l + s.eta2 * l) / (1.0 - s.eta1) - p_t
                }
                (Rule::Deterministic { eta: e, eta_star: s }, false) => {
                    p_t - (p_a * (1.0 - e.eta1) - e.eta2 * l - s.eta2 * l) / (1.0 + s.eta1)
                }
            };
            worst = worst.min(v);
        }
        Ok(worst)
    }

    pub fn reconstruct(&self, rule: Rule) -> Result<Reconstruction> {
        if self.tests.is_empty() {
            return Err(Error::InvalidParameter("empty test family".into()));
        }
        let (nx, ny) = self.tests[0].dims();
        let margins = (0..self.tests.len()).map(|t| self.margin(t, &rule)).collect::<Result<Vec<f64>>>()?;
        let mut mask = CellRegion::empty(nx, ny);
        for (t, &m) in margins.iter().enumerate() {
            if m >= 0.0 {
                mask = mask.union(&self.tests[t])?;
            }
        }
        Ok(Reconstruction { rule, passed: margins.iter().map(|&m| m >= 0.0).collect(), margins, mask })
    }

    /// Ideal, regularized and deterministic reconstructions from one data set.
    pub fn reconstruct_all(&self, eta: NoiseLevel, eta_star: NoiseLevel) -> Result<ReconstructionResult> {
        let dag = self.reconstruct(Rule::Ideal)?;
        let reg = match self.noisy {
            Some(_) => Some(self.reconstruct(Rule::Regularized { eta_star })?),
            None => None,
        };
        let det = self.reconstruct(Rule::Deterministic { eta, eta_star })?;
        Ok(ReconstructionResult { eta, eta_star, dag, reg, det })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub rule: Rule,
    pub margins: Vec<f64>,
    pub passed: Vec<bool>,
    pub mask: CellRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionResult {
    pub eta: NoiseLevel,
    pub eta_star: NoiseLevel,
    pub dag: Reconstruction,
    pub reg: Option<Reconstruction>,
    pub det: Reconstruction,
}

impl ReconstructionResult {
    /// `A_dag ⊆ A_reg ⊆ A_det` (the middle link is skipped without noisy data).
    pub fn is_nested(&self) -> Result<bool> {
        Ok(match &self.reg {
            Some(reg) => self.dag.mask.is_subset(&reg.mask)? && reg.mask.is_subset(&self.det.mask)?,
            None => self.dag.mask.is_subset(&self.det.mask)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepStep {
    pub k: usize,
    pub eta: NoiseLevel,
    pub cells: usize,
    /// `mask_k ⊆ mask_{k−1}` (true for the first step).
    pub nested_in_previous: bool,
    pub equals_dag: bool,
    pub mask: CellRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepStudy {
    pub steps: Vec<SweepStep>,
    pub dag: CellRegion,
    pub all_nested: bool,
    /// First index from which every later deterministic mask equals the ideal one.
    pub converged_from: Option<usize>,
}

/// Deterministic reconstructions (`η* = η_k`) along a strictly decreasing noise sequence.
pub fn noise_sweep(data: &MeasurementSet, etas: &[NoiseLevel]) -> Result<SweepStudy> {
    if etas.is_empty() {
        return Err(Error::InvalidParameter("empty noise sequence".into()));
    }
    for e in etas {
        e.validate()?;
    }
    if etas.iter().all(|e| *e == NoiseLevel::ZERO) {
        return Err(Error::InvalidParameter("noise sequence is identically zero".into()));
    }
    for w in etas.windows(2) {
        if !(w[1].eta1 < w[0].eta1 && w[1].eta2 < w[0].eta2) {
            return Err(Error::InvalidParameter(format!(
                "noise sequence must decrease strictly in both components: {:?} then {:?}",
                w[0], w[1]
            )));
        }
    }
    let dag = data.reconstruct(Rule::Ideal)?.mask;
    let mut steps: Vec<SweepStep> = Vec::with_capacity(etas.len());
    for (k, &eta) in etas.iter().enumerate() {
        let mask = data.reconstruct(Rule::Deterministic { eta, eta_star: eta })?.mask;
        let nested = match steps.last() {
            Some(prev) => mask.is_subset(&prev.mask)?,
            None => true,
        };
        steps.push(SweepStep { k, eta, cells: mask.count(), nested_in_previous: nested, equals_dag: mask == dag, mask });
    }
    let converged_from = (0..steps.len()).find(|&k| steps[k..].iter().all(|s| s.equals_dag));
    Ok(SweepStudy { all_nested: steps.iter().all(|s| s.nested_in_previous), steps, dag, converged_from })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimation {
    Over,
    Under,
    Exact,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MisEstimationReport {
    pub relation: Estimation,
    pub checks: Vec<String>,
    pub violations: Vec<String>,
}

impl MisEstimationReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Set relations when the regularization parameters over- or under-estimate the true noise.
pub fn mis_estimation_check(data: &MeasurementSet, eta: NoiseLevel, eta_star: NoiseLevel) -> Result<MisEstimationReport> {
    let over = eta.le(&eta_star);
    let under = eta_star.le(&eta);
    let relation = match (over, under) {
        (true, true) => Estimation::Exact,
        (true, false) => Estimation::Over,
        (false, true) => Estimation::Under,
        (false, false) => {
            return Ok(MisEstimationReport { relation: Estimation::NotApplicable, checks: vec![], violations: vec![] })
        }
    };
    let truth_reg = data.reconstruct(Rule::Regularized { eta_star: eta })?.mask;
    let star_reg = data.reconstruct(Rule::Regularized { eta_star })?.mask;
    let mut checks = Vec::new();
    let mut violations = Vec::new();
    if over {
        checks.push("A_reg(η*) ⊇ A_reg(η)".to_string());
        if !truth_reg.is_subset(&star_reg)? {
            violations.push(format!("A_reg(η*) misses {} cells of A_reg(η)", truth_reg.difference(&star_reg)?.count()));
        }
    }
    if under {
        checks.push("A_reg(η*) ⊆ A_det(η)".to_string());
        let det = data.reconstruct(Rule::Deterministic { eta, eta_star: eta })?.mask;
        if !star_reg.is_subset(&det)? {
            violations.push(format!("A_reg(η*) exceeds A_det(η) by {} cells", star_reg.difference(&det)?.count()));
        }
    }
    Ok(MisEstimationReport { relation, checks, violations })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconMetrics {
    pub contains_a: bool,
    pub within_a_star: bool,
    pub excess_cells: usize,
    pub deficit_cells: usize,
    /// Cells outside the outer support.
    pub excess_over_a_star: usize,
    pub jaccard_a: f64,
    pub jaccard_a_star: f64,
}

fn jaccard(a: &CellRegion, b: &CellRegion) -> Result<f64> {
    let union = a.union(b)?.count();
    Ok(if union == 0 { 1.0 } else { a.intersection(b)?.count() as f64 / union as f64 })
}

pub fn metrics(mask: &CellRegion, a: &CellRegion) -> Result<ReconMetrics> {
    let star = outer_support(a);
    Ok(ReconMetrics {
        contains_a: a.is_subset(mask)?,
        within_a_star: mask.is_subset(&star)?,
        excess_cells: mask.difference(a)?.count(),
        deficit_cells: a.difference(mask)?.count(),
        excess_over_a_star: mask.difference(&star)?.count(),
        jaccard_a: jaccard(mask, a)?,
        jaccard_a_star: jaccard(mask, &star)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(contrast: Contrast) -> MeasurementSet {
        let tests = vec![CellRegion::empty(4, 4), CellRegion::rect(4, 4, 1, 1, 1, 1).unwrap()];
        MeasurementSet {
            contrast,
            labels: vec!["a".into()],
            exact: vec![2.0],
            noisy: Some(vec![1.7]),
            noise: None,
            empty: vec![1.0],
            range: 10.0,
            tests,
            test_products: vec![vec![1.0], vec![2.0]],
        }
    }

    #[test]
    fn noise_formula_examples() {
        let lvl = NoiseLevel { eta1: 0.1, eta2: 0.05 };
        assert!((apply_noise_with(2.0, lvl, 10.0, 1.0, -1.0) - 1.7).abs() < 1e-15);
        assert_eq!(apply_noise_with(2.0, NoiseLevel::ZERO, 10.0, 0.3, 0.9), 2.0);
        assert!((apply_noise_with(0.0, lvl, 10.0, 0.4, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn noise_is_reproducible_and_bounded() {
        let m = NoiseModel::new(NoiseLevel { eta1: 0.1, eta2: 0.05 }, 3.0, 42).unwrap();
        assert_eq!(m.draws(5), m.draws(5));
        assert_ne!(m.draws(5), m.draws(6));
        for i in 0..200 {
            let (a, b) = m.draws(i);
            assert!((-1.0..=1.0).contains(&a) && (-1.0..=1.0).contains(&b));
            assert!((m.apply(2.0, i) - 2.0).abs() <= 0.1 * 2.0 + 0.05 * 3.0 + 1e-15);
        }
    }

    #[test]
    fn regularized_margin_example() {
        let data = toy(Contrast::High);
        let m = data.margin(1, &Rule::Regularized { eta_star: NoiseLevel { eta1: 0.1, eta2: 0.05 } }).unwrap();
        assert!((m - (2.2 / 0.9 - 2.0)).abs() < 1e-14);
        let ideal = data.margin(1, &Rule::Ideal).unwrap();
        let nonoise = MeasurementSet { noisy: Some(data.exact.clone()), ..data.clone() };
        assert_eq!(nonoise.margin(1, &Rule::Regularized { eta_star: NoiseLevel::ZERO }).unwrap(), ideal);
    }

    #[test]
    fn low_contrast_mirrors() {
        let data = toy(Contrast::Low);
        assert_eq!(data.margin(1, &Rule::Ideal).unwrap(), 0.0);
        assert_eq!(data.margin(0, &Rule::Ideal).unwrap(), -1.0);
        let s = NoiseLevel { eta1: 0.1, eta2: 0.05 };
        let m = data.margin(1, &Rule::Regularized { eta_star: s }).unwrap();
        assert!((m - (2.0 - (1.7 - 0.5) / 1.1)).abs() < 1e-14);
    }

    #[test]
    fn missing_noisy_data_is_an_error() {
        let data = MeasurementSet { noisy: None, ..toy(Contrast::High) };
        assert!(matches!(data.margin(0, &Rule::UnregularizedNoisy), Err(Error::MissingMeasurements(_))));
        let empty = MeasurementSet { tests: vec![], test_products: vec![], ..toy(Contrast::High) };
        assert!(empty.reconstruct(Rule::Ideal).is_err());
    }

    #[test]
    fn sweep_rejects_bad_sequences() {
        let data = toy(Contrast::High);
        assert!(noise_sweep(&data, &[]).is_err());
        assert!(noise_sweep(&data, &[NoiseLevel::ZERO, NoiseLevel::ZERO]).is_err());
        let e = NoiseLevel { eta1: 0.1, eta2: 0.01 };
        assert!(noise_sweep(&data, &[e, e]).is_err());
        assert!(noise_sweep(&data, &[e, e.scaled(0.5)]).unwrap().all_nested);
    }

    #[test]
    fn metrics_examples() {
        let a = CellRegion::rect(8, 8, 2, 2, 3, 3).unwrap();
        let m = metrics(&a, &a).unwrap();
        assert!(m.contains_a && m.within_a_star && m.jaccard_a == 1.0);
        assert!(!metrics(&CellRegion::empty(8, 8), &a).unwrap().contains_a);
        let block = CellRegion::rect(8, 8, 2, 2, 4, 4).unwrap();
        let ring = block.difference(&CellRegion::rect(8, 8, 3, 3, 2, 2).unwrap()).unwrap();
        let m = metrics(&block, &ring).unwrap();
        assert!(m.within_a_star && m.contains_a);
        assert_eq!(m.excess_cells, 4);
        assert!(metrics(&CellRegion::empty(4, 4), &a).is_err());
    }

    #[test]
    fn block_family_stays_interior() {
        let tests = block_tests(6, 6, 2).unwrap();
        assert_eq!(tests.len(), 9);
        assert!(tests.iter().all(|t| !t.touches_rim() && t.count() == 4));
        assert!(block_tests(3, 3, 2).is_err());
    }

    #[test]
    fn mis_estimation_incomparable() {
        let data = toy(Contrast::High);
        let r = mis_estimation_check(&data, NoiseLevel { eta1: 0.1, eta2: 0.0 }, NoiseLevel { eta1: 0.0, eta2: 0.1 }).unwrap();
        assert_eq!(r.relation, Estimation::NotApplicable);
    }
}
