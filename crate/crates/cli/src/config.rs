use std::path::Path;

use nlmpm::excitation::{affine_profile, depleting_sequence, fourier_family, ExcitationFamily};
use nlmpm::geometry::{build_mesh, CellRegion, StructuredTriMesh};
use nlmpm::imaging::{block_tests, NoiseLevel};
use nlmpm::materials::{check_admissibility, Contrast, LawShape, MaterialAssignment, MaterialLaw};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mesh: MeshSpec,
    #[serde(default)]
    pub background: BackgroundSpec,
    #[serde(default)]
    pub anomaly: Option<AnomalySpec>,
    #[serde(default)]
    pub excitation: ExcitationSpec,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// Regularization parameters `η*`; the noise levels when absent.
    #[serde(default)]
    pub regularization: Option<LevelSpec>,
    #[serde(default)]
    pub tests: TestSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub depleting: Option<DepletingSpec>,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "unit_extent")]
    pub extent: [f64; 2],
}

fn unit_extent() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    #[serde(default = "one")]
    pub value: f64,
    /// Per-pixel values, row-major from the bottom row; overrides `value`.
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self { value: 1.0, values: None }
    }
}

/// `[i0, j0, w, h]` in pixels.
pub type Rect = [usize; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub rects: Vec<Rect>,
    #[serde(default)]
    pub subtract: Vec<Rect>,
    pub contrast: ContrastSpec,
    pub law: LawSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastSpec {
    High,
    Low,
}

impl From<ContrastSpec> for Contrast {
    fn from(c: ContrastSpec) -> Self {
        match c {
            ContrastSpec::High => Contrast::High,
            ContrastSpec::Low => Contrast::Low,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    /// linear, bounded, growth, vanishing, pec or pei.
    pub class: String,
    /// constant, affine, power or sigmoid; ignored for the limits.
    #[serde(default)]
    pub shape: Option<String>,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub s0: Option<f64>,
    #[serde(default)]
    pub exponent: Option<f64>,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
    /// Class exponent and scale for the growth and vanishing classes.
    #[serde(default)]
    pub class_q: Option<f64>,
    #[serde(default)]
    pub class_s0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSpec {
    #[serde(default = "fourier")]
    pub kind: String,
    #[serde(default = "eight")]
    pub k_max: usize,
    /// `[a, b]` of the single `a·x + b·y` excitation when `kind = "affine"`.
    #[serde(default = "x_profile")]
    pub coeffs: [f64; 2],
    /// Appends a depleting sequence for the given target.
    #[serde(default)]
    pub deplete: Option<DepleteAugment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepleteAugment {
    pub target: Rect,
    pub n_max: usize,
}

fn fourier() -> String {
    "fourier".into()
}

fn eight() -> usize {
    8
}

fn x_profile() -> [f64; 2] {
    [1.0, 0.0]
}

impl Default for ExcitationSpec {
    fn default() -> Self {
        Self { kind: fourier(), k_max: 8, coeffs: x_profile(), deplete: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub eta1: f64,
    pub eta2: f64,
}

impl From<LevelSpec> for NoiseLevel {
    fn from(l: LevelSpec) -> Self {
        NoiseLevel { eta1: l.eta1, eta2: l.eta2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub eta1: f64,
    pub eta2: f64,
    /// Instrument range; `1.2·max P_∅` when absent.
    #[serde(default)]
    pub range: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    #[serde(default = "two")]
    pub block: usize,
}

fn two() -> usize {
    2
}

impl Default for TestSpec {
    fn default() -> Self {
        Self { block: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Explicit `[η1, η2]` sequence; otherwise `start·factor^k`, `k < steps`.
    #[serde(default)]
    pub etas: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub start: Option<[f64; 2]>,
    #[serde(default = "half")]
    pub factor: f64,
    #[serde(default = "seven")]
    pub steps: usize,
}

fn half() -> f64 {
    0.5
}

fn seven() -> usize {
    7
}

impl SweepSpec {
    pub fn levels(&self) -> Vec<NoiseLevel> {
        match (&self.etas, self.start) {
            (Some(e), _) => e.iter().map(|v| NoiseLevel { eta1: v[0], eta2: v[1] }).collect(),
            (None, Some(s)) => (0..self.steps)
                .map(|k| {
                    let f = self.factor.powi(k as i32);
                    NoiseLevel { eta1: s[0] * f, eta2: s[1] * f }
                })
                .collect(),
            (None, None) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepletingSpec {
    pub target: Rect,
    #[serde(default = "five")]
    pub n_max: usize,
    /// Linear value placed in the target for the gap column.
    #[serde(default = "two_f")]
    pub target_value: f64,
}

fn five() -> usize {
    5
}

fn two_f() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "twenty")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// `none` or `sign_flip`.
    #[serde(default = "none")]
    pub mutation: String,
}

fn twenty() -> usize {
    20
}

fn none() -> String {
    "none".into()
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { trials: 20, seed: 0, mutation: none() }
    }
}

/// Everything a command needs, built once the config has been validated.
pub struct Setup {
    pub mesh: StructuredTriMesh,
    pub background: Vec<f64>,
    pub anomaly: CellRegion,
    pub truth: MaterialAssignment,
    pub family: ExcitationFamily,
    pub tests: Vec<CellRegion>,
}

/// Reads TOML, or the `config` member of a JSON results file.
pub fn load(path: &Path) -> Result<ExperimentConfig, Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
    if path.extension().is_some_and(|e| e == "json") {
        let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| vec![format!("{}: {e}", path.display())])?;
        let cfg = doc.get("config").cloned().ok_or_else(|| vec![format!("{}: no embedded config", path.display())])?;
        serde_json::from_value(cfg).map_err(|e| vec![format!("{}: {e}", path.display())])
    } else {
        toml::from_str(&text).map_err(|e| vec![format!("{}: {e}", path.display())])
    }
}

fn rect(mesh: &StructuredTriMesh, r: &Rect, what: &str, errors: &mut Vec<String>) -> Option<CellRegion> {
    match CellRegion::rect(mesh.nx, mesh.ny, r[0], r[1], r[2], r[3]) {
        Ok(c) => Some(c),
        Err(e) => {
            errors.push(format!("{what} {r:?}: {e}"));
            None
        }
    }
}

fn need(v: Option<f64>, field: &str, errors: &mut Vec<String>) -> f64 {
    v.unwrap_or_else(|| {
        errors.push(format!("law: missing `{field}`"));
        f64::NAN
    })
}

pub fn build_law(spec: &LawSpec) -> Result<MaterialLaw, Vec<String>> {
    let mut errors = Vec::new();
    let class = spec.class.as_str();
    if class == "pec" {
        return Ok(MaterialLaw::pec());
    }
    if class == "pei" {
        return Ok(MaterialLaw::pei());
    }
    if class == "linear" {
        let v = need(spec.value.or(spec.a), "value", &mut errors);
        if !errors.is_empty() {
            return Err(errors);
        }
        return MaterialLaw::constant(v).map_err(|e| vec![format!("law: {e}")]);
    }
    let shape = match spec.shape.as_deref() {
        Some("constant") => LawShape::Constant(need(spec.value, "value", &mut errors)),
        Some("affine") => LawShape::Affine { a: need(spec.a, "a", &mut errors), b: need(spec.b, "b", &mut errors) },
        Some("power") => LawShape::Power {
            c: need(spec.c, "c", &mut errors),
            s0: need(spec.s0, "s0", &mut errors),
            q: need(spec.exponent, "exponent", &mut errors),
        },
        Some("sigmoid") => LawShape::Sigmoid {
            a: need(spec.a, "a", &mut errors),
            b: need(spec.b, "b", &mut errors),
            s0: need(spec.s0, "s0", &mut errors),
        },
        Some(other) => {
            errors.push(format!("law: unknown shape `{other}`"));
            LawShape::Constant(f64::NAN)
        }
        None => {
            errors.push("law: missing `shape`".into());
            LawShape::Constant(f64::NAN)
        }
    };
    let built = match class {
        "bounded" => {
            let (lo, hi) = (need(spec.lower, "lower", &mut errors), need(spec.upper, "upper", &mut errors));
            MaterialLaw::bounded(shape, lo, hi)
        }
        "growth" => {
            let hi = need(spec.upper, "upper", &mut errors);
            let q = need(spec.class_q, "class_q", &mut errors);
            let s0 = need(spec.class_s0, "class_s0", &mut errors);
            MaterialLaw::growth(shape, spec.lower, hi, q, s0)
        }
        "vanishing" => {
            let (lo, hi) = (need(spec.lower, "lower", &mut errors), need(spec.upper, "upper", &mut errors));
            let q = need(spec.class_q, "class_q", &mut errors);
            let s0 = need(spec.class_s0, "class_s0", &mut errors);
            MaterialLaw::vanishing(shape, lo, hi, q, s0)
        }
        other => {
            errors.push(format!("law: unknown class `{other}`"));
            return Err(errors);
        }
    };
    if !errors.is_empty() {
        return Err(errors);
    }
    built.map_err(|e| vec![format!("law: {e}")])
}

impl ExperimentConfig {
    /// Builds the mesh, materials, excitations and tests, collecting every problem.
    pub fn setup(&self) -> Result<Setup, Vec<String>> {
        let mut errors = Vec::new();
        let mesh = build_mesh(self.mesh.nx, self.mesh.ny, (self.mesh.extent[0], self.mesh.extent[1]))
            .map_err(|e| vec![format!("mesh: {e}")])?;
        let n_pix = mesh.num_pixels();
        let background = match &self.background.values {
            Some(v) => v.clone(),
            None => vec![self.background.value; n_pix],
        };
        if background.len() != n_pix {
            errors.push(format!("background: {} values for {n_pix} pixels", background.len()));
        }

        let mut anomaly = CellRegion::empty(mesh.nx, mesh.ny);
        let mut law = None;
        let mut contrast = Contrast::High;
        if let Some(a) = &self.anomaly {
            for r in &a.rects {
                if let Some(c) = rect(&mesh, r, "anomaly rect", &mut errors) {
                    anomaly = anomaly.union(&c).expect("same grid");
                }
            }
            for r in &a.subtract {
                if let Some(c) = rect(&mesh, r, "anomaly subtract", &mut errors) {
                    anomaly = anomaly.difference(&c).expect("same grid");
                }
            }
            contrast = a.contrast.into();
            match build_law(&a.law) {
                Ok(l) => {
                    if !l.is_limit() {
                        let report = check_admissibility(&l, 10.0, 2001);
                        match report {
                            Ok(r) if !r.violations.is_empty() => {
                                errors.extend(r.violations.iter().map(|v| {
                                    format!("law admissibility: clause {:?} fails at s={} ({} vs bound {})", v.clause, v.s, v.value, v.bound)
                                }))
                            }
                            Err(e) => errors.push(format!("law admissibility: {e}")),
                            _ => {}
                        }
                    }
                    law = Some(l);
                }
                Err(e) => errors.extend(e),
            }
        }

        let truth = if errors.is_empty() {
            let r = match &law {
                Some(l) if l.is_limit() => MaterialAssignment::limit(background.clone(), anomaly.clone(), l.class),
                Some(l) => MaterialAssignment::with_anomaly(background.clone(), anomaly.clone(), l.clone(), contrast),
                None => MaterialAssignment::background_only(mesh.nx, mesh.ny, background.clone()),
            };
            r.map_err(|e| errors.push(format!("material: {e}"))).ok()
        } else {
            None
        };

        let mut family = match self.excitation.kind.as_str() {
            "fourier" => fourier_family(&mesh, self.excitation.k_max).map_err(|e| errors.push(format!("excitation: {e}"))).ok(),
            "affine" => {
                let [a, b] = self.excitation.coeffs;
                affine_profile(&mesh, a, b)
                    .and_then(|f| ExcitationFamily::new(vec![f], "affine"))
                    .map_err(|e| errors.push(format!("excitation: {e}")))
                    .ok()
            }
            other => {
                errors.push(format!("excitation: unknown kind `{other}`"));
                None
            }
        };
        if let (Some(d), Some(f)) = (&self.excitation.deplete, family.as_ref()) {
            let bg0 = background.first().copied().unwrap_or(1.0);
            if background.iter().any(|&v| v != bg0) {
                errors.push("excitation.deplete: depleting potentials need a constant background".into());
            } else if let Some(target) = rect(&mesh, &d.target, "excitation.deplete target", &mut errors) {
                match depleting_sequence(&mesh, bg0, &target, d.n_max).and_then(|dep| f.concat(&dep.family)) {
                    Ok(aug) => family = Some(aug),
                    Err(e) => errors.push(format!("excitation.deplete: {e}")),
                }
            }
        }

        let tests = block_tests(mesh.nx, mesh.ny, self.tests.block).map_err(|e| errors.push(format!("tests: {e}"))).ok();

        if let Some(n) = &self.noise {
            if let Err(e) = NoiseLevel::new(n.eta1, n.eta2) {
                errors.push(format!("noise: {e}"));
            }
            if let Some(l) = n.range {
                if !(l > 0.0) || !l.is_finite() {
                    errors.push(format!("noise: range must be positive, got {l}"));
                }
            }
        }
        if let Some(r) = &self.regularization {
            if let Err(e) = NoiseLevel::new(r.eta1, r.eta2) {
                errors.push(format!("regularization: {e}"));
            }
        }
        if !matches!(self.verify.mutation.as_str(), "none" | "sign_flip") {
            errors.push(format!("verify: unknown mutation `{}`", self.verify.mutation));
        }

        match (errors.is_empty(), truth, family, tests) {
            (true, Some(truth), Some(family), Some(tests)) => {
                Ok(Setup { mesh, background, anomaly, truth, family, tests })
            }
            _ => Err(errors),
        }
    }
}
