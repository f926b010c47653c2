use super::law::{Contrast, LawClass, MaterialLaw};
use crate::error::{Error, Result};
use crate::geometry::CellRegion;

/// Material seen by one pixel.
#[derive(Debug, Clone, Copy)]
pub enum LocalLaw<'a> {
    Linear(f64),
    Nonlinear(&'a MaterialLaw),
    Limit(LawClass),
}

/// Per-pixel material: linear background plus at most one anomaly law on a region.
#[derive(Debug, Clone)]
pub struct MaterialAssignment {
    nx: usize,
    ny: usize,
    background: Vec<f64>,
    anomaly: CellRegion,
    law: Option<MaterialLaw>,
    contrast: Option<Contrast>,
}

fn check_background(nx: usize, ny: usize, bg: &[f64]) -> Result<()> {
    if bg.len() != nx * ny {
        return Err(Error::DimensionMismatch { expected: (nx, ny), found: (bg.len(), 1) });
    }
    if let Some(v) = bg.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("background must be positive and finite, found {v}")));
    }
    Ok(())
}

fn outside_extremes(bg: &[f64], region: &CellRegion) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (p, &v) in bg.iter().enumerate() {
        if !region.contains(p) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

fn check_contrast(bg: &[f64], region: &CellRegion, law: &MaterialLaw, contrast: Contrast) -> Result<()> {
    let (bg_min, bg_max) = outside_extremes(bg, region);
    match contrast {
        Contrast::High => {
            let lo = law.lower.ok_or(Error::ContrastViolation {
                clause: "high",
                detail: "law declares no lower bound".into(),
            })?;
            if bg_max.is_finite() && !(bg_max < lo) {
                return Err(Error::ContrastViolation {
                    clause: "high",
                    detail: format!("background supremum {bg_max} is not below the law's lower bound {lo}"),
                });
            }
        }
        Contrast::Low => {
            let hi = law.upper.ok_or(Error::ContrastViolation {
                clause: "low",
                detail: "law declares no upper bound".into(),
            })?;
            if bg_min.is_finite() && !(hi < bg_min) {
                return Err(Error::ContrastViolation {
                    clause: "low",
                    detail: format!("law's upper bound {hi} is not below the background infimum {bg_min}"),
                });
            }
        }
    }
    Ok(())
}

impl MaterialAssignment {
    pub fn background_only(nx: usize, ny: usize, background: Vec<f64>) -> Result<Self> {
        check_background(nx, ny, &background)?;
        Ok(Self { nx, ny, background, anomaly: CellRegion::empty(nx, ny), law: None, contrast: None })
    }

    pub fn uniform(nx: usize, ny: usize, value: f64) -> Result<Self> {
        Self::background_only(nx, ny, vec![value; nx * ny])
    }

    /// Anomaly `law` on `region` over a linear background, with the contrast
    /// condition checked against the background outside the region.
    pub fn with_anomaly(background: Vec<f64>, region: CellRegion, law: MaterialLaw, contrast: Contrast) -> Result<Self> {
        let (nx, ny) = region.dims();
        if law.is_limit() {
            return Self::limit(background, region, law.class);
        }
        check_background(nx, ny, &background)?;
        check_contrast(&background, &region, &law, contrast)?;
        Ok(Self { nx, ny, background, anomaly: region, law: Some(law), contrast: Some(contrast) })
    }

    /// Perfect conductor (`LawClass::Pec`) or insulator (`LawClass::Pei`) on `region`.
    pub fn limit(background: Vec<f64>, region: CellRegion, class: LawClass) -> Result<Self> {
        let (nx, ny) = region.dims();
        check_background(nx, ny, &background)?;
        let law = match class {
            LawClass::Pec => MaterialLaw::pec(),
            LawClass::Pei => MaterialLaw::pei(),
            _ => return Err(Error::InvalidParameter(format!("{} is not a limit class", class.name()))),
        };
        if region.touches_rim() {
            return Err(Error::RimTouching(class.name()));
        }
        Ok(Self { nx, ny, background, anomaly: region, law: Some(law), contrast: None })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn background(&self) -> &[f64] {
        &self.background
    }

    pub fn anomaly(&self) -> &CellRegion {
        &self.anomaly
    }

    pub fn law(&self) -> Option<&MaterialLaw> {
        self.law.as_ref()
    }

    pub fn contrast(&self) -> Option<Contrast> {
        self.contrast
    }

    /// The limit class, if the anomaly is a non-empty perfect conductor or insulator.
    pub fn limit_class(&self) -> Option<LawClass> {
        match &self.law {
            Some(l) if l.is_limit() && !self.anomaly.is_empty() => Some(l.class),
            _ => None,
        }
    }

    pub fn local(&self, pixel: usize) -> LocalLaw<'_> {
        match &self.law {
            Some(law) if self.anomaly.contains(pixel) => {
                if law.is_limit() {
                    LocalLaw::Limit(law.class)
                } else if let Some(v) = law.constant_value() {
                    LocalLaw::Linear(v)
                } else {
                    LocalLaw::Nonlinear(law)
                }
            }
            _ => LocalLaw::Linear(self.background[pixel]),
        }
    }

    /// True when every pixel has an `s`-independent coefficient.
    pub fn is_linear(&self) -> bool {
        match &self.law {
            None => true,
            Some(_) if self.anomaly.is_empty() => true,
            Some(l) => !l.is_limit() && l.constant_value().is_some(),
        }
    }

    /// Per-pixel constant coefficient, if the assignment is linear.
    pub fn linear_coefficients(&self) -> Option<Vec<f64>> {
        if !self.is_linear() {
            return None;
        }
        Some(
            (0..self.nx * self.ny)
                .map(|p| match self.local(p) {
                    LocalLaw::Linear(v) => v,
                    _ => unreachable!(),
                })
                .collect(),
        )
    }
}

/// Linear test material for a test region: the law's lower bound in `t` for
/// high contrast, its upper bound for low contrast, background elsewhere.
pub fn build_test_material(
    background: &[f64],
    t: &CellRegion,
    law: &MaterialLaw,
    contrast: Contrast,
) -> Result<MaterialAssignment> {
    let value = match contrast {
        Contrast::High => law.lower,
        Contrast::Low => law.upper,
    }
    .ok_or_else(|| Error::InvalidLaw(format!("{} law lacks the bound needed for {contrast:?} contrast", law.class.name())))?;
    let linear = MaterialLaw::constant(value)?;
    MaterialAssignment::with_anomaly(background.to_vec(), t.clone(), linear, contrast)
}

/// Perfect conductor or insulator limit on `a`; an empty `a` yields the plain background.
pub fn build_limit_material(background: &[f64], a: &CellRegion, class: LawClass) -> Result<MaterialAssignment> {
    let (nx, ny) = a.dims();
    if a.is_empty() {
        return MaterialAssignment::background_only(nx, ny, background.to_vec());
    }
    MaterialAssignment::limit(background.to_vec(), a.clone(), class)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::LawShape;

    fn sig_high() -> MaterialLaw {
        MaterialLaw::bounded(LawShape::Sigmoid { a: 2.0, b: 1.0, s0: 1.0 }, 2.0, 3.0).unwrap()
    }

    #[test]
    fn empty_test_region_is_background() {
        let bg = vec![1.0; 16];
        let m = build_test_material(&bg, &CellRegion::empty(4, 4), &sig_high(), Contrast::High).unwrap();
        assert!(m.is_linear());
        assert_eq!(m.linear_coefficients().unwrap(), bg);
    }

    #[test]
    fn test_material_uses_declared_bound() {
        let bg = vec![1.0; 16];
        let t = CellRegion::rect(4, 4, 1, 1, 2, 2).unwrap();
        let m = build_test_material(&bg, &t, &sig_high(), Contrast::High).unwrap();
        let c = m.linear_coefficients().unwrap();
        assert_eq!(c[5], 2.0);
        assert_eq!(c[0], 1.0);
        let low = MaterialLaw::bounded(LawShape::Sigmoid { a: 0.3, b: 0.2, s0: 1.0 }, 0.3, 0.5).unwrap();
        let m = build_test_material(&bg, &t, &low, Contrast::Low).unwrap();
        assert_eq!(m.linear_coefficients().unwrap()[5], 0.5);
    }

    #[test]
    fn contrast_violation_detected() {
        let bg = vec![2.5; 16];
        let region = CellRegion::rect(4, 4, 1, 1, 2, 2).unwrap();
        let err = MaterialAssignment::with_anomaly(bg, region, sig_high(), Contrast::High).unwrap_err();
        assert!(matches!(err, Error::ContrastViolation { clause: "high", .. }));
    }

    #[test]
    fn background_inside_region_is_ignored_by_contrast() {
        let mut bg = vec![1.0; 16];
        bg[5] = 10.0;
        let region = CellRegion::rect(4, 4, 1, 1, 2, 2).unwrap();
        assert!(MaterialAssignment::with_anomaly(bg, region, sig_high(), Contrast::High).is_ok());
    }

    #[test]
    fn limits_reject_rim() {
        let bg = vec![1.0; 16];
        let rim = CellRegion::rect(4, 4, 0, 0, 2, 2).unwrap();
        assert_eq!(build_limit_material(&bg, &rim, LawClass::Pei).unwrap_err(), Error::RimTouching("pei"));
        let inner = CellRegion::rect(4, 4, 1, 1, 2, 1).unwrap();
        let m = build_limit_material(&bg, &inner, LawClass::Pec).unwrap();
        assert_eq!(m.limit_class(), Some(LawClass::Pec));
        assert!(build_limit_material(&bg, &CellRegion::empty(4, 4), LawClass::Pec).unwrap().is_linear());
    }

    #[test]
    fn nonlinear_anomaly_may_touch_rim() {
        let bg = vec![1.0; 16];
        let rim = CellRegion::rect(4, 4, 0, 0, 2, 2).unwrap();
        let m = MaterialAssignment::with_anomaly(bg, rim, sig_high(), Contrast::High).unwrap();
        assert!(!m.is_linear());
        assert!(matches!(m.local(0), LocalLaw::Nonlinear(_)));
    }
}
