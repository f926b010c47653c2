//! Constitutive laws, admissibility sampling and spatial material layouts.

mod admissibility;
mod assignment;
mod law;
mod primitive;

pub use admissibility::{check_admissibility, AdmissibilityReport, Clause, StrongMonotoneCheck, Violation};
pub use assignment::{build_limit_material, build_test_material, LocalLaw, MaterialAssignment};
pub use law::{Contrast, LawClass, LawShape, MaterialLaw, ScalarFn};
pub use primitive::x_tanh_integral;
