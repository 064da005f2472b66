//! Validated state and gate wrappers plus state-distance functionals.

use serde::{Deserialize, Serialize};

use crate::error::{QspError, Result};
use crate::linalg::{
    self, hermitian_eigen, hermiticity_defect, symmetry_defect, trace, unitarity_defect,
    CMatrix,
};

/// Numerical tolerance bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub herm: f64,
    pub unitary: f64,
    pub psd_clamp: f64,
    pub phase: f64,
    /// Required stored-vs-direct agreement `1 − F` in the program VM.
    pub fidelity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { herm: 1e-9, unitary: 1e-9, psd_clamp: 1e-12, phase: 1e-9, fidelity: 1e-7 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let all = [self.herm, self.unitary, self.psd_clamp, self.phase, self.fidelity];
        if all.iter().all(|t| t.is_finite() && *t > 0.0) {
            Ok(())
        } else {
            Err(QspError::validation("tolerances must be positive and finite"))
        }
    }

    /// Parses an override: either a bare number applied to every field or a JSON object
    /// with any subset of the fields.
    pub fn parse_override(text: &str) -> Result<Self> {
        let text = text.trim();
        let tol = if let Ok(v) = text.parse::<f64>() {
            Tolerances { herm: v, unitary: v, psd_clamp: v.min(1e-12), phase: v, fidelity: v }
        } else {
            let value: serde_json::Value =
                serde_json::from_str(text).map_err(|e| QspError::validation(format!("QSP_TOL: {e}")))?;
            let mut tol = Tolerances::default();
            let get = |name: &str, into: &mut f64| -> Result<()> {
                if let Some(v) = value.get(name) {
                    *into = v
                        .as_f64()
                        .ok_or_else(|| QspError::validation(format!("QSP_TOL.{name} must be a number")))?;
                }
                Ok(())
            };
            get("herm", &mut tol.herm)?;
            get("unitary", &mut tol.unitary)?;
            get("psd_clamp", &mut tol.psd_clamp)?;
            get("phase", &mut tol.phase)?;
            get("fidelity", &mut tol.fidelity)?;
            tol
        };
        tol.validate()?;
        Ok(tol)
    }
}

/// A density operator; trace one unless constructed through [`DensityOperator::unnormalized`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: CMatrix,
    normalized: bool,
}

impl DensityOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        Self::check(&matrix, true)?;
        Ok(DensityOperator { matrix, normalized: true })
    }

    /// Positive operator with arbitrary trace, e.g. an unnormalised branch output.
    pub fn unnormalized(matrix: CMatrix) -> Result<Self> {
        Self::check(&matrix, false)?;
        Ok(DensityOperator { matrix, normalized: false })
    }

    pub fn pure(psi: &linalg::CVector) -> Result<Self> {
        let n = psi.norm();
        if n == 0.0 {
            return Err(QspError::validation("zero state vector"));
        }
        let v = psi / linalg::c(n, 0.0);
        Self::new(linalg::outer(&v, &v))
    }

    /// Computational basis state `|k⟩⟨k|` on `dim` levels.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(QspError::validation(format!("basis index {k} out of range for dim {dim}")));
        }
        Self::new(linalg::projector(dim, k))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityOperator { matrix: linalg::identity(dim) / linalg::c(dim as f64, 0.0), normalized: true }
    }

    fn check(m: &CMatrix, normalized: bool) -> Result<()> {
        let tol = Tolerances::default();
        if !m.is_square() || m.nrows() == 0 {
            return Err(QspError::dims("density operator must be a non-empty square matrix"));
        }
        if !linalg::all_finite(m) {
            return Err(QspError::validation("density operator has non-finite entries"));
        }
        let h = hermiticity_defect(m);
        if h > tol.herm {
            return Err(QspError::validation(format!("density operator not Hermitian (defect {h:e})")));
        }
        let (vals, _) = hermitian_eigen(m);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -tol.herm {
            return Err(QspError::PsdViolation { min_eigenvalue: min });
        }
        if normalized {
            let t = trace(m);
            if (t.re - 1.0).abs() > tol.herm || t.im.abs() > tol.herm {
                return Err(QspError::validation(format!("density operator trace {t} is not 1")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn trace(&self) -> f64 {
        trace(&self.matrix).re
    }

    /// Copy rescaled to unit trace.
    pub fn normalize(&self) -> Result<Self> {
        let t = self.trace();
        if t <= 0.0 {
            return Err(QspError::Numerical("cannot normalise a zero-trace operator".into()));
        }
        Ok(DensityOperator { matrix: &self.matrix / linalg::c(t, 0.0), normalized: true })
    }

    pub fn transpose(&self) -> CMatrix {
        self.matrix.transpose()
    }
}

/// A unitary matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryGate {
    matrix: CMatrix,
}

impl UnitaryGate {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        Self::with_tolerance(matrix, Tolerances::default().unitary)
    }

    pub fn with_tolerance(matrix: CMatrix, tol: f64) -> Result<Self> {
        if !linalg::all_finite(&matrix) {
            return Err(QspError::validation("gate has non-finite entries"));
        }
        let defect = unitarity_defect(&matrix);
        if defect > tol {
            return Err(QspError::validation(format!("matrix is not unitary (defect {defect:e})")));
        }
        Ok(UnitaryGate { matrix })
    }

    pub fn identity(d: usize) -> Self {
        UnitaryGate { matrix: linalg::identity(d) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dagger(&self) -> Self {
        UnitaryGate { matrix: self.matrix.adjoint() }
    }

    pub fn transpose(&self) -> Self {
        UnitaryGate { matrix: self.matrix.transpose() }
    }

    pub fn conj(&self) -> Self {
        UnitaryGate { matrix: self.matrix.map(|z| z.conj()) }
    }

    pub fn compose(&self, other: &UnitaryGate) -> Self {
        UnitaryGate { matrix: &self.matrix * &other.matrix }
    }

    pub fn symmetry_defect(&self) -> f64 {
        symmetry_defect(&self.matrix)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.symmetry_defect() <= tol
    }

    /// `U ρ U†`.
    pub fn conjugate(&self, rho: &CMatrix) -> CMatrix {
        &self.matrix * rho * self.matrix.adjoint()
    }
}

/// Uhlmann fidelity `(tr √(√ρ σ √ρ))²`, clamped to `[0, 1]`.
pub fn fidelity(a: &DensityOperator, b: &DensityOperator) -> f64 {
    fidelity_matrices(a.matrix(), b.matrix())
}

pub fn fidelity_matrices(a: &CMatrix, b: &CMatrix) -> f64 {
    let sa = linalg::hermitian_fn(a, |v| v.max(0.0).sqrt());
    let inner = &sa * b * &sa;
    let root_trace: f64 = hermitian_eigen(&inner).0.iter().map(|v| v.max(0.0).sqrt()).sum();
    (root_trace * root_trace).clamp(0.0, 1.0)
}

/// Trace distance `½‖a − b‖₁`.
pub fn trace_distance(a: &DensityOperator, b: &DensityOperator) -> f64 {
    trace_distance_matrices(a.matrix(), b.matrix())
}

pub fn trace_distance_matrices(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = a - b;
    0.5 * hermitian_eigen(&diff).0.iter().map(|v| v.abs()).sum::<f64>()
}

/// `|⟨a|b⟩|²` for normalised vectors.
pub fn pure_fidelity(a: &linalg::CVector, b: &linalg::CVector) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    (a.dotc(b).norm() / (na * nb)).powi(2)
}
