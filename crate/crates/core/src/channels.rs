//! Channel-state duality: Kraus and Choi representations, channel action, and
//! program states of gates.
//!
//! Choi matrices put the output leg first: `C = (E ⊗ 𝟙)(|ω⟩⟨ω|)`.

use serde::{Deserialize, Serialize};

use crate::error::{QspError, Result};
use crate::json::MatrixJson;
use crate::linalg::{
    self, c, hermitian_eigen, max_abs_diff, outer, partial_trace, swap_operator, unitarity_defect,
    unvec_row_major, vec_row_major, CMatrix, CVector,
};
use crate::states::{pure_fidelity, fidelity_matrices, DensityOperator, UnitaryGate};
use crate::teleport::PauliFrame;

/// Eigenvalue cutoff used for Choi rank and Kraus extraction.
pub const RANK_CUTOFF: f64 = 1e-10;
const TP_TOL: f64 = 1e-8;

/// A completely positive map given by Kraus operators.
///
/// Channels built with [`KrausChannel::new`] are certified trace preserving;
/// derived maps (transpose, adjoint) keep their measured residual instead.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausChannel {
    dim_in: usize,
    dim_out: usize,
    kraus: Vec<CMatrix>,
    tp_residual: f64,
}

/// `max |Σ K†K − 𝟙|`.
pub fn tp_residual(kraus: &[CMatrix]) -> f64 {
    let Some(first) = kraus.first() else {
        return f64::INFINITY;
    };
    let d_in = first.ncols();
    let sum = kraus.iter().fold(CMatrix::zeros(d_in, d_in), |acc, k| acc + k.adjoint() * k);
    max_abs_diff(&sum, &linalg::identity(d_in))
}

impl KrausChannel {
    pub fn new(kraus: Vec<CMatrix>) -> Result<Self> {
        let ch = Self::cp_map(kraus)?;
        if ch.tp_residual > TP_TOL {
            return Err(QspError::validation(format!(
                "Kraus operators are not trace preserving (residual {:e})",
                ch.tp_residual
            )));
        }
        Ok(ch)
    }

    /// Completely positive map without the trace-preservation requirement.
    pub fn cp_map(kraus: Vec<CMatrix>) -> Result<Self> {
        let first = kraus.first().ok_or_else(|| QspError::validation("Kraus list is empty"))?;
        let (dim_out, dim_in) = first.shape();
        if kraus.iter().any(|k| k.shape() != (dim_out, dim_in)) {
            return Err(QspError::dims("Kraus operators have differing shapes"));
        }
        if kraus.iter().any(|k| !linalg::all_finite(k)) {
            return Err(QspError::validation("Kraus operator has non-finite entries"));
        }
        let tp_residual = tp_residual(&kraus);
        Ok(KrausChannel { dim_in, dim_out, kraus, tp_residual })
    }

    pub fn identity(d: usize) -> Self {
        Self::unitary(&UnitaryGate::identity(d))
    }

    pub fn unitary(u: &UnitaryGate) -> Self {
        KrausChannel { dim_in: u.dim(), dim_out: u.dim(), kraus: vec![u.matrix().clone()], tp_residual: 0.0 }
    }

    /// Fully depolarising channel `ρ ↦ tr(ρ)·𝟙/d`.
    pub fn completely_depolarizing(d: usize) -> Self {
        let basis = crate::opbasis::build_basis(d, crate::opbasis::BasisFlavor::Weyl).expect("d ≥ 2");
        let kraus = basis.ops().iter().map(|p| p / c(d as f64, 0.0)).collect();
        Self::new(kraus).expect("depolarising channel is TP")
    }

    pub fn amplitude_damping(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(QspError::validation("damping rate must lie in [0, 1]"));
        }
        let k0 = linalg::diag_real(&[1.0, (1.0 - gamma).sqrt()]);
        let mut k1 = CMatrix::zeros(2, 2);
        k1[(0, 1)] = c(gamma.sqrt(), 0.0);
        Self::new(vec![k0, k1])
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    pub fn rank(&self) -> usize {
        self.kraus.len()
    }

    pub fn tp_residual(&self) -> f64 {
        self.tp_residual
    }

    pub fn is_trace_preserving(&self) -> bool {
        self.tp_residual <= TP_TOL
    }

    pub fn is_square(&self) -> bool {
        self.dim_in == self.dim_out
    }

    /// `Σ K X K†` for an arbitrary operator `X`.
    pub fn apply_matrix(&self, x: &CMatrix) -> Result<CMatrix> {
        if x.shape() != (self.dim_in, self.dim_in) {
            return Err(QspError::dims(format!(
                "channel input dim {} but operator is {}x{}",
                self.dim_in,
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(self.kraus.iter().fold(CMatrix::zeros(self.dim_out, self.dim_out), |acc, k| acc + k * x * k.adjoint()))
    }

    pub fn apply(&self, rho: &DensityOperator) -> Result<DensityOperator> {
        let out = self.apply_matrix(rho.matrix())?;
        if rho.is_normalized() && self.is_trace_preserving() {
            DensityOperator::new(out)
        } else {
            DensityOperator::unnormalized(out)
        }
    }

    /// Heisenberg-picture dual `X ↦ Σ K† X K` (unital when the channel is TP).
    pub fn apply_adjoint(&self, x: &CMatrix) -> Result<CMatrix> {
        if x.shape() != (self.dim_out, self.dim_out) {
            return Err(QspError::dims("adjoint map input has wrong dimension"));
        }
        Ok(self.kraus.iter().fold(CMatrix::zeros(self.dim_in, self.dim_in), |acc, k| acc + k.adjoint() * x * k))
    }

    /// The dual map as a CP map with Kraus operators `{K_i†}`.
    pub fn adjoint_channel(&self) -> KrausChannel {
        Self::cp_map(self.kraus.iter().map(|k| k.adjoint()).collect()).expect("non-empty")
    }

    /// `self ∘ first`.
    pub fn compose(&self, first: &KrausChannel) -> Result<KrausChannel> {
        if first.dim_out != self.dim_in {
            return Err(QspError::dims("composition dimension mismatch"));
        }
        let mut kraus = Vec::with_capacity(self.rank() * first.rank());
        for a in &self.kraus {
            for b in &first.kraus {
                kraus.push(a * b);
            }
        }
        let tp_residual = tp_residual(&kraus);
        Ok(KrausChannel { dim_in: first.dim_in, dim_out: self.dim_out, kraus, tp_residual })
    }

    /// Returns `(p_i, U_i)` when every Kraus operator is a multiple of a unitary.
    pub fn random_unitary_form(&self) -> Option<Vec<(f64, CMatrix)>> {
        if !self.is_square() || !self.is_trace_preserving() {
            return None;
        }
        let d = self.dim_in;
        let mut out = Vec::new();
        for k in &self.kraus {
            let kk = k.adjoint() * k;
            let p = linalg::trace(&kk).re / d as f64;
            if p <= RANK_CUTOFF {
                continue;
            }
            if max_abs_diff(&kk, &(linalg::identity(d) * c(p, 0.0))) > 1e-9 {
                return None;
            }
            out.push((p, k / c(p.sqrt(), 0.0)));
        }
        Some(out)
    }

    /// True when the channel is a single unitary conjugation (Choi rank one, square).
    pub fn is_unitary(&self) -> bool {
        match self.random_unitary_form() {
            Some(parts) => {
                // All components proportional to one unitary.
                let (_, u0) = &parts[0];
                parts.iter().all(|(_, u)| {
                    let overlap = linalg::trace(&(u0.adjoint() * u)).norm() / self.dim_in as f64;
                    (overlap - 1.0).abs() < 1e-9
                })
            }
            None => false,
        }
    }
}

/// `{K_i^t}`. Trace preserving only when the channel is unital.
pub fn transpose_channel(e: &KrausChannel) -> KrausChannel {
    KrausChannel::cp_map(e.kraus.iter().map(|k| k.transpose()).collect()).expect("non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ChoiNormalization {
    /// Trace one.
    #[default]
    State,
    /// Trace `d_in`, i.e. `Σ_ij E(|i⟩⟨j|) ⊗ |i⟩⟨j|`.
    Matrix,
}

impl std::str::FromStr for ChoiNormalization {
    type Err = QspError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state" => Ok(ChoiNormalization::State),
            "matrix" => Ok(ChoiNormalization::Matrix),
            other => Err(QspError::validation(format!("unknown normalization `{other}`"))),
        }
    }
}

/// Bipartite positive operator dual to a channel; output leg (site A) first.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiState {
    d_out: usize,
    d_in: usize,
    matrix: CMatrix,
    normalization: ChoiNormalization,
}

impl ChoiState {
    pub fn new(matrix: CMatrix, d_out: usize, d_in: usize, normalization: ChoiNormalization) -> Result<Self> {
        let n = d_out * d_in;
        if matrix.shape() != (n, n) {
            return Err(QspError::dims(format!("Choi matrix must be {n}x{n}")));
        }
        let (vals, _) = hermitian_eigen(&matrix);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if linalg::hermiticity_defect(&matrix) > 1e-8 || min < -1e-8 {
            return Err(QspError::PsdViolation { min_eigenvalue: min });
        }
        let state = match normalization {
            ChoiNormalization::State => matrix.clone(),
            ChoiNormalization::Matrix => &matrix / c(d_in as f64, 0.0),
        };
        let t = linalg::trace(&state);
        if (t - c(1.0, 0.0)).norm() > 1e-9 {
            return Err(QspError::validation(format!("Choi trace {t} inconsistent with normalization")));
        }
        let marginal = partial_trace(&state, &[d_out, d_in], &[1])?;
        let want = linalg::identity(d_in) / c(d_in as f64, 0.0);
        let defect = max_abs_diff(&marginal, &want);
        if defect > 1e-8 {
            return Err(QspError::validation(format!(
                "input marginal of Choi state is not maximally mixed (defect {defect:e}); map is not TP"
            )));
        }
        Ok(ChoiState { d_out, d_in, matrix, normalization })
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn normalization(&self) -> ChoiNormalization {
        self.normalization
    }

    /// Matrix as stored.
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// Trace-one matrix.
    pub fn state_matrix(&self) -> CMatrix {
        match self.normalization {
            ChoiNormalization::State => self.matrix.clone(),
            ChoiNormalization::Matrix => &self.matrix / c(self.d_in as f64, 0.0),
        }
    }

    /// Trace-`d_in` matrix `Σ_ij E(|i⟩⟨j|) ⊗ |i⟩⟨j|`.
    pub fn matrix_normalized(&self) -> CMatrix {
        match self.normalization {
            ChoiNormalization::State => &self.matrix * c(self.d_in as f64, 0.0),
            ChoiNormalization::Matrix => self.matrix.clone(),
        }
    }

    pub fn with_normalization(&self, normalization: ChoiNormalization) -> ChoiState {
        let matrix = match normalization {
            ChoiNormalization::State => self.state_matrix(),
            ChoiNormalization::Matrix => self.matrix_normalized(),
        };
        ChoiState { d_out: self.d_out, d_in: self.d_in, matrix, normalization }
    }

    /// Number of eigenvalues of the matrix-normalised Choi above [`RANK_CUTOFF`].
    pub fn rank(&self) -> usize {
        hermitian_eigen(&self.matrix_normalized()).0.iter().filter(|&&v| v > RANK_CUTOFF).count()
    }

    /// `E(𝟙) = tr_B C_matrix`.
    pub fn output_of_identity(&self) -> CMatrix {
        partial_trace(&self.matrix_normalized(), &[self.d_out, self.d_in], &[0]).expect("dims consistent")
    }

    pub fn to_json(&self) -> ChoiJson {
        ChoiJson {
            d_out: self.d_out,
            d_in: self.d_in,
            normalization: self.normalization,
            matrix: MatrixJson::from_matrix(&self.matrix),
        }
    }

    pub fn from_json(j: &ChoiJson) -> Result<Self> {
        ChoiState::new(j.matrix.to_matrix()?, j.d_out, j.d_in, j.normalization)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChoiJson {
    pub d_out: usize,
    pub d_in: usize,
    #[serde(default)]
    pub normalization: ChoiNormalization,
    pub matrix: MatrixJson,
}

/// Wire format `{"dim_in": d, "dim_out": d, "kraus": [matrix, ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelJson {
    pub dim_in: usize,
    pub dim_out: usize,
    pub kraus: Vec<MatrixJson>,
}

impl ChannelJson {
    pub fn from_channel(e: &KrausChannel) -> Self {
        ChannelJson { dim_in: e.dim_in, dim_out: e.dim_out, kraus: e.kraus.iter().map(MatrixJson::from_matrix).collect() }
    }

    pub fn to_channel(&self) -> Result<KrausChannel> {
        let kraus = self.kraus.iter().map(|m| m.to_matrix()).collect::<Result<Vec<_>>>()?;
        let ch = KrausChannel::new(kraus)?;
        if ch.dim_in != self.dim_in || ch.dim_out != self.dim_out {
            return Err(QspError::dims(format!(
                "declared {}→{} but Kraus operators are {}x{}",
                self.dim_in, self.dim_out, ch.dim_out, ch.dim_in
            )));
        }
        Ok(ch)
    }
}

/// State-normalised Choi state `(E ⊗ 𝟙)(|ω⟩⟨ω|)`.
pub fn choi_of_channel(e: &KrausChannel) -> Result<ChoiState> {
    if !e.is_trace_preserving() {
        return Err(QspError::validation(format!("channel is not TP (residual {:e})", e.tp_residual)));
    }
    let n = e.dim_out * e.dim_in;
    let mut m = CMatrix::zeros(n, n);
    for k in &e.kraus {
        let v = vec_row_major(k);
        m += outer(&v, &v);
    }
    m /= c(e.dim_in as f64, 0.0);
    ChoiState::new(m, e.dim_out, e.dim_in, ChoiNormalization::State)
}

/// Kraus operators from the spectral decomposition of the Choi matrix.
pub fn kraus_of_choi(choi: &ChoiState) -> Result<KrausChannel> {
    let m = choi.matrix_normalized();
    let (vals, vecs) = hermitian_eigen(&m);
    if let Some(&min) = vals.last() {
        if min < -1e-8 {
            return Err(QspError::PsdViolation { min_eigenvalue: min });
        }
    }
    let kraus: Vec<CMatrix> = vals
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > RANK_CUTOFF)
        .map(|(k, &v)| {
            let col: CVector = vecs.column(k).into_owned() * c(v.sqrt(), 0.0);
            unvec_row_major(&col, choi.d_out, choi.d_in)
        })
        .collect();
    KrausChannel::new(kraus)
}

/// `‖SWAP·C·SWAP − C‖_max`; vanishes when the channel equals its transpose.
pub fn reflection_residual(choi: &ChoiState) -> Result<f64> {
    if choi.d_in != choi.d_out {
        return Err(QspError::Unsupported("reflection residual needs a square channel".into()));
    }
    let s = swap_operator(choi.d_out, choi.d_in);
    let m = choi.state_matrix();
    Ok(max_abs_diff(&(&s * &m * &s), &m))
}

/// A Choi state used as a stored program.
#[derive(Debug, Clone)]
pub struct ProgramState {
    pub choi: ChoiState,
    pub sites: (String, String),
    pub pure: bool,
    /// `E^t = E`.
    pub symmetric: bool,
    /// Pauli byproduct acting on the input leg: the state is `prog(N·P)` for nominal `N`.
    pub pauli_frame: Option<PauliFrame>,
    /// State vector, present for pure programs (row-major `vec(N·P)/√d`).
    pub vector: Option<CVector>,
    /// The gate the program nominally encodes (without the frame).
    pub nominal: Option<CMatrix>,
}

pub fn program_state_of_unitary(u: &UnitaryGate) -> ProgramState {
    ProgramState::from_unitary_matrix(u.matrix(), ("A", "B"))
}

pub fn program_state_of_channel(e: &KrausChannel) -> Result<ProgramState> {
    let choi = choi_of_channel(e)?;
    let pure = choi.rank() == 1;
    let symmetric = e.is_square() && reflection_residual(&choi)? <= 1e-8;
    Ok(ProgramState {
        choi,
        sites: ("A".into(), "B".into()),
        pure,
        symmetric,
        pauli_frame: None,
        vector: None,
        nominal: None,
    })
}

impl ProgramState {
    pub(crate) fn from_unitary_matrix(u: &CMatrix, sites: (&str, &str)) -> ProgramState {
        let d = u.nrows();
        let v = vec_row_major(u) / c((d as f64).sqrt(), 0.0);
        let mut prog = Self::from_vector(v, d, sites);
        prog.symmetric = linalg::symmetry_defect(u) <= 1e-9;
        prog.nominal = Some(u.clone());
        prog
    }

    /// Pure program from a (possibly unnormalised) vector on `d ⊗ d`.
    pub(crate) fn from_vector(v: CVector, d: usize, sites: (&str, &str)) -> ProgramState {
        let n = v.norm();
        let v = v / c(n, 0.0);
        let choi = ChoiState { d_out: d, d_in: d, matrix: outer(&v, &v), normalization: ChoiNormalization::State };
        let op = unvec_row_major(&v, d, d);
        let symmetric = linalg::symmetry_defect(&op) <= 1e-9;
        ProgramState {
            choi,
            sites: (sites.0.to_string(), sites.1.to_string()),
            pure: true,
            symmetric,
            pauli_frame: None,
            vector: Some(v),
            nominal: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.choi.d_in
    }

    /// The operator `M` with state `(M ⊗ 𝟙)|ω⟩`, normalised so `M†M = 𝟙` (pure programs only).
    pub fn operator(&self) -> Option<CMatrix> {
        let d = self.dim();
        self.vector.as_ref().map(|v| unvec_row_major(v, d, d) * c((d as f64).sqrt(), 0.0))
    }

    /// Applies the inverse of the recorded frame physically on the input leg,
    /// returning a program of the nominal gate with an empty frame.
    pub fn frame_corrected(&self) -> ProgramState {
        let Some(frame) = &self.pauli_frame else {
            return self.clone();
        };
        let d = self.dim();
        let v = self.vector.as_ref().expect("frames are only attached to pure programs");
        // (N P ⊗ 𝟙)|ω⟩ = (N ⊗ P^t)|ω⟩, so multiply the input leg by P^* = (P^t)^{-1}.
        let p_conj = frame.operator(d).map(|z| z.conj());
        let corr = linalg::kron(&linalg::identity(d), &p_conj);
        let mut out = Self::from_vector(&corr * v, d, (&self.sites.0, &self.sites.1));
        out.nominal = self.nominal.clone();
        out.symmetric = self.symmetric;
        out
    }

    /// Fidelity between program states (overlap for pure states).
    pub fn fidelity(&self, other: &ProgramState) -> f64 {
        match (&self.vector, &other.vector) {
            (Some(a), Some(b)) => pure_fidelity(a, b),
            _ => fidelity_matrices(&self.choi.state_matrix(), &other.choi.state_matrix()),
        }
    }

    /// Equality up to global phase.
    pub fn approx_eq(&self, other: &ProgramState, phase_tol: f64) -> bool {
        self.fidelity(other) >= 1.0 - phase_tol
    }
}

/// Whether a matrix is unitary within the default tolerance.
pub fn is_unitary_matrix(m: &CMatrix) -> bool {
    unitarity_defect(m) <= 1e-9
}

pub fn channel_from_json_str(s: &str) -> Result<KrausChannel> {
    let j: ChannelJson = serde_json::from_str(s).map_err(|e| QspError::validation(format!("bad channel JSON: {e}")))?;
    j.to_channel()
}

pub fn channel_to_json_value(e: &KrausChannel) -> serde_json::Value {
    serde_json::to_value(ChannelJson::from_channel(e)).expect("serialises")
}
