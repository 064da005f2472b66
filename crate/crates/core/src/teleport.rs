//! Gate teleportation by composing program states.
//!
//! Two pure programs `prog(U)` on `(A, B)` and `prog(V)` on `(C, D)` are joined
//! by an indirect Bell measurement on `(B, C)`. The Bell-basis component of
//! label `k` carries `prog(U·P_k·V)` on `(A, D)`, so the singlet outcome
//! yields `prog(U·V)` directly. In the adjointor sector a rotation with
//! Bell-basis matrix `T(V†)` maps component `j` to `prog(U·V·P_j)`; a final
//! Bell measurement of the pair disposes it and the outcome becomes a Pauli
//! frame on the input leg.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{ProgramState, KrausChannel};
use crate::error::{QspError, Result};
use crate::linalg::{
    self, apply_local, c, contract_local, eig_unitary, identity, kron, max_abs_diff, partial_trace, psd_sqrt,
    symmetry_defect, unitarity_defect, CMatrix, CVector,
};
use crate::opbasis::{affine_rep_matrix, bell_basis_unitary, bell_state, root_of_unity, BasisFlavor, PauliBasis, WeylIndex};
use crate::recovery::{build_recovery_prime_on, conditional_output, outcome_probabilities, povm_recover_sampled};
use crate::states::{DensityOperator, UnitaryGate};

/// Largest register dimension the four-party composition accepts (`D ≤ 12`, i.e. about 2·10⁴ amplitudes).
pub const MAX_PROGRAM_DIM: usize = 12;
const MAX_RESTARTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FramePlacement {
    InputLeg,
}

/// Accumulated Weyl byproduct `ω^phase · X^a Z^b` acting on a program's input leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauliFrame {
    pub d: usize,
    pub index: WeylIndex,
    /// Exponent of `ω = e^{2πi/d}`.
    pub phase: usize,
    pub placement: FramePlacement,
}

impl PauliFrame {
    pub fn identity(d: usize) -> Self {
        PauliFrame { d, index: WeylIndex { a: 0, b: 0 }, phase: 0, placement: FramePlacement::InputLeg }
    }

    pub fn from_linear(d: usize, k: usize) -> Self {
        PauliFrame { index: WeylIndex::from_linear(d, k), ..Self::identity(d) }
    }

    pub fn is_identity(&self) -> bool {
        self.index.a == 0 && self.index.b == 0
    }

    pub fn operator(&self, d: usize) -> CMatrix {
        self.index.matrix(d) * root_of_unity(d, self.phase)
    }

    /// The frame of the operator product `self · other`.
    pub fn then(&self, other: &PauliFrame) -> PauliFrame {
        let (index, extra) = self.index.mul(&other.index, self.d);
        PauliFrame { d: self.d, index, phase: (self.phase + other.phase + extra) % self.d, placement: self.placement }
    }
}

/// One ancilla outcome of the indirect Bell measurement.
#[derive(Debug, Clone)]
pub struct IndirectBellOutcome {
    pub ancilla_bit: u8,
    pub probability: f64,
    /// Normalised post-measurement state on the original registers (zero when `probability` vanishes).
    pub post_state: CVector,
    pub disposal_pauli: Option<WeylIndex>,
}

/// `U_B†` on the pair, a zero-controlled Toffoli onto an ancilla prepared in `|1⟩`,
/// measurement of the ancilla, and `U_B` to restore the pair frame.
///
/// Outcome 0 projects the pair onto `|ω⟩`; outcome 1 projects onto the
/// orthogonal complement without resolving which Bell state it is in.
pub fn indirect_bell_measure(state: &CVector, dims: &[usize], pair: (usize, usize)) -> Result<[IndirectBellOutcome; 2]> {
    let (b, cc) = pair;
    if b >= dims.len() || cc >= dims.len() || b == cc || dims[b] != dims[cc] {
        return Err(QspError::dims("indirect Bell measurement needs two distinct registers of equal dimension"));
    }
    let d = dims[b];
    let ub = bell_basis_unitary(d);
    let mut ext_dims = dims.to_vec();
    ext_dims.push(2);
    let anc = ext_dims.len() - 1;
    let extended = linalg::kron_vec(state, &linalg::basis_vector(2, 1));
    let labelled = apply_local(&extended, &ext_dims, &[b, cc], &ub.adjoint())?;
    let mut toffoli = identity(2 * d * d);
    toffoli[(0, 0)] = c(0.0, 0.0);
    toffoli[(1, 1)] = c(0.0, 0.0);
    toffoli[(0, 1)] = c(1.0, 0.0);
    toffoli[(1, 0)] = c(1.0, 0.0);
    let flipped = apply_local(&labelled, &ext_dims, &[b, cc, anc], &toffoli)?;
    let outcome = |bit: u8| -> Result<IndirectBellOutcome> {
        let branch = contract_local(&flipped, &ext_dims, &[anc], &linalg::basis_vector(2, bit as usize))?;
        let restored = apply_local(&branch, dims, &[b, cc], &ub)?;
        let norm = restored.norm();
        let probability = norm * norm;
        let post_state = if norm > 1e-15 { restored / c(norm, 0.0) } else { restored };
        Ok(IndirectBellOutcome { ancilla_bit: bit, probability, post_state, disposal_pauli: None })
    };
    Ok([outcome(0)?, outcome(1)?])
}

/// Which Bell-basis matrix is applied on the adjointor outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationVariant {
    /// `T(V†)`: Bell component `j` becomes `prog(U·V·P_j)`.
    AffineInverse,
    /// `T(V)`.
    Affine,
    /// `T(V)^t`.
    AffineTranspose,
    /// No rotation.
    Identity,
}

impl RotationVariant {
    pub const ALL: [RotationVariant; 4] =
        [RotationVariant::AffineInverse, RotationVariant::Affine, RotationVariant::AffineTranspose, RotationVariant::Identity];

    fn label_matrix(&self, v: &CMatrix, basis: &PauliBasis) -> Result<CMatrix> {
        Ok(match self {
            RotationVariant::AffineInverse => affine_rep_matrix(&v.adjoint(), basis)?.matrix().clone(),
            RotationVariant::Affine => affine_rep_matrix(v, basis)?.matrix().clone(),
            RotationVariant::AffineTranspose => affine_rep_matrix(v, basis)?.matrix().transpose(),
            RotationVariant::Identity => identity(basis.len()),
        })
    }
}

/// Classical record of one composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeraldRecord {
    pub ancilla_bit: u8,
    /// Linear Weyl index of the disposal outcome (adjointor branch only).
    pub disposal: Option<usize>,
    pub probability: f64,
    pub rotation: Option<RotationVariant>,
}

#[derive(Debug, Clone)]
pub struct ComposeBranch {
    pub herald: HeraldRecord,
    /// Program on `(A, D)` with the accumulated frame recorded.
    pub program: ProgramState,
}

fn pure_parts(p: &ProgramState, name: &str) -> Result<(CVector, CMatrix)> {
    let v = p.vector.clone().ok_or_else(|| {
        QspError::Unsupported(format!("{name} is a mixed program state; composition needs pure programs"))
    })?;
    let nominal = match (&p.nominal, &p.pauli_frame) {
        (Some(n), _) => n.clone(),
        (None, None) => p.operator().expect("pure program"),
        (None, Some(_)) => return Err(QspError::validation(format!("{name} has a frame but no nominal gate"))),
    };
    Ok((v, nominal))
}

/// Every herald branch of composing `prog(U)` (left) with `prog(V)` (right).
///
/// The left program must carry no frame; the right program's frame is propagated.
pub fn compose_branches(prog_u: &ProgramState, prog_v: &ProgramState, variant: RotationVariant) -> Result<Vec<ComposeBranch>> {
    let d = prog_u.dim();
    if prog_v.dim() != d {
        return Err(QspError::dims("program states differ in dimension"));
    }
    if d > MAX_PROGRAM_DIM {
        return Err(QspError::Unsupported(format!("program dimension {d} exceeds the four-party cap {MAX_PROGRAM_DIM}")));
    }
    if prog_u.pauli_frame.as_ref().is_some_and(|f| !f.is_identity() || f.phase != 0) {
        return Err(QspError::Unsupported("the left program must not carry a Pauli frame".into()));
    }
    let (vu, nu) = pure_parts(prog_u, "left program")?;
    let (vv, nv) = pure_parts(prog_v, "right program")?;
    let frame_v = prog_v.pauli_frame.unwrap_or_else(|| PauliFrame::identity(d));
    let nominal = &nu * &nv;
    let dims = [d, d, d, d];
    let psi = linalg::kron_vec(&vu, &vv);
    let [singlet, adjointor] = indirect_bell_measure(&psi, &dims, (1, 2))?;

    let finish = |vec: CVector, frame: PauliFrame| {
        let mut p = ProgramState::from_vector(vec, d, ("A", "D"));
        p.nominal = Some(nominal.clone());
        p.symmetric = symmetry_defect(&nominal) <= 1e-9;
        p.pauli_frame = Some(frame);
        p
    };

    let mut out = Vec::with_capacity(d * d);
    if singlet.probability > 1e-15 {
        let v = contract_local(&singlet.post_state, &dims, &[1, 2], &bell_state(d, 0))?;
        out.push(ComposeBranch {
            herald: HeraldRecord { ancilla_bit: 0, disposal: None, probability: singlet.probability, rotation: None },
            program: finish(v, frame_v),
        });
    }
    if adjointor.probability > 1e-15 {
        let basis = PauliBasis::new(d, BasisFlavor::Weyl)?;
        let ub = bell_basis_unitary(d);
        let r = variant.label_matrix(&nv, &basis)?;
        let pair_op = &ub * r * ub.adjoint();
        let rotated = apply_local(&adjointor.post_state, &dims, &[1, 2], &pair_op)?;
        for j in 0..d * d {
            let v = contract_local(&rotated, &dims, &[1, 2], &bell_state(d, j))?;
            let p = adjointor.probability * v.norm_squared();
            if p <= 1e-15 {
                continue;
            }
            let frame = PauliFrame::from_linear(d, j).then(&frame_v);
            out.push(ComposeBranch {
                herald: HeraldRecord { ancilla_bit: 1, disposal: Some(j), probability: p, rotation: Some(variant) },
                program: finish(v, frame),
            });
        }
    }
    Ok(out)
}

fn sample_branch<R: Rng + ?Sized>(branches: Vec<ComposeBranch>, rng: &mut R) -> ComposeBranch {
    let total: f64 = branches.iter().map(|b| b.herald.probability).sum();
    let mut x = rng.random::<f64>() * total;
    let last = branches.len() - 1;
    for (k, b) in branches.into_iter().enumerate() {
        x -= b.herald.probability;
        if x < 0.0 || k == last {
            return b;
        }
    }
    unreachable!("branch list is never empty")
}

/// Runs the composition once, sampling the herald.
pub fn compose_programs<R: Rng + ?Sized>(
    prog_u: &ProgramState,
    prog_v: &ProgramState,
    rng: &mut R,
) -> Result<(ProgramState, HeraldRecord)> {
    let b = sample_branch(compose_branches(prog_u, prog_v, RotationVariant::AffineInverse)?, rng);
    Ok((b.program, b.herald))
}

/// `U = UL·UR` with both factors symmetric.
#[derive(Debug, Clone)]
pub struct SymmetricFactorization {
    pub ul: UnitaryGate,
    pub ur: UnitaryGate,
}

impl SymmetricFactorization {
    pub fn reconstruction_residual(&self, u: &UnitaryGate) -> f64 {
        max_abs_diff(&(self.ul.matrix() * self.ur.matrix()), u.matrix())
    }

    pub fn symmetry_residual(&self) -> f64 {
        self.ul.symmetry_defect().max(self.ur.symmetry_defect())
    }
}

/// From `U = Q·D·Q†`: `UL = Q·Q^t`, `UR = Q^*·D·Q†`.
pub fn symmetric_factorize(u: &UnitaryGate) -> Result<SymmetricFactorization> {
    let (q, phases) = eig_unitary(u.matrix(), 1e-9)?;
    let ul = &q * q.transpose();
    let ur = q.map(|z| z.conj()) * linalg::diag(&phases) * q.adjoint();
    // Symmetrise away rounding; the exact factors are symmetric.
    let sym = |m: CMatrix| (&m + m.transpose()) * c(0.5, 0.0);
    Ok(SymmetricFactorization { ul: UnitaryGate::with_tolerance(sym(ul), 1e-8)?, ur: UnitaryGate::with_tolerance(sym(ur), 1e-8)? })
}

fn check_symmetric_parts(u: &UnitaryGate, prog_l: &ProgramState, prog_r: &ProgramState) -> Result<()> {
    for (p, name) in [(prog_l, "UL"), (prog_r, "UR")] {
        if !p.symmetric {
            return Err(QspError::validation(format!("program for {name} is not of a symmetric gate")));
        }
    }
    let (Some(l), Some(r)) = (&prog_l.nominal, &prog_r.nominal) else {
        return Err(QspError::validation("factor programs must record their gates"));
    };
    let residual = max_abs_diff(&(l * r), u.matrix());
    if residual > 1e-8 {
        return Err(QspError::validation(format!("UL·UR differs from U by {residual:e}")));
    }
    Ok(())
}

/// Every branch of teleporting `u` from the programs of its symmetric factors.
pub fn deterministic_teleport_branches(
    u: &UnitaryGate,
    prog_l: &ProgramState,
    prog_r: &ProgramState,
) -> Result<Vec<ComposeBranch>> {
    check_symmetric_parts(u, prog_l, prog_r)?;
    compose_branches(prog_l, prog_r, RotationVariant::AffineInverse)
}

pub fn deterministic_teleport<R: Rng + ?Sized>(
    u: &UnitaryGate,
    prog_l: &ProgramState,
    prog_r: &ProgramState,
    rng: &mut R,
) -> Result<(ProgramState, HeraldRecord)> {
    let b = sample_branch(deterministic_teleport_branches(u, prog_l, prog_r)?, rng);
    Ok((b.program, b.herald))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMode {
    /// Split every gate into symmetric factors first (two programs per gate).
    SymmetricSplit,
    /// One program per gate.
    Raw,
    /// Split only gates that are not already symmetric.
    Auto,
}

impl std::str::FromStr for SequenceMode {
    type Err = QspError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" | "symmetric_split" => Ok(SequenceMode::SymmetricSplit),
            "raw" => Ok(SequenceMode::Raw),
            "auto" => Ok(SequenceMode::Auto),
            other => Err(QspError::validation(format!("unknown sequence mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceHerald {
    /// Index of the composition in execution order.
    pub step: usize,
    #[serde(flatten)]
    pub herald: HeraldRecord,
}

#[derive(Debug, Clone)]
pub struct SequenceResult {
    /// Program of `P·∏U_ℓ`, frame recorded but not corrected.
    pub program: ProgramState,
    pub frame: PauliFrame,
    pub log: Vec<SequenceHerald>,
    pub programs_consumed: usize,
}

/// Program factors in matrix-product order.
pub fn sequence_factors(gates: &[UnitaryGate], mode: SequenceMode) -> Result<Vec<CMatrix>> {
    let d = gates.first().ok_or_else(|| QspError::validation("gate sequence is empty"))?.dim();
    if gates.iter().any(|g| g.dim() != d) {
        return Err(QspError::dims("gates in a sequence must share one dimension"));
    }
    let mut out = Vec::new();
    for g in gates {
        match mode {
            SequenceMode::Raw => out.push(g.matrix().clone()),
            SequenceMode::Auto if g.symmetry_defect() <= 1e-9 => out.push(g.matrix().clone()),
            SequenceMode::SymmetricSplit | SequenceMode::Auto => {
                let f = symmetric_factorize(g)?;
                out.push(f.ul.into_matrix());
                out.push(f.ur.into_matrix());
            }
        }
    }
    Ok(out)
}

/// Composes `prog(∏_ℓ U_ℓ)` (product in list order) from per-factor programs,
/// choosing each herald branch with `choose`.
pub fn compose_sequence_with(
    gates: &[UnitaryGate],
    mode: SequenceMode,
    choose: &mut dyn FnMut(&[ComposeBranch]) -> usize,
) -> Result<SequenceResult> {
    let factors = sequence_factors(gates, mode)?;
    let d = factors[0].nrows();
    let (last, rest) = factors.split_last().expect("non-empty");
    let mut acc = ProgramState::from_unitary_matrix(last, ("A", "B"));
    acc.pauli_frame = Some(PauliFrame::identity(d));
    let mut log = Vec::new();
    for (step, f) in rest.iter().rev().enumerate() {
        let left = ProgramState::from_unitary_matrix(f, ("A", "B"));
        let mut branches = compose_branches(&left, &acc, RotationVariant::AffineInverse)?;
        let pick = choose(&branches).min(branches.len() - 1);
        let b = branches.swap_remove(pick);
        log.push(SequenceHerald { step, herald: b.herald });
        acc = b.program;
    }
    let frame = acc.pauli_frame.unwrap_or_else(|| PauliFrame::identity(d));
    Ok(SequenceResult { program: acc, frame, log, programs_consumed: factors.len() })
}

pub fn compose_sequence<R: Rng + ?Sized>(gates: &[UnitaryGate], mode: SequenceMode, rng: &mut R) -> Result<SequenceResult> {
    compose_sequence_with(gates, mode, &mut |branches| {
        let total: f64 = branches.iter().map(|b| b.herald.probability).sum();
        let mut x = rng.random::<f64>() * total;
        for (k, b) in branches.iter().enumerate() {
            x -= b.herald.probability;
            if x < 0.0 {
                return k;
            }
        }
        branches.len() - 1
    })
}

/// One complete herald path through a sequence composition.
#[derive(Debug, Clone)]
pub struct SequencePath {
    pub probability: f64,
    pub heralds: Vec<HeraldRecord>,
    pub program: ProgramState,
}

/// Enumerates every herald path of [`compose_sequence`]; fails when more than
/// `max_paths` paths would be produced.
pub fn enumerate_sequence_paths(gates: &[UnitaryGate], mode: SequenceMode, max_paths: usize) -> Result<Vec<SequencePath>> {
    let factors = sequence_factors(gates, mode)?;
    let d = factors[0].nrows();
    let compositions = factors.len() - 1;
    let count = (d * d).checked_pow(compositions as u32).unwrap_or(usize::MAX);
    if count > max_paths {
        return Err(QspError::Unsupported(format!("{count} herald paths exceed the enumeration limit {max_paths}")));
    }
    let (last, rest) = factors.split_last().expect("non-empty");
    let mut start = ProgramState::from_unitary_matrix(last, ("A", "B"));
    start.pauli_frame = Some(PauliFrame::identity(d));
    let mut paths = vec![SequencePath { probability: 1.0, heralds: Vec::new(), program: start }];
    for f in rest.iter().rev() {
        let left = ProgramState::from_unitary_matrix(f, ("A", "B"));
        let mut next = Vec::with_capacity(paths.len() * d * d);
        for p in &paths {
            for b in compose_branches(&left, &p.program, RotationVariant::AffineInverse)? {
                let mut heralds = p.heralds.clone();
                heralds.push(b.herald.clone());
                next.push(SequencePath { probability: p.probability * b.herald.probability, heralds, program: b.program });
            }
        }
        paths = next;
    }
    Ok(paths)
}

/// Halmos dilation `[[K, √(𝟙−KK†)], [√(𝟙−K†K), −K†]]` of a contraction.
pub fn contraction_dilation(k: &CMatrix) -> Result<CMatrix> {
    let d = k.nrows();
    if k.ncols() != d {
        return Err(QspError::Unsupported("dilation needs square Kraus operators".into()));
    }
    let top = psd_sqrt(&(identity(d) - k * k.adjoint()), 1e-8)?;
    let bottom = psd_sqrt(&(identity(d) - k.adjoint() * k), 1e-8)?;
    let mut u = CMatrix::zeros(2 * d, 2 * d);
    u.view_mut((0, 0), (d, d)).copy_from(k);
    u.view_mut((0, d), (d, d)).copy_from(&top);
    u.view_mut((d, 0), (d, d)).copy_from(&bottom);
    u.view_mut((d, d), (d, d)).copy_from(&(-k.adjoint()));
    Ok(u)
}

fn block_diagonal(blocks: &[CMatrix]) -> CMatrix {
    blocks.iter().skip(1).fold(blocks[0].clone(), |acc, b| linalg::direct_sum(&acc, b))
}

/// Kraus operators embedded as corners of `2d`-dimensional unitaries, joined by a control register.
#[derive(Debug, Clone)]
pub struct DirectSumDilation {
    pub d: usize,
    pub unitaries: Vec<UnitaryGate>,
    /// `Σ_i |i⟩⟨i| ⊗ U_{K_i}` on `r·2d`.
    pub controlled: UnitaryGate,
    pub ancilla_dim: usize,
}

pub fn direct_sum_dilate(e: &KrausChannel) -> Result<DirectSumDilation> {
    if !e.is_square() {
        return Err(QspError::Unsupported("direct-sum dilation needs a square channel".into()));
    }
    let unitaries = e
        .kraus()
        .iter()
        .map(|k| UnitaryGate::new(contraction_dilation(k)?))
        .collect::<Result<Vec<_>>>()?;
    let blocks: Vec<CMatrix> = unitaries.iter().map(|u| u.matrix().clone()).collect();
    let controlled = UnitaryGate::new(block_diagonal(&blocks))?;
    Ok(DirectSumDilation { d: e.dim_in(), ancilla_dim: unitaries.len(), unitaries, controlled })
}

impl DirectSumDilation {
    /// `|e⟩⟨e| ⊗ (ρ ⊕ 0)` with `|e⟩ = Σ_i |i⟩/√r`.
    pub fn embedded_input(&self, rho: &DensityOperator) -> CMatrix {
        let r = self.ancilla_dim;
        let e = CMatrix::from_element(r, r, c(1.0 / r as f64, 0.0));
        kron(&e, &crate::recovery::embed_state(rho))
    }

    /// `H_S` block of `tr_a Ŭ(|e⟩⟨e| ⊗ (ρ ⊕ 0))Ŭ†`, equal to `E(ρ)/r`.
    pub fn restricted_output(&self, rho: &DensityOperator) -> Result<CMatrix> {
        let u = self.controlled.matrix();
        let out = u * self.embedded_input(rho) * u.adjoint();
        self.restrict(&out)
    }

    /// Traces the control register and keeps the top-left `d×d` block.
    pub fn restrict(&self, m: &CMatrix) -> Result<CMatrix> {
        let d = self.d;
        let reduced = partial_trace(m, &[self.ancilla_dim, 2 * d], &[1])?;
        Ok(reduced.view((0, 0), (d, d)).into_owned())
    }
}

/// Bookkeeping of a channel teleportation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelTeleportLog {
    /// `"random_unitary"` or `"direct_sum"`.
    pub path: String,
    pub compose_herald: Vec<HeraldRecord>,
    pub recovery_branch: usize,
    pub restarts: usize,
    pub choi_copies: usize,
    pub program_states_consumed: usize,
    /// Outcome-2 probability of the recovery instrument on the embedded input.
    pub embedded_restart_probability: f64,
    pub dilation_unitarity_defect: f64,
    pub instrument_tp_residual: f64,
}

struct ControlledProgram {
    program: ProgramState,
    herald: HeraldRecord,
}

/// Teleports a controlled gate `Σ|i⟩⟨i|⊗U_i` from two programs of its controlled symmetric factors.
fn teleport_controlled<R: Rng + ?Sized>(blocks: &[CMatrix], rng: &mut R) -> Result<ControlledProgram> {
    let mut ls = Vec::new();
    let mut rs = Vec::new();
    for b in blocks {
        let f = symmetric_factorize(&UnitaryGate::with_tolerance(b.clone(), 1e-8)?)?;
        ls.push(f.ul.into_matrix());
        rs.push(f.ur.into_matrix());
    }
    let l = ProgramState::from_unitary_matrix(&block_diagonal(&ls), ("A", "B"));
    let r = ProgramState::from_unitary_matrix(&block_diagonal(&rs), ("C", "D"));
    let (prog, herald) = compose_programs(&l, &r, rng)?;
    Ok(ControlledProgram { program: prog.frame_corrected(), herald })
}

/// End-to-end teleportation of a channel followed by recovery on `ρ`.
pub fn teleport_channel<R: Rng + ?Sized>(
    e: &KrausChannel,
    rho: &DensityOperator,
    rng: &mut R,
) -> Result<(DensityOperator, ChannelTeleportLog)> {
    let d = e.dim_in();
    if !e.is_square() || d > 3 || e.rank() > 2 || rho.dim() != d {
        return Err(QspError::Unsupported(format!(
            "channel teleportation is limited to square channels with d ≤ 3 and rank ≤ 2 (got d = {d}, rank {})",
            e.rank()
        )));
    }
    if let Some(parts) = e.random_unitary_form() {
        let r = parts.len();
        let blocks: Vec<CMatrix> = parts.iter().map(|(_, u)| u.clone()).collect();
        let cp = teleport_controlled(&blocks, rng)?;
        let amp = CVector::from_iterator(r, parts.iter().map(|(p, _)| c(p.sqrt(), 0.0)));
        let tau = DensityOperator::new(kron(&linalg::outer(&amp, &amp), rho.matrix()))?;
        let rec = povm_recover_sampled(&cp.program.choi, None, &tau, rng)?;
        let out = partial_trace(&rec.output, &[r, d], &[1])?;
        let log = ChannelTeleportLog {
            path: "random_unitary".into(),
            compose_herald: vec![cp.herald],
            recovery_branch: rec.herald.branch,
            restarts: 0,
            choi_copies: rec.copies_used,
            program_states_consumed: 2 * rec.copies_used,
            embedded_restart_probability: 0.0,
            dilation_unitarity_defect: unitarity_defect(&block_diagonal(&blocks)),
            instrument_tp_residual: 0.0,
        };
        return Ok((DensityOperator::new(normalized(out)?)?, log));
    }

    let dil = direct_sum_dilate(e)?;
    let r = dil.ancilla_dim;
    let total = 2 * d * r;
    let blocks: Vec<CMatrix> = dil.unitaries.iter().map(|u| u.matrix().clone()).collect();
    let tau = dil.embedded_input(rho);
    let subspace: Vec<usize> = (0..r).flat_map(|i| (0..d).map(move |j| i * 2 * d + j)).collect();
    let tau_sub = kron(&CMatrix::from_element(r, r, c(1.0 / r as f64, 0.0)), rho.matrix());
    let instrument = build_recovery_prime_on(&tau_sub.transpose(), &subspace, total)?;
    let embedded_restart_probability = outcome_probabilities(&instrument, &tau)[2];
    let keep = CMatrix::from_fn(total, total, |i, j| if i == j && subspace.contains(&i) { c(1.0, 0.0) } else { c(0.0, 0.0) });

    let mut herald = Vec::new();
    let mut restarts = 0;
    let mut copies = 0;
    // Measure the instrument effects on the input leg of fresh copies until outcome 0 or 1.
    let (branch, first) = loop {
        if restarts > MAX_RESTARTS {
            return Err(QspError::HeraldedFailure("recovery kept restarting".into()));
        }
        let cp = teleport_controlled(&blocks, rng)?;
        herald.push(cp.herald);
        copies += 1;
        let choi = cp.program.choi;
        // Effects K†K are τ^t, P − τ^t and 𝟙 − P; the conditional outputs are E'(F^t)/D.
        let p0 = linalg::trace(&tau).re / total as f64;
        let p1 = linalg::trace(&(&keep - &tau)).re / total as f64;
        let x = rng.random::<f64>();
        if x < p0 {
            break (0, choi);
        } else if x < p0 + p1 {
            break (1, choi);
        }
        restarts += 1;
    };
    let output = if branch == 0 {
        conditional_output(&first, &tau)?
    } else {
        let complement = conditional_output(&first, &(&keep - &tau))?;
        // E'(P) from a second copy, measured with {P, 𝟙 − P}; the second outcome restarts that copy.
        let second = loop {
            if restarts > MAX_RESTARTS {
                return Err(QspError::HeraldedFailure("correction copy kept restarting".into()));
            }
            let cp = teleport_controlled(&blocks, rng)?;
            herald.push(cp.herald);
            copies += 1;
            if rng.random::<f64>() < (d * r) as f64 / total as f64 {
                break cp.program.choi;
            }
            restarts += 1;
        };
        conditional_output(&second, &keep)? - complement
    };
    let restricted = dil.restrict(&output)?;
    let log = ChannelTeleportLog {
        path: "direct_sum".into(),
        compose_herald: herald,
        recovery_branch: branch,
        restarts,
        choi_copies: copies,
        program_states_consumed: 2 * copies,
        embedded_restart_probability,
        dilation_unitarity_defect: unitarity_defect(dil.controlled.matrix()),
        instrument_tp_residual: instrument.tp_residual(),
    };
    Ok((DensityOperator::new(normalized(restricted)?)?, log))
}

fn normalized(m: CMatrix) -> Result<CMatrix> {
    let t = linalg::trace(&m).re;
    if t <= 1e-12 {
        return Err(QspError::Numerical("recovered output has vanishing trace".into()));
    }
    let m = &m / c(t, 0.0);
    Ok((&m + m.adjoint()) * c(0.5, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::program_state_of_unitary;
    use crate::gates;
    use crate::random::{haar_unitary, random_density, random_kraus, rng_from_seed};

    fn haar(d: usize, seed: u64) -> UnitaryGate {
        UnitaryGate::new(haar_unitary(d, &mut rng_from_seed(seed))).unwrap()
    }

    fn target(m: &CMatrix) -> ProgramState {
        ProgramState::from_unitary_matrix(m, ("A", "D"))
    }

    #[test]
    fn frame_arithmetic_matches_matrices() {
        for d in 2..5 {
            for j in 0..d * d {
                for k in 0..d * d {
                    let a = PauliFrame { phase: 1 % d, ..PauliFrame::from_linear(d, j) };
                    let b = PauliFrame::from_linear(d, k);
                    let prod = a.then(&b);
                    assert!(max_abs_diff(&prod.operator(d), &(a.operator(d) * b.operator(d))) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn indirect_measurement_on_bell_states() {
        for d in 2..4 {
            let dims = [d, d];
            let out = indirect_bell_measure(&bell_state(d, 0), &dims, (0, 1)).unwrap();
            assert!((out[0].probability - 1.0).abs() < 1e-12);
            let out = indirect_bell_measure(&bell_state(d, 1), &dims, (0, 1)).unwrap();
            assert!((out[1].probability - 1.0).abs() < 1e-12);
            assert!((&out[1].post_state - bell_state(d, 1)).norm() < 1e-12);
        }
    }

    #[test]
    fn singlet_probability_on_fresh_programs() {
        for d in 2..4 {
            let u = program_state_of_unitary(&haar(d, 1));
            let v = program_state_of_unitary(&haar(d, 2));
            let psi = linalg::kron_vec(u.vector.as_ref().unwrap(), v.vector.as_ref().unwrap());
            let out = indirect_bell_measure(&psi, &[d; 4], (1, 2)).unwrap();
            assert!((out[0].probability - 1.0 / (d * d) as f64).abs() <= 1e-12);
            assert!((out[0].probability + out[1].probability - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn entanglement_swapping_of_identity_programs() {
        let id = program_state_of_unitary(&UnitaryGate::identity(2));
        let b = compose_branches(&id, &id, RotationVariant::AffineInverse).unwrap();
        assert_eq!(b[0].herald.ancilla_bit, 0);
        assert!(pure_fidelity_vec(&b[0].program, &linalg::omega(2)) > 1.0 - 1e-12);
    }

    fn pure_fidelity_vec(p: &ProgramState, v: &CVector) -> f64 {
        crate::states::pure_fidelity(p.vector.as_ref().unwrap(), v)
    }

    #[test]
    fn every_branch_gives_product_after_frame_correction() {
        for seed in 0..20u64 {
            let d = 2 + (seed as usize) % 2;
            let u = haar(d, 10 + seed);
            let v = haar(d, 100 + seed);
            let want = target(&(u.matrix() * v.matrix()));
            let branches =
                compose_branches(&program_state_of_unitary(&u), &program_state_of_unitary(&v), RotationVariant::AffineInverse)
                    .unwrap();
            let total: f64 = branches.iter().map(|b| b.herald.probability).sum();
            assert!((total - 1.0).abs() <= 1e-9);
            for b in &branches {
                assert!((b.herald.probability - 1.0 / (d * d) as f64).abs() <= 1e-9);
                assert!(b.program.frame_corrected().fidelity(&want) >= 1.0 - 1e-9);
            }
            // The uncorrected singlet branch is already the product.
            assert!(branches[0].program.fidelity(&want) >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn rotation_commutes_with_singlet_projector() {
        let basis = PauliBasis::new(3, BasisFlavor::Weyl).unwrap();
        let v = haar(3, 5);
        let r = RotationVariant::AffineInverse.label_matrix(v.matrix(), &basis).unwrap();
        let proj = linalg::projector(9, 0);
        assert!(linalg::max_abs(&linalg::commutator(&r, &proj)) <= 1e-9);
    }

    #[test]
    fn symmetric_factorization_residuals() {
        for seed in 0..60u64 {
            let d = 2 + (seed as usize) % 3;
            let u = haar(d, 200 + seed);
            let f = symmetric_factorize(&u).unwrap();
            assert!(f.reconstruction_residual(&u) <= 1e-8);
            assert!(f.symmetry_residual() <= 1e-8);
        }
        let zi = UnitaryGate::new(kron(gates::z().matrix(), &identity(2))).unwrap();
        let f = symmetric_factorize(&zi).unwrap();
        assert!(f.reconstruction_residual(&zi) <= 1e-8 && f.symmetry_residual() <= 1e-8);
        let f = symmetric_factorize(&UnitaryGate::identity(3)).unwrap();
        assert!(f.reconstruction_residual(&UnitaryGate::identity(3)) <= 1e-8);
    }

    #[test]
    fn t_gate_teleports_on_every_branch() {
        let t = gates::t();
        let f = symmetric_factorize(&t).unwrap();
        let l = program_state_of_unitary(&f.ul);
        let r = program_state_of_unitary(&f.ur);
        let want = program_state_of_unitary(&t);
        for b in deterministic_teleport_branches(&t, &l, &r).unwrap() {
            assert!(b.program.frame_corrected().fidelity(&want) >= 1.0 - 1e-9);
        }
        let bad = program_state_of_unitary(&haar(2, 3));
        assert!(deterministic_teleport_branches(&t, &bad, &r).is_err());
    }

    #[test]
    fn sequence_h_s_h() {
        let gates_list = [gates::h(), gates::s(), gates::h()];
        let prod = gates::h().matrix() * gates::s().matrix() * gates::h().matrix();
        let want = target(&prod);
        let mut rng = rng_from_seed(8);
        for mode in [SequenceMode::SymmetricSplit, SequenceMode::Raw] {
            for _ in 0..10 {
                let res = compose_sequence(&gates_list, mode, &mut rng).unwrap();
                assert!(res.program.frame_corrected().fidelity(&want) >= 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn enumerated_paths_cover_all_probability() {
        let gl = [gates::h(), gates::t(), gates::h()];
        let paths = enumerate_sequence_paths(&gl, SequenceMode::Raw, 1000).unwrap();
        assert_eq!(paths.len(), 16);
        let total: f64 = paths.iter().map(|p| p.probability).sum();
        assert!((total - 1.0).abs() <= 1e-9);
        let want = target(&(gates::h().matrix() * gates::t().matrix() * gates::h().matrix()));
        for p in &paths {
            assert!(p.program.frame_corrected().fidelity(&want) >= 1.0 - 1e-9);
        }
        assert!(enumerate_sequence_paths(&gl, SequenceMode::SymmetricSplit, 1000).is_err());
    }

    #[test]
    fn single_gate_sequence_matches_deterministic_teleport() {
        let t = gates::t();
        let res = compose_sequence_with(std::slice::from_ref(&t), SequenceMode::SymmetricSplit, &mut |_| 0).unwrap();
        let f = symmetric_factorize(&t).unwrap();
        let b = deterministic_teleport_branches(&t, &program_state_of_unitary(&f.ul), &program_state_of_unitary(&f.ur))
            .unwrap();
        assert!(res.program.fidelity(&b[0].program) >= 1.0 - 1e-12);
        assert_eq!(res.programs_consumed, 2);
    }

    #[test]
    fn dilation_blocks() {
        let u = gates::h();
        let dil = direct_sum_dilate(&KrausChannel::unitary(&u)).unwrap();
        let want = linalg::direct_sum(u.matrix(), &(-u.matrix().adjoint()));
        assert!(max_abs_diff(dil.unitaries[0].matrix(), &want) < 1e-12);
        let mut rng = rng_from_seed(9);
        for _ in 0..50 {
            let e = KrausChannel::new(random_kraus(2, 2, 2, &mut rng)).unwrap();
            let dil = direct_sum_dilate(&e).unwrap();
            assert!(unitarity_defect(dil.controlled.matrix()) <= 1e-9);
            for (u, k) in dil.unitaries.iter().zip(e.kraus()) {
                assert!(max_abs_diff(&u.matrix().view((0, 0), (2, 2)).into_owned(), k) < 1e-12);
            }
            let rho = DensityOperator::new(random_density(2, 2, &mut rng)).unwrap();
            let got = dil.restricted_output(&rho).unwrap() * c(2.0, 0.0);
            assert!(max_abs_diff(&got, &e.apply_matrix(rho.matrix()).unwrap()) <= 1e-8);
        }
    }

    #[test]
    fn channel_teleportation_matches_direct_application() {
        let mut rng = rng_from_seed(10);
        let ad = KrausChannel::amplitude_damping(0.5).unwrap();
        let cases = vec![
            ad,
            KrausChannel::unitary(&gates::h()),
            KrausChannel::new(vec![gates::x().matrix() * c(0.6, 0.0), gates::z().matrix() * c(0.8, 0.0)]).unwrap(),
            KrausChannel::new(random_kraus(2, 2, 2, &mut rng)).unwrap(),
            KrausChannel::new(random_kraus(3, 3, 2, &mut rng)).unwrap(),
        ];
        for e in cases {
            for _ in 0..4 {
                let rho = DensityOperator::new(random_density(e.dim_in(), 2, &mut rng)).unwrap();
                let (out, log) = teleport_channel(&e, &rho, &mut rng).unwrap();
                let want = e.apply_matrix(rho.matrix()).unwrap();
                assert!(max_abs_diff(out.matrix(), &want) <= 1e-7, "{log:?}");
                assert!(log.embedded_restart_probability.abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn random_unitary_channels_skip_the_direct_sum() {
        let mut rng = rng_from_seed(11);
        let e = KrausChannel::unitary(&gates::t());
        let rho = DensityOperator::new(random_density(2, 2, &mut rng)).unwrap();
        let (_, log) = teleport_channel(&e, &rho, &mut rng).unwrap();
        assert_eq!(log.path, "random_unitary");
        assert_eq!(log.restarts, 0);
    }
}
