//! Generalized Pauli operator bases, affine representations of gates, and the
//! Kraus-tensor symmetry check `Σ_j U_ij K_j = W K_i V`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{QspError, Result};
use crate::linalg::{c, max_abs_diff, unitarity_defect, CMatrix, ONE, ZERO};
use crate::states::UnitaryGate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisFlavor {
    /// Heisenberg-Weyl operators `X^a Z^b`, linear index `a·d + b`.
    Weyl,
    /// Hermitian Gell-Mann matrices rescaled to `tr(P†P) = d`.
    GellMann,
}

impl std::str::FromStr for BasisFlavor {
    type Err = QspError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weyl" => Ok(BasisFlavor::Weyl),
            "gellmann" | "gell-mann" => Ok(BasisFlavor::GellMann),
            other => Err(QspError::validation(format!("unknown basis flavor `{other}`"))),
        }
    }
}

/// Ordered operator basis of `d×d` matrices with `P_0 = 𝟙` and `tr(P_i†P_j) = d·δ_ij`.
#[derive(Debug, Clone)]
pub struct PauliBasis {
    d: usize,
    flavor: BasisFlavor,
    ops: Vec<CMatrix>,
}

/// Shift `X|j⟩ = |j+1 mod d⟩`.
pub fn weyl_x(d: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    for j in 0..d {
        m[((j + 1) % d, j)] = ONE;
    }
    m
}

/// Clock `Z|j⟩ = e^{2πij/d}|j⟩`.
pub fn weyl_z(d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |i, j| if i == j { root_of_unity(d, i) } else { ZERO })
}

pub(crate) fn root_of_unity(d: usize, k: usize) -> num_complex::Complex64 {
    let k = k % d;
    if (4 * k).is_multiple_of(d) {
        // Exact quarter turns keep qubit Paulis integral.
        return [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)][4 * k / d];
    }
    let theta = 2.0 * PI * ((k % d) as f64) / d as f64;
    c(theta.cos(), theta.sin())
}

/// `X^a Z^b`, built directly as a monomial matrix.
pub fn weyl_op(d: usize, a: usize, b: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    for j in 0..d {
        m[((j + a) % d, j)] = root_of_unity(d, b * j);
    }
    m
}

fn gell_mann(d: usize) -> Vec<CMatrix> {
    let mut ops = vec![CMatrix::identity(d, d)];
    // Standard generators have tr(λ²) = 2; rescale to d.
    let scale = c((d as f64 / 2.0).sqrt(), 0.0);
    for j in 0..d {
        for k in (j + 1)..d {
            let mut m = CMatrix::zeros(d, d);
            m[(j, k)] = ONE;
            m[(k, j)] = ONE;
            ops.push(m * scale);
        }
    }
    for j in 0..d {
        for k in (j + 1)..d {
            let mut m = CMatrix::zeros(d, d);
            m[(j, k)] = c(0.0, -1.0);
            m[(k, j)] = c(0.0, 1.0);
            ops.push(m * scale);
        }
    }
    for l in 1..d {
        let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut m = CMatrix::zeros(d, d);
        for j in 0..l {
            m[(j, j)] = c(norm, 0.0);
        }
        m[(l, l)] = c(-(l as f64) * norm, 0.0);
        ops.push(m * scale);
    }
    ops
}

impl PauliBasis {
    pub fn new(d: usize, flavor: BasisFlavor) -> Result<Self> {
        if d < 2 {
            return Err(QspError::validation(format!("operator basis needs d ≥ 2, got {d}")));
        }
        let ops = match flavor {
            BasisFlavor::Weyl => {
                let mut ops = Vec::with_capacity(d * d);
                for a in 0..d {
                    for b in 0..d {
                        ops.push(weyl_op(d, a, b));
                    }
                }
                ops
            }
            BasisFlavor::GellMann => gell_mann(d),
        };
        Ok(PauliBasis { d, flavor, ops })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn flavor(&self) -> BasisFlavor {
        self.flavor
    }

    pub fn ops(&self) -> &[CMatrix] {
        &self.ops
    }

    pub fn op(&self, i: usize) -> &CMatrix {
        &self.ops[i]
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Gram matrix `G_ij = tr(P_i† P_j)`.
    pub fn gram(&self) -> CMatrix {
        let n = self.ops.len();
        CMatrix::from_fn(n, n, |i, j| trace_product(&self.ops[i].adjoint(), &self.ops[j]))
    }
}

/// Basis of `n`-fold tensor products of a local basis, e.g. multi-qubit Pauli strings.
///
/// Ordering is lexicographic in the local indices with the first factor slowest,
/// so index 0 is still the identity.
pub fn tensor_basis(local: usize, n: usize, flavor: BasisFlavor) -> Result<PauliBasis> {
    if n == 0 {
        return Err(QspError::validation("tensor basis needs at least one factor"));
    }
    let base = PauliBasis::new(local, flavor)?;
    let mut ops = base.ops.clone();
    for _ in 1..n {
        ops = ops.iter().flat_map(|a| base.ops.iter().map(move |b| crate::linalg::kron(a, b))).collect();
    }
    Ok(PauliBasis { d: local.pow(n as u32), flavor, ops })
}

pub fn build_basis(d: usize, flavor: BasisFlavor) -> Result<PauliBasis> {
    PauliBasis::new(d, flavor)
}

/// `tr(A·B)` without forming the product.
pub(crate) fn trace_product(a: &CMatrix, b: &CMatrix) -> num_complex::Complex64 {
    let mut acc = ZERO;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Matrix `T` with `Σ_j T_ij P_j = V† P_i V`, i.e. `T_ij = tr(P_i V P_j† V†)/d`.
#[derive(Debug, Clone)]
pub struct AffineRep {
    d: usize,
    flavor: BasisFlavor,
    matrix: CMatrix,
}

impl AffineRep {
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn flavor(&self) -> BasisFlavor {
        self.flavor
    }

    pub fn unitarity_defect(&self) -> f64 {
        unitarity_defect(&self.matrix)
    }

    /// Largest violation of the identity-sector block structure.
    pub fn block_defect(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut worst = (self.matrix[(0, 0)] - ONE).norm();
        for k in 1..n {
            worst = worst.max(self.matrix[(0, k)].norm()).max(self.matrix[(k, 0)].norm());
        }
        worst
    }

    pub fn is_generalized_permutation(&self) -> bool {
        is_generalized_permutation(self)
    }
}

pub fn affine_rep(v: &UnitaryGate, basis: &PauliBasis) -> Result<AffineRep> {
    affine_rep_matrix(v.matrix(), basis)
}

pub(crate) fn affine_rep_matrix(v: &CMatrix, basis: &PauliBasis) -> Result<AffineRep> {
    let d = basis.dim();
    if v.nrows() != d || v.ncols() != d {
        return Err(QspError::dims(format!("gate is {}x{}, basis is for d = {d}", v.nrows(), v.ncols())));
    }
    let n = basis.len();
    let vd = v.adjoint();
    let conj: Vec<CMatrix> = basis.ops().iter().map(|p| v * p.adjoint() * &vd).collect();
    let inv_d = 1.0 / d as f64;
    let matrix = CMatrix::from_fn(n, n, |i, j| trace_product(basis.op(i), &conj[j]) * inv_d);
    Ok(AffineRep { d, flavor: basis.flavor(), matrix })
}

/// Residual of `Σ_j T_ij P_j = V† P_i V`, maximised over `i`.
pub fn affine_residual(v: &CMatrix, basis: &PauliBasis, rep: &AffineRep) -> f64 {
    let vd = v.adjoint();
    (0..basis.len())
        .map(|i| {
            let lhs = basis
                .ops()
                .iter()
                .enumerate()
                .fold(CMatrix::zeros(basis.dim(), basis.dim()), |acc, (j, p)| acc + p * rep.matrix[(i, j)]);
            max_abs_diff(&lhs, &(&vd * basis.op(i) * v))
        })
        .fold(0.0, f64::max)
}

/// True iff every row and every column has exactly one unit-modulus entry and
/// all other entries vanish (tolerance `1e-9`).
pub fn is_generalized_permutation(t: &AffineRep) -> bool {
    const TOL: f64 = 1e-9;
    let m = &t.matrix;
    let n = m.nrows();
    let line_ok = |entries: &mut dyn Iterator<Item = f64>| {
        let mut units = 0;
        for a in entries {
            if (a - 1.0).abs() <= TOL {
                units += 1;
            } else if a > TOL {
                return false;
            }
        }
        units == 1
    };
    (0..n).all(|i| line_ok(&mut (0..n).map(|j| m[(i, j)].norm())))
        && (0..n).all(|j| line_ok(&mut (0..n).map(|i| m[(i, j)].norm())))
}

/// Representation data `(U, V, W)` for one group element.
#[derive(Debug, Clone)]
pub struct SymmetrySpec {
    /// Mixing matrix over Kraus indices.
    pub mixing: CMatrix,
    /// Acts on the input (left) leg.
    pub input: UnitaryGate,
    /// Acts on the output (right) leg.
    pub output: UnitaryGate,
}

impl SymmetrySpec {
    pub fn new(mixing: CMatrix, input: UnitaryGate, output: UnitaryGate) -> Result<Self> {
        let defect = unitarity_defect(&mixing);
        if defect > 1e-9 {
            return Err(QspError::validation(format!("mixing matrix not unitary (defect {defect:e})")));
        }
        Ok(SymmetrySpec { mixing, input, output })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryCheck {
    /// `max_i ‖Σ_j U_ij K_j − W K_i V‖_max`.
    pub residual: f64,
    /// Whether `W = V†`, i.e. the symmetry survives composition.
    pub global: bool,
}

pub fn check_symmetry(kraus: &[CMatrix], spec: &SymmetrySpec) -> Result<SymmetryCheck> {
    let first = kraus.first().ok_or_else(|| QspError::validation("empty Kraus list"))?;
    let shape = first.shape();
    if kraus.iter().any(|k| k.shape() != shape) {
        return Err(QspError::dims("Kraus operators have differing shapes"));
    }
    let r = kraus.len();
    if spec.mixing.shape() != (r, r) {
        return Err(QspError::dims(format!("mixing matrix must be {r}x{r}")));
    }
    if spec.input.dim() != shape.1 || spec.output.dim() != shape.0 {
        return Err(QspError::dims("representation dims do not match Kraus shape"));
    }
    let mut residual: f64 = 0.0;
    for i in 0..r {
        let mixed = kraus
            .iter()
            .enumerate()
            .fold(CMatrix::zeros(shape.0, shape.1), |acc, (j, k)| acc + k * spec.mixing[(i, j)]);
        let moved = spec.output.matrix() * &kraus[i] * spec.input.matrix();
        residual = residual.max(max_abs_diff(&mixed, &moved));
    }
    let global = spec.output.dim() == spec.input.dim()
        && max_abs_diff(spec.output.matrix(), &spec.input.matrix().adjoint()) <= 1e-9;
    Ok(SymmetryCheck { residual, global })
}

/// Index of a Weyl operator `X^a Z^b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeylIndex {
    pub a: usize,
    pub b: usize,
}

impl WeylIndex {
    pub fn from_linear(d: usize, k: usize) -> Self {
        WeylIndex { a: k / d, b: k % d }
    }

    pub fn linear(&self, d: usize) -> usize {
        self.a * d + self.b
    }

    pub fn matrix(&self, d: usize) -> CMatrix {
        weyl_op(d, self.a, self.b)
    }

    /// `X^a Z^b · X^c Z^e = ω^{b·c} X^{a+c} Z^{b+e}`; returns the product index and the phase exponent.
    pub fn mul(&self, other: &WeylIndex, d: usize) -> (WeylIndex, usize) {
        let phase = (self.b * other.a) % d;
        (WeylIndex { a: (self.a + other.a) % d, b: (self.b + other.b) % d }, phase)
    }
}

/// Generalised Bell vector `|β_k⟩ = (𝟙 ⊗ P_k†)|ω⟩` with `P_k` the Weyl operator of linear index `k`.
pub fn bell_state(d: usize, k: usize) -> crate::linalg::CVector {
    let p = WeylIndex::from_linear(d, k).matrix(d);
    crate::linalg::kron(&crate::linalg::identity(d), &p.adjoint()) * crate::linalg::omega(d)
}

/// Unitary whose `k`-th column is `|β_k⟩`; its adjoint maps the Bell basis to the computational basis.
pub fn bell_basis_unitary(d: usize) -> CMatrix {
    let mut u = CMatrix::zeros(d * d, d * d);
    for k in 0..d * d {
        u.set_column(k, &bell_state(d, k));
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates;
    use crate::linalg::identity;
    use crate::random::{haar_unitary, rng_from_seed};

    #[test]
    fn qubit_weyl_basis_order() {
        let b = build_basis(2, BasisFlavor::Weyl).unwrap();
        assert_eq!(b.op(0), &identity(2));
        assert_eq!(b.op(1), gates::z().matrix());
        assert_eq!(b.op(2), gates::x().matrix());
        assert_eq!(b.op(3), &(gates::x().matrix() * gates::z().matrix()));
    }

    #[test]
    fn gram_matrices_are_scaled_identity() {
        for d in 2..=5 {
            for flavor in [BasisFlavor::Weyl, BasisFlavor::GellMann] {
                let b = build_basis(d, flavor).unwrap();
                assert_eq!(b.len(), d * d);
                assert_eq!(b.op(0), &identity(d));
                let want = identity(d * d) * c(d as f64, 0.0);
                assert!(max_abs_diff(&b.gram(), &want) < 1e-9, "d={d} {flavor:?}");
                if flavor == BasisFlavor::GellMann {
                    for p in &b.ops()[1..] {
                        assert!(crate::linalg::hermiticity_defect(p) < 1e-12);
                        assert!(crate::linalg::trace(p).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_trivial_dimension() {
        assert!(build_basis(1, BasisFlavor::Weyl).is_err());
    }

    #[test]
    fn weyl_definitions() {
        for d in 2..5 {
            assert_eq!(weyl_op(d, 1, 0), weyl_x(d));
            assert!(max_abs_diff(&weyl_op(d, 0, 1), &weyl_z(d)) < 1e-15);
            let xz = weyl_x(d) * weyl_z(d);
            assert!(max_abs_diff(&weyl_op(d, 1, 1), &xz) < 1e-14);
        }
    }

    #[test]
    fn weyl_multiplication_phase() {
        for d in 2..5 {
            for k in 0..d * d {
                for l in 0..d * d {
                    let p = WeylIndex::from_linear(d, k);
                    let q = WeylIndex::from_linear(d, l);
                    let (r, ph) = p.mul(&q, d);
                    let want = p.matrix(d) * q.matrix(d);
                    let got = r.matrix(d) * root_of_unity(d, ph);
                    assert!(max_abs_diff(&want, &got) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn affine_of_identity_is_identity() {
        let b = build_basis(3, BasisFlavor::Weyl).unwrap();
        let t = affine_rep(&UnitaryGate::identity(3), &b).unwrap();
        assert!(max_abs_diff(t.matrix(), &identity(9)) < 1e-12);
        assert!(t.is_generalized_permutation());
    }

    #[test]
    fn affine_of_hadamard_swaps_x_and_z() {
        let b = build_basis(2, BasisFlavor::Weyl).unwrap();
        let t = affine_rep(&gates::h(), &b).unwrap();
        let m = t.matrix();
        // rows: 1 = Z, 2 = X, 3 = XZ
        assert!((m[(1, 2)] - ONE).norm() < 1e-12);
        assert!((m[(2, 1)] - ONE).norm() < 1e-12);
        assert!((m[(3, 3)] + ONE).norm() < 1e-12);
        assert!(t.is_generalized_permutation());
    }

    #[test]
    fn affine_of_t_gate_has_hadamard_like_block() {
        let b = build_basis(2, BasisFlavor::Weyl).unwrap();
        let t = affine_rep(&gates::t(), &b).unwrap();
        assert!(!t.is_generalized_permutation());
        let m = t.matrix();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for (i, j) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
            assert!((m[(i, j)].norm() - s).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_dimension_mismatch() {
        let b = build_basis(3, BasisFlavor::Weyl).unwrap();
        assert!(affine_rep(&gates::h(), &b).is_err());
    }

    #[test]
    fn affine_properties_for_haar_gates() {
        let mut rng = rng_from_seed(41);
        for d in 2..=3 {
            for flavor in [BasisFlavor::Weyl, BasisFlavor::GellMann] {
                let b = build_basis(d, flavor).unwrap();
                for _ in 0..20 {
                    let u = haar_unitary(d, &mut rng);
                    let v = haar_unitary(d, &mut rng);
                    let tu = affine_rep_matrix(&u, &b).unwrap();
                    let tv = affine_rep_matrix(&v, &b).unwrap();
                    let tuv = affine_rep_matrix(&(&u * &v), &b).unwrap();
                    assert!(affine_residual(&u, &b, &tu) <= 1e-8);
                    assert!(tu.unitarity_defect() <= 1e-9);
                    assert!(tu.block_defect() <= 1e-9);
                    assert!(max_abs_diff(tuv.matrix(), &(tu.matrix() * tv.matrix())) <= 1e-8);
                    let tud = affine_rep_matrix(&u.adjoint(), &b).unwrap();
                    assert!(max_abs_diff(tud.matrix(), &tu.matrix().adjoint()) <= 1e-8);
                    if flavor == BasisFlavor::GellMann {
                        assert!(tu.matrix().iter().all(|z| z.im.abs() <= 1e-9));
                    }
                }
            }
        }
    }

    fn x_rotation(theta: f64) -> CMatrix {
        let (cs, sn) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        CMatrix::from_row_slice(2, 2, &[c(cs, 0.0), c(0.0, -sn), c(0.0, -sn), c(cs, 0.0)])
    }

    fn z_rotation(theta: f64) -> CMatrix {
        crate::linalg::diag(&[c(0.0, -theta / 2.0).exp(), c(0.0, theta / 2.0).exp()])
    }

    fn one_bit_tensor() -> Vec<CMatrix> {
        let h = gates::h().into_matrix();
        vec![h.clone(), h * gates::z().matrix()]
    }

    #[test]
    fn one_bit_teleportation_gauge_symmetry() {
        // Physical X(θ) is matched by Z(θ) on the input leg or X(θ) on the output leg.
        for k in 0..8 {
            let theta = 0.37 + k as f64 * 0.81;
            let on_input = SymmetrySpec::new(
                x_rotation(theta),
                UnitaryGate::new(z_rotation(theta)).unwrap(),
                UnitaryGate::identity(2),
            )
            .unwrap();
            let r = check_symmetry(&one_bit_tensor(), &on_input).unwrap();
            assert!(r.residual <= 1e-9, "{}", r.residual);
            let on_output = SymmetrySpec::new(
                x_rotation(theta),
                UnitaryGate::identity(2),
                UnitaryGate::new(x_rotation(theta)).unwrap(),
            )
            .unwrap();
            assert!(check_symmetry(&one_bit_tensor(), &on_output).unwrap().residual <= 1e-9);
        }
    }

    #[test]
    fn one_bit_teleportation_z2_symmetry() {
        let spec = SymmetrySpec::new(gates::z().into_matrix(), gates::x(), gates::z()).unwrap();
        let r = check_symmetry(&one_bit_tensor(), &spec).unwrap();
        assert!(r.residual <= 1e-9);
        assert!(!r.global);
    }

    #[test]
    fn random_spec_generically_fails() {
        let mut rng = rng_from_seed(43);
        let kraus = crate::random::random_kraus(2, 2, 2, &mut rng);
        let spec = SymmetrySpec::new(
            haar_unitary(2, &mut rng),
            UnitaryGate::new(haar_unitary(2, &mut rng)).unwrap(),
            UnitaryGate::new(haar_unitary(2, &mut rng)).unwrap(),
        )
        .unwrap();
        assert!(check_symmetry(&kraus, &spec).unwrap().residual > 1e-2);
    }

    #[test]
    fn global_flag_for_conjugation_symmetry() {
        // Pauli channel: Σ_j T_ij P_j = V† P_i V is a global symmetry with W = V†.
        let mut rng = rng_from_seed(47);
        let b = build_basis(2, BasisFlavor::Weyl).unwrap();
        let v = haar_unitary(2, &mut rng);
        let t = affine_rep_matrix(&v, &b).unwrap();
        let spec = SymmetrySpec::new(
            t.matrix().clone(),
            UnitaryGate::new(v.clone()).unwrap(),
            UnitaryGate::new(v.adjoint()).unwrap(),
        )
        .unwrap();
        let r = check_symmetry(b.ops(), &spec).unwrap();
        assert!(r.residual <= 1e-9);
        assert!(r.global);
    }

    #[test]
    fn bell_basis_is_orthonormal() {
        for d in 2..5 {
            let u = bell_basis_unitary(d);
            assert!(unitarity_defect(&u) < 1e-12);
            assert!((bell_state(d, 0) - crate::linalg::omega(d)).norm() < 1e-15);
        }
    }

    #[test]
    fn clifford_classification_in_pauli_string_basis() {
        let b2 = tensor_basis(2, 2, BasisFlavor::Weyl).unwrap();
        assert!(max_abs_diff(&b2.gram(), &(identity(16) * c(4.0, 0.0))) < 1e-12);
        assert!(affine_rep(&gates::cnot(), &b2).unwrap().is_generalized_permutation());
        assert!(affine_rep(&gates::cz(), &b2).unwrap().is_generalized_permutation());
        let b3 = tensor_basis(2, 3, BasisFlavor::Weyl).unwrap();
        assert!(!affine_rep(&gates::toffoli(), &b3).unwrap().is_generalized_permutation());
    }
}
