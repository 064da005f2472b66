//! Dense complex linear algebra used throughout the crate.
//!
//! All composite indices are big-endian: for a product space `H_1 ⊗ H_2 ⊗ ...`
//! the first factor is the slowest-varying index.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{QspError, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Builds a matrix from row-major real/imag pairs.
pub fn from_rows(rows: usize, cols: usize, data: &[Complex64]) -> CMatrix {
    assert_eq!(data.len(), rows * cols);
    CMatrix::from_row_slice(rows, cols, data)
}

pub fn diag(values: &[Complex64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_column_slice(values))
}

pub fn diag_real(values: &[f64]) -> CMatrix {
    CMatrix::from_fn(values.len(), values.len(), |i, j| {
        if i == j {
            c(values[i], 0.0)
        } else {
            ZERO
        }
    })
}

/// Kronecker product `a ⊗ b`; row index of the result is `i_a·rows(b) + i_b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    CMatrix::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

pub fn kron_all(factors: &[&CMatrix]) -> CMatrix {
    let mut out = CMatrix::identity(1, 1);
    for f in factors {
        out = kron(&out, f);
    }
    out
}

pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let nb = b.len();
    CVector::from_fn(a.len() * nb, |i, _| a[i / nb] * b[i % nb])
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Largest absolute entry.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_abs_diff");
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    max_abs_diff(m, &m.adjoint())
}

pub fn unitarity_defect(u: &CMatrix) -> f64 {
    if !u.is_square() {
        return f64::INFINITY;
    }
    max_abs_diff(&(u.adjoint() * u), &identity(u.nrows()))
}

pub fn symmetry_defect(m: &CMatrix) -> f64 {
    max_abs_diff(m, &m.transpose())
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Permutation matrix exchanging the two tensor factors of `C^{d1} ⊗ C^{d2}`.
pub fn swap_operator(d1: usize, d2: usize) -> CMatrix {
    let n = d1 * d2;
    let mut s = CMatrix::zeros(n, n);
    for i in 0..d1 {
        for j in 0..d2 {
            s[(j * d1 + i, i * d2 + j)] = ONE;
        }
    }
    s
}

/// Reduced operator on the subsystems listed in `keep`.
pub fn partial_trace(m: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix> {
    if !m.is_square() {
        return Err(QspError::dims(format!("partial_trace of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    let total: usize = dims.iter().product();
    if total != m.nrows() || dims.contains(&0) {
        return Err(QspError::dims(format!(
            "subsystem dims {:?} do not multiply to {}",
            dims,
            m.nrows()
        )));
    }
    let mut keep_sorted: Vec<usize> = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if keep_sorted.iter().any(|&k| k >= dims.len()) {
        return Err(QspError::dims(format!("keep set {:?} out of range for {} subsystems", keep, dims.len())));
    }
    let n = dims.len();
    let kept: Vec<bool> = (0..n).map(|k| keep_sorted.contains(&k)).collect();
    let out_dim: usize = keep_sorted.iter().map(|&k| dims[k]).product();
    let mut strides = vec![1usize; n];
    for k in (0..n.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let mut out = CMatrix::zeros(out_dim, out_dim);
    // Enumerate (kept row, kept col, traced) multi-indices.
    let traced_dim: usize = (0..n).filter(|&k| !kept[k]).map(|k| dims[k]).product();
    let split = |mut kidx: usize, mut tidx: usize| -> usize {
        let mut full = 0;
        for k in (0..n).rev() {
            let digit = if kept[k] {
                let dg = kidx % dims[k];
                kidx /= dims[k];
                dg
            } else {
                let dg = tidx % dims[k];
                tidx /= dims[k];
                dg
            };
            full += digit * strides[k];
        }
        full
    };
    for r in 0..out_dim {
        for col in 0..out_dim {
            let mut acc = ZERO;
            for t in 0..traced_dim {
                acc += m[(split(r, t), split(col, t))];
            }
            out[(r, col)] = acc;
        }
    }
    Ok(out)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted descending.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Applies a real function to the spectrum of a Hermitian matrix.
pub fn hermitian_fn(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let fd = diag_real(&vals.iter().map(|&v| f(v)).collect::<Vec<_>>());
    &vecs * fd * vecs.adjoint()
}

/// Square root of a positive semidefinite Hermitian matrix.
///
/// Eigenvalues down to `-herm_tol` are treated as roundoff and clamped to zero;
/// anything more negative is rejected.
pub fn psd_sqrt(m: &CMatrix, herm_tol: f64) -> Result<CMatrix> {
    if !m.is_square() {
        return Err(QspError::dims("psd_sqrt of a non-square matrix"));
    }
    let defect = hermiticity_defect(m);
    if defect > herm_tol {
        return Err(QspError::validation(format!("matrix is not Hermitian (defect {defect:e})")));
    }
    let (vals, vecs) = hermitian_eigen(m);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -herm_tol {
        return Err(QspError::PsdViolation { min_eigenvalue: min });
    }
    let roots: Vec<f64> = vals.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok(&vecs * diag_real(&roots) * vecs.adjoint())
}

/// Moore-Penrose pseudo-inverse of a Hermitian PSD matrix with eigenvalue cutoff.
pub fn psd_pinv(m: &CMatrix, cutoff: f64) -> CMatrix {
    hermitian_fn(m, |v| if v > cutoff { 1.0 / v } else { 0.0 })
}

/// Spectral decomposition `u = U_D · diag(D) · U_D†` of a unitary, via complex Schur form.
pub fn eig_unitary(u: &CMatrix, tol: f64) -> Result<(CMatrix, Vec<Complex64>)> {
    let defect = unitarity_defect(u);
    if defect > tol {
        return Err(QspError::validation(format!("eig_unitary: input not unitary (defect {defect:e})")));
    }
    let n = u.nrows();
    let schur = Schur::try_new(u.clone(), 1e-15, 10_000)
        .ok_or_else(|| QspError::Numerical("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    // For a normal matrix the Schur form is diagonal; project the eigenvalues to the unit circle.
    let phases: Vec<Complex64> = (0..n)
        .map(|k| {
            let z = t[(k, k)];
            z / z.norm()
        })
        .collect();
    Ok((q, phases))
}

/// Extends a matrix with orthonormal columns to a square unitary.
///
/// The first `cols(v)` columns are copied verbatim; the rest come from
/// Gram-Schmidt on the standard basis vectors in index order.
pub fn complete_isometry(v: &CMatrix, tol: f64) -> Result<CMatrix> {
    let (rows, cols) = v.shape();
    if rows < cols {
        return Err(QspError::validation(format!("complete_isometry: {rows}x{cols} has more columns than rows")));
    }
    let defect = max_abs_diff(&(v.adjoint() * v), &identity(cols));
    if defect > tol {
        return Err(QspError::validation(format!("complete_isometry: columns not orthonormal (defect {defect:e})")));
    }
    let mut out = CMatrix::zeros(rows, rows);
    out.columns_mut(0, cols).copy_from(v);
    let mut filled = cols;
    for e in 0..rows {
        if filled == rows {
            break;
        }
        let mut cand = CVector::zeros(rows);
        cand[e] = ONE;
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for k in 0..filled {
                let col = out.column(k);
                let proj = col.dotc(&cand);
                cand -= col * proj;
            }
        }
        let norm = cand.norm();
        if norm > 1e-6 {
            out.set_column(filled, &(cand / c(norm, 0.0)));
            filled += 1;
        }
    }
    if filled != rows {
        return Err(QspError::Numerical("complete_isometry: could not complete basis".into()));
    }
    Ok(out)
}

/// Unitary factor of the polar decomposition `m = W·P` (W unitary, P PSD).
pub fn polar_unitary(m: &CMatrix) -> CMatrix {
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    u * vt
}

/// Column vector `vec(m)` in row-major order: entry `(i, j)` goes to `i·cols + j`.
pub fn vec_row_major(m: &CMatrix) -> CVector {
    let (r, cl) = m.shape();
    CVector::from_fn(r * cl, |k, _| m[(k / cl, k % cl)])
}

pub fn unvec_row_major(v: &CVector, rows: usize, cols: usize) -> CMatrix {
    assert_eq!(v.len(), rows * cols);
    CMatrix::from_fn(rows, cols, |i, j| v[i * cols + j])
}

pub fn outer(a: &CVector, b: &CVector) -> CMatrix {
    a * b.adjoint()
}

/// Bell vector `|ω⟩ = Σ_i |ii⟩ / √d`.
pub fn omega(d: usize) -> CVector {
    let mut v = CVector::zeros(d * d);
    let s = 1.0 / (d as f64).sqrt();
    for i in 0..d {
        v[i * d + i] = c(s, 0.0);
    }
    v
}

pub fn basis_vector(n: usize, k: usize) -> CVector {
    let mut v = CVector::zeros(n);
    v[k] = ONE;
    v
}

pub fn projector(n: usize, k: usize) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    m[(k, k)] = ONE;
    m
}

/// Embeds `m` into a larger zero matrix at block offset `(r0, c0)`.
pub fn embed_block(m: &CMatrix, rows: usize, cols: usize, r0: usize, c0: usize) -> CMatrix {
    let mut out = CMatrix::zeros(rows, cols);
    out.view_mut((r0, c0), m.shape()).copy_from(m);
    out
}

pub fn direct_sum(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = CMatrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

pub fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Splits the registers of a multipartite vector into target offsets and base indices.
fn local_layout(dims: &[usize], targets: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n: usize = dims.iter().product();
    for (k, &t) in targets.iter().enumerate() {
        if t >= dims.len() || targets[..k].contains(&t) {
            return Err(QspError::dims(format!("invalid target register {t} for {} registers", dims.len())));
        }
    }
    let mut strides = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let dim_t: usize = targets.iter().map(|&t| dims[t]).product();
    let offsets: Vec<usize> = (0..dim_t)
        .map(|mut idx| {
            let mut off = 0;
            for &t in targets.iter().rev() {
                off += (idx % dims[t]) * strides[t];
                idx /= dims[t];
            }
            off
        })
        .collect();
    let bases = (0..n).filter(|&i| targets.iter().all(|&t| (i / strides[t]).is_multiple_of(dims[t]))).collect();
    Ok((offsets, bases))
}

/// Applies `op` to the listed registers of a state vector (target order = operator factor order).
pub fn apply_local(v: &CVector, dims: &[usize], targets: &[usize], op: &CMatrix) -> Result<CVector> {
    let n: usize = dims.iter().product();
    if v.len() != n {
        return Err(QspError::dims(format!("vector length {} does not match register dims {dims:?}", v.len())));
    }
    let (offsets, bases) = local_layout(dims, targets)?;
    if op.shape() != (offsets.len(), offsets.len()) {
        return Err(QspError::dims(format!("local operator must be {0}x{0}", offsets.len())));
    }
    let mut out = CVector::zeros(n);
    let mut buf = CVector::zeros(offsets.len());
    for &b in &bases {
        for (k, &o) in offsets.iter().enumerate() {
            buf[k] = v[b + o];
        }
        let r = op * &buf;
        for (k, &o) in offsets.iter().enumerate() {
            out[b + o] = r[k];
        }
    }
    Ok(out)
}

/// Contracts the listed registers with `⟨bra|`, returning the (unnormalised)
/// vector on the remaining registers in their original order.
pub fn contract_local(v: &CVector, dims: &[usize], targets: &[usize], bra: &CVector) -> Result<CVector> {
    let (offsets, bases) = local_layout(dims, targets)?;
    if bra.len() != offsets.len() || v.len() != dims.iter().product::<usize>() {
        return Err(QspError::dims("contraction dimension mismatch"));
    }
    Ok(CVector::from_iterator(
        bases.len(),
        bases.iter().map(|&b| offsets.iter().enumerate().map(|(k, &o)| bra[k].conj() * v[b + o]).sum()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{haar_unitary, random_density, random_hermitian, rng_from_seed};

    fn pauli_x() -> CMatrix {
        from_rows(2, 2, &[ZERO, ONE, ONE, ZERO])
    }
    fn pauli_z() -> CMatrix {
        diag_real(&[1.0, -1.0])
    }

    #[test]
    fn kron_identities() {
        assert_eq!(kron(&identity(2), &identity(2)), identity(4));
    }

    #[test]
    fn kron_index_convention() {
        let xz = kron(&pauli_x(), &pauli_z());
        assert_eq!(xz.shape(), (4, 4));
        // Entry-wise expansion (X⊗Z)[(ia·2+ib),(ja·2+jb)] = X[ia,ja]·Z[ib,jb].
        for i in 0..4 {
            for j in 0..4 {
                let want = pauli_x()[(i / 2, j / 2)] * pauli_z()[(i % 2, j % 2)];
                assert_eq!(xz[(i, j)], want);
            }
        }
        // (X⊗Z)|10⟩ = |00⟩ with sign +.
        let v = &xz * basis_vector(4, 2);
        assert_eq!(v, basis_vector(4, 0));
    }

    #[test]
    fn kron_trace_factorizes() {
        let mut rng = rng_from_seed(3);
        let a = random_hermitian(3, &mut rng) + CMatrix::from_element(3, 3, c(0.1, 0.2));
        let b = random_hermitian(3, &mut rng);
        let t = trace(&kron(&a, &b));
        assert!((t - trace(&a) * trace(&b)).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_product_and_bell() {
        let mut rng = rng_from_seed(5);
        let rho = random_density(3, 3, &mut rng);
        let sigma = random_density(2, 2, &mut rng) * c(2.5, 0.0);
        let red = partial_trace(&kron(&rho, &sigma), &[3, 2], &[0]).unwrap();
        assert!(max_abs_diff(&red, &(&rho * trace(&sigma))) < 1e-12);

        for d in 2..5 {
            let w = omega(d);
            let red = partial_trace(&outer(&w, &w), &[d, d], &[1]).unwrap();
            assert!(max_abs_diff(&red, &(identity(d) / c(d as f64, 0.0))) < 1e-12);
        }
    }

    #[test]
    fn partial_trace_rejects_bad_dims() {
        let m = identity(6);
        assert!(matches!(partial_trace(&m, &[2, 2], &[0]), Err(QspError::DimensionMismatch(_))));
        assert!(partial_trace(&m, &[2, 3], &[2]).is_err());
    }

    #[test]
    fn partial_trace_middle_subsystem_matches_brute_force() {
        let mut rng = rng_from_seed(11);
        let m = random_hermitian(12, &mut rng);
        let dims = [2, 3, 2];
        let red = partial_trace(&m, &dims, &[0, 2]).unwrap();
        let mut want = CMatrix::zeros(4, 4);
        for a in 0..2 {
            for c2 in 0..2 {
                for a2 in 0..2 {
                    for cc in 0..2 {
                        for b in 0..3 {
                            want[(a * 2 + c2, a2 * 2 + cc)] += m[(a * 6 + b * 2 + c2, a2 * 6 + b * 2 + cc)];
                        }
                    }
                }
            }
        }
        assert!(max_abs_diff(&red, &want) < 1e-13);
    }

    #[test]
    fn psd_sqrt_simple_cases() {
        assert!(max_abs_diff(&psd_sqrt(&identity(3), 1e-9).unwrap(), &identity(3)) < 1e-12);
        let s = psd_sqrt(&diag_real(&[4.0, 9.0]), 1e-9).unwrap();
        assert!(max_abs_diff(&s, &diag_real(&[2.0, 3.0])) < 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let mut rng = rng_from_seed(17);
        for k in 0..50 {
            let d = 2 + k % 3;
            let rho = random_density(d, 1 + k % d, &mut rng);
            let s = psd_sqrt(&rho, 1e-9).unwrap();
            assert!(max_abs_diff(&(&s * &s), &rho) <= 1e-8);
            assert!(max_abs(&commutator(&s, &rho)) <= 1e-8);
        }
    }

    #[test]
    fn psd_sqrt_rejects_negative() {
        let m = diag_real(&[1.0, -1e-3]);
        assert!(matches!(psd_sqrt(&m, 1e-9), Err(QspError::PsdViolation { .. })));
        // Roundoff-scale negatives are clamped.
        let m = diag_real(&[1.0, -1e-13]);
        let s = psd_sqrt(&m, 1e-9).unwrap();
        assert_eq!(s[(1, 1)], ZERO);
    }

    #[test]
    fn eig_unitary_trivial_and_diagonal() {
        let (ud, d) = eig_unitary(&identity(3), 1e-9).unwrap();
        assert!(unitarity_defect(&ud) < 1e-12);
        assert!(d.iter().all(|z| (z - ONE).norm() < 1e-12));
        let (_, d) = eig_unitary(&pauli_z(), 1e-9).unwrap();
        let mut re: Vec<f64> = d.iter().map(|z| z.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((re[0] + 1.0).abs() < 1e-12 && (re[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_unitary_reconstructs_haar() {
        let mut rng = rng_from_seed(23);
        for k in 0..100 {
            let d = 2 + k % 5;
            let u = haar_unitary(d, &mut rng);
            let (ud, ph) = eig_unitary(&u, 1e-9).unwrap();
            assert!(unitarity_defect(&ud) < 1e-9);
            assert!(ph.iter().all(|z| (z.norm() - 1.0).abs() < 1e-9));
            let rec = &ud * diag(&ph) * ud.adjoint();
            assert!(max_abs_diff(&rec, &u) <= 1e-8, "residual {}", max_abs_diff(&rec, &u));
        }
    }

    #[test]
    fn eig_unitary_degenerate_spectrum() {
        let u = kron(&pauli_z(), &identity(2));
        let (ud, ph) = eig_unitary(&u, 1e-9).unwrap();
        assert!(max_abs_diff(&(&ud * diag(&ph) * ud.adjoint()), &u) < 1e-10);
    }

    #[test]
    fn eig_unitary_rejects_non_unitary() {
        assert!(eig_unitary(&diag_real(&[1.0, 2.0]), 1e-9).is_err());
    }

    #[test]
    fn complete_isometry_cases() {
        let e0 = CMatrix::from_column_slice(2, 1, &[ONE, ZERO]);
        assert_eq!(complete_isometry(&e0, 1e-8).unwrap(), identity(2));

        let mut rng = rng_from_seed(29);
        for k in 0..100 {
            let d = 2 + k % 2;
            let u = haar_unitary(d * d, &mut rng);
            let v = u.columns(0, d).into_owned();
            let full = complete_isometry(&v, 1e-8).unwrap();
            assert!(unitarity_defect(&full) < 1e-9);
            assert_eq!(full.columns(0, d).into_owned(), v);
        }
        let bad = CMatrix::from_column_slice(2, 1, &[c(2.0, 0.0), ZERO]);
        assert!(complete_isometry(&bad, 1e-8).is_err());
    }

    #[test]
    fn swap_operator_exchanges_factors() {
        let mut rng = rng_from_seed(31);
        let a = random_hermitian(2, &mut rng);
        let b = random_hermitian(3, &mut rng);
        let s = swap_operator(2, 3);
        let lhs = &s * kron(&a, &b) * s.adjoint();
        assert!(max_abs_diff(&lhs, &kron(&b, &a)) < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn kron_is_associative(seed in any::<u64>(), da in 1usize..3, db in 1usize..3, dc in 1usize..3) {
                let mut rng = rng_from_seed(seed);
                let a = random_hermitian(da, &mut rng);
                let b = random_hermitian(db, &mut rng);
                let cc = random_hermitian(dc, &mut rng);
                let left = kron(&kron(&a, &b), &cc);
                let right = kron(&a, &kron(&b, &cc));
                prop_assert!(max_abs_diff(&left, &right) < 1e-14);
            }

            #[test]
            fn partial_trace_preserves_trace(seed in any::<u64>(), keep_mask in 0u8..8) {
                let mut rng = rng_from_seed(seed);
                let m = random_hermitian(12, &mut rng);
                let keep: Vec<usize> = (0..3).filter(|k| keep_mask & (1 << k) != 0).collect();
                let red = partial_trace(&m, &[2, 3, 2], &keep).unwrap();
                prop_assert!((trace(&red) - trace(&m)).norm() < 1e-10);
                if keep.is_empty() {
                    prop_assert_eq!(red.shape(), (1, 1));
                }
            }
        }
    }

    #[test]
    fn local_application_matches_kron() {
        let mut rng = rng_from_seed(21);
        let dims = [2, 3, 2];
        let v = CVector::from_fn(12, |i, _| c(i as f64, 1.0 - i as f64));
        let a = haar_unitary(2, &mut rng);
        let b = haar_unitary(6, &mut rng);
        let full = kron(&identity(2), &b);
        let got = apply_local(&v, &dims, &[1, 2], &b).unwrap();
        assert!((got - &full * &v).norm() < 1e-12);
        // Reversed target order: operator factor order follows the target list.
        let ab = kron(&a, &identity(2));
        let got = apply_local(&v, &dims, &[2, 0], &ab).unwrap();
        let full = kron_all(&[&identity(2), &identity(3), &a]);
        assert!((got - &full * &v).norm() < 1e-12);
    }

    #[test]
    fn contraction_with_basis_bra() {
        let v = CVector::from_fn(12, |i, _| c(i as f64, 0.0));
        let bra = basis_vector(3, 2);
        let out = contract_local(&v, &[2, 3, 2], &[1], &bra).unwrap();
        let want: Vec<f64> = vec![4.0, 5.0, 10.0, 11.0];
        for (k, w) in want.iter().enumerate() {
            assert_eq!(out[k].re, *w);
        }
    }
}
