//! Seeded random sampling of unitaries, states and channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{c, diag, psd_sqrt, CMatrix, CVector};
use crate::states::{DensityOperator, UnitaryGate};

pub type QspRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> QspRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix of i.i.d. standard complex Gaussians.
pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re * s, im * s)
    })
}

/// Haar-random unitary: QR of a Ginibre matrix with the phases of `diag(R)` folded into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let qr = ginibre(d, d, rng).qr();
    let q = qr.q();
    let r = qr.r();
    let phases: Vec<_> = (0..d)
        .map(|k| {
            let z = r[(k, k)];
            if z.norm() > 0.0 {
                z / z.norm()
            } else {
                c(1.0, 0.0)
            }
        })
        .collect();
    q * diag(&phases)
}

pub fn haar_unitary_seeded(d: usize, seed: u64) -> UnitaryGate {
    let mut rng = rng_from_seed(seed);
    UnitaryGate::new(haar_unitary(d, &mut rng)).expect("Haar sample is unitary")
}

pub fn random_hermitian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let g = ginibre(d, d, rng);
    (&g + g.adjoint()) * c(0.5, 0.0)
}

/// Random density operator of the given rank (induced measure from a Ginibre factor).
pub fn random_density<R: Rng + ?Sized>(d: usize, rank: usize, rng: &mut R) -> CMatrix {
    assert!(rank >= 1 && rank <= d, "rank must lie in 1..=d");
    let g = ginibre(d, rank, rng);
    let m = &g * g.adjoint();
    let t = crate::linalg::trace(&m);
    m / t
}

pub fn random_density_seeded(d: usize, rank: usize, seed: u64) -> DensityOperator {
    let mut rng = rng_from_seed(seed);
    DensityOperator::new(random_density(d, rank, &mut rng)).expect("sampled density operator is valid")
}

pub fn random_pure_state<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CVector {
    let g = ginibre(d, 1, rng);
    let v = g.column(0).into_owned();
    let n = v.norm();
    v / c(n, 0.0)
}

/// Kraus operators of a random channel with `rank` Kraus operators.
///
/// Built from a random isometry `C^{d_in} → C^{rank} ⊗ C^{d_out}` obtained by
/// orthonormalising a Ginibre matrix, so the rank is generic but not Haar-distributed
/// when `rank·d_out < d_in` is impossible.
pub fn random_kraus<R: Rng + ?Sized>(d_in: usize, d_out: usize, rank: usize, rng: &mut R) -> Vec<CMatrix> {
    assert!(rank * d_out >= d_in, "isometry needs rank·d_out ≥ d_in");
    let g = ginibre(rank * d_out, d_in, rng);
    // V = G (G†G)^{-1/2}
    let gram = g.adjoint() * &g;
    let inv_sqrt = psd_sqrt(&gram, 1e-9)
        .expect("Gram matrix is PSD")
        .try_inverse()
        .expect("Ginibre Gram matrix is invertible");
    let v = g * inv_sqrt;
    (0..rank).map(|k| v.rows(k * d_out, d_out).into_owned()).collect()
}

/// Random positive operators summing to the identity (a random POVM with `n` effects).
pub fn random_povm<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Vec<CMatrix> {
    let parts: Vec<CMatrix> = (0..n)
        .map(|_| {
            let g = ginibre(d, d, rng);
            &g * g.adjoint()
        })
        .collect();
    let total = parts.iter().fold(CMatrix::zeros(d, d), |acc, p| acc + p);
    let inv_sqrt = psd_sqrt(&total, 1e-9).unwrap().try_inverse().unwrap();
    parts.iter().map(|p| &inv_sqrt * p * &inv_sqrt).collect()
}
