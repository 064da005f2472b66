//! Recovering a channel's action from its Choi state: the Bell-measurement
//! scheme and the heralded two-outcome POVM scheme.

use rand::Rng;
use serde::Serialize;

use crate::channels::{ChoiState, KrausChannel};
use crate::error::{QspError, Result};
use crate::json;
use crate::linalg::{
    self, c, direct_sum, hermitian_eigen, identity, kron, max_abs_diff, partial_trace, psd_sqrt, CMatrix,
};
use crate::opbasis::bell_state;
use crate::states::{DensityOperator, UnitaryGate};

/// One branch of a heralded recovery.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryOutcome {
    pub branch: usize,
    pub probability: f64,
    /// Unnormalised conditional output; its trace is the branch probability.
    #[serde(with = "json::cmatrix")]
    pub operator: CMatrix,
    /// Whether a correction from a second Choi copy was folded in.
    pub corrected: bool,
}

/// `tr_B[C_matrix·(𝟙 ⊗ X^t)] = E(X)`, the linear extension of the channel to any operator.
pub fn conditional_output(choi: &ChoiState, x: &CMatrix) -> Result<CMatrix> {
    let (d_out, d_in) = (choi.d_out(), choi.d_in());
    if x.shape() != (d_in, d_in) {
        return Err(QspError::dims(format!("operator must be {d_in}x{d_in} to match the Choi input leg")));
    }
    let m = choi.matrix_normalized() * kron(&identity(d_out), &x.transpose());
    partial_trace(&m, &[d_out, d_in], &[0])
}

/// Projects the Choi input leg and the data register jointly onto every Bell vector.
///
/// Branch `k` carries `E(P_k ρ P_k†)/d²` where `P_k` is the Weyl operator of index `k`.
pub fn bell_recover(c: &ChoiState, rho: &DensityOperator) -> Result<Vec<RecoveryOutcome>> {
    let (d_out, d) = (c.d_out(), c.d_in());
    if rho.dim() != d {
        return Err(QspError::dims(format!("state dim {} but channel input dim {d}", rho.dim())));
    }
    let joint = kron(&c.state_matrix(), rho.matrix());
    (0..d * d)
        .map(|k| {
            let beta = bell_state(d, k);
            let bra = kron(&identity(d_out), &CMatrix::from_column_slice(d * d, 1, beta.as_slice()));
            let op = bra.adjoint() * &joint * &bra;
            let probability = linalg::trace(&op).re;
            Ok(RecoveryOutcome { branch: k, probability, operator: op, corrected: false })
        })
        .collect()
}

/// The two-outcome instrument `{√ρ^t, √(𝟙−ρ^t)}` with its dilation and multiplexer circuit.
#[derive(Debug, Clone)]
pub struct RecoveryChannelR {
    pub rho_t: CMatrix,
    pub k0: CMatrix,
    pub k1: CMatrix,
    /// `[[K_0, K_1], [K_1, −K_0]]`, ancilla qubit as the leading factor.
    pub dilation: UnitaryGate,
    /// Eigenbasis of `ρ^t`.
    pub v_eig: UnitaryGate,
    /// Ancilla rotation per eigenvalue, in eigenvector order.
    pub rotations: Vec<CMatrix>,
}

/// Eigenvalues within roundoff of 0 or 1 are snapped so that `√λ` does not amplify noise.
fn snap(lambda: f64) -> f64 {
    if lambda < 1e-12 {
        0.0
    } else if lambda > 1.0 - 1e-12 {
        1.0
    } else {
        lambda
    }
}

fn rotation(lambda: f64) -> CMatrix {
    let a = lambda.sqrt();
    let b = (1.0 - lambda).sqrt();
    linalg::from_rows(2, 2, &[c(a, 0.0), c(b, 0.0), c(b, 0.0), c(-a, 0.0)])
}

pub fn build_recovery_channel(rho: &DensityOperator) -> Result<RecoveryChannelR> {
    let d = rho.dim();
    let rho_t = rho.transpose();
    let (vals, vecs) = hermitian_eigen(&rho_t);
    if let Some(bad) = vals.iter().find(|&&l| !(-1e-9..=1.0 + 1e-9).contains(&l)) {
        return Err(QspError::validation(format!("eigenvalue {bad} outside [0, 1]")));
    }
    let lambdas: Vec<f64> = vals.iter().map(|&l| snap(l)).collect();
    // K_0 = V√D V†, K_1 = V√(𝟙−D)V† from one shared eigenbasis.
    let spectral = |f: &dyn Fn(f64) -> f64| {
        let dm = linalg::diag_real(&lambdas.iter().map(|&l| f(l)).collect::<Vec<_>>());
        &vecs * dm * vecs.adjoint()
    };
    let k0 = spectral(&|l| l.sqrt());
    let k1 = spectral(&|l| (1.0 - l).sqrt());
    let mut u = CMatrix::zeros(2 * d, 2 * d);
    u.view_mut((0, 0), (d, d)).copy_from(&k0);
    u.view_mut((0, d), (d, d)).copy_from(&k1);
    u.view_mut((d, 0), (d, d)).copy_from(&k1);
    u.view_mut((d, d), (d, d)).copy_from(&(-&k0));
    let dilation = UnitaryGate::new(u)?;
    let v_eig = UnitaryGate::new(vecs)?;
    let rotations = lambdas.iter().map(|&l| rotation(l)).collect();
    Ok(RecoveryChannelR { rho_t, k0, k1, dilation, v_eig, rotations })
}

impl RecoveryChannelR {
    pub fn dim(&self) -> usize {
        self.rho_t.nrows()
    }

    /// `Σ_k Rot(λ_k) ⊗ |k⟩⟨k|` on ancilla ⊗ system.
    pub fn multiplexer(&self) -> CMatrix {
        let d = self.dim();
        self.rotations.iter().enumerate().fold(CMatrix::zeros(2 * d, 2 * d), |acc, (k, r)| {
            acc + kron(r, &linalg::projector(d, k))
        })
    }

    /// `(𝟙 ⊗ V)·M·(𝟙 ⊗ V†)`, which equals the dilation.
    pub fn circuit(&self) -> CMatrix {
        let lift = kron(&identity(2), self.v_eig.matrix());
        &lift * self.multiplexer() * lift.adjoint()
    }

    /// `tr_a[U(|0⟩⟨0| ⊗ σ)U†]` for a given 2d-unitary realisation.
    pub fn apply_with(&self, unitary: &CMatrix, sigma: &CMatrix) -> Result<CMatrix> {
        let d = self.dim();
        let input = kron(&linalg::projector(2, 0), sigma);
        partial_trace(&(unitary * input * unitary.adjoint()), &[2, d], &[1])
    }

    pub fn instrument(&self) -> KrausChannel {
        KrausChannel::new(vec![self.k0.clone(), self.k1.clone()]).expect("K0² + K1² = 𝟙")
    }
}

/// Result of a POVM-scheme recovery.
#[derive(Debug, Clone, Serialize)]
pub struct PovmRecovery {
    #[serde(with = "json::cmatrix")]
    pub output: CMatrix,
    pub herald: RecoveryOutcome,
    pub copies_used: usize,
}

/// Branch probabilities `(p_0, p_1)` of measuring `{ρ^t, 𝟙−ρ^t}` on the Choi input leg.
pub fn povm_probabilities(c1: &ChoiState, rho: &DensityOperator) -> Result<(f64, f64)> {
    let d = c1.d_in();
    if rho.dim() != d {
        return Err(QspError::dims("state and Choi input leg differ in dimension"));
    }
    let marginal = partial_trace(&c1.state_matrix(), &[c1.d_out(), d], &[1])?;
    let p0 = linalg::trace(&(marginal * rho.transpose())).re;
    Ok((p0, 1.0 - p0))
}

/// Recovers `E(ρ)` on the given herald branch.
///
/// Branch 0 uses copy 1 only. Branch 1 yields `E(𝟙−ρ)`; the result is corrected
/// as `E(𝟙) − E(𝟙−ρ)` with `E(𝟙)` taken from copy 2, unless the channel is
/// unitary, in which case `E(𝟙) = 𝟙` and copy 2 is not needed.
pub fn povm_recover(c1: &ChoiState, c2: Option<&ChoiState>, rho: &DensityOperator, branch: usize) -> Result<PovmRecovery> {
    let d = c1.d_in();
    let (p0, p1) = povm_probabilities(c1, rho)?;
    let rho_m = rho.matrix();
    match branch {
        0 => {
            let out = conditional_output(c1, rho_m)?;
            let herald = RecoveryOutcome { branch: 0, probability: p0, operator: &out / c(d as f64, 0.0), corrected: false };
            Ok(PovmRecovery { output: out, herald, copies_used: 1 })
        }
        1 => {
            let complement = conditional_output(c1, &(identity(d) - rho_m))?;
            let unitary = c1.d_in() == c1.d_out() && c1.rank() == 1;
            let (e_one, copies_used) = if unitary {
                (identity(c1.d_out()), 1)
            } else {
                let c2 = c2.ok_or_else(|| {
                    QspError::HeraldedFailure("branch 1 of a non-unitary channel needs a second Choi copy".into())
                })?;
                if c2.d_in() != c1.d_in() || c2.d_out() != c1.d_out() {
                    return Err(QspError::dims("the two Choi copies differ in shape"));
                }
                (c2.output_of_identity(), 2)
            };
            let out = &e_one - &complement;
            let (vals, _) = hermitian_eigen(&out);
            let min = vals.last().copied().unwrap_or(0.0);
            if min < -1e-8 {
                return Err(QspError::Numerical(format!(
                    "corrected output is not PSD (min eigenvalue {min:e}); the Choi copies disagree"
                )));
            }
            let herald =
                RecoveryOutcome { branch: 1, probability: p1, operator: &complement / c(d as f64, 0.0), corrected: true };
            Ok(PovmRecovery { output: out, herald, copies_used })
        }
        other => Err(QspError::validation(format!("POVM recovery has branches 0 and 1, got {other}"))),
    }
}

/// Samples the herald according to the exact branch probabilities.
pub fn povm_recover_sampled<R: Rng + ?Sized>(
    c1: &ChoiState,
    c2: Option<&ChoiState>,
    rho: &DensityOperator,
    rng: &mut R,
) -> Result<PovmRecovery> {
    let (p0, _) = povm_probabilities(c1, rho)?;
    let branch = if rng.random::<f64>() < p0 { 0 } else { 1 };
    povm_recover(c1, c2, rho, branch)
}

/// Three-outcome instrument on `H_S ⊕ H_S^⊥` (2d → d):
/// `K_0 = [√ρ^t, 0]`, `K_1 = [√(𝟙−ρ^t), 0]`, `K_2 = [0, 𝟙]`.
pub fn build_recovery_prime(rho: &DensityOperator, d: usize) -> Result<KrausChannel> {
    if rho.dim() != d {
        return Err(QspError::dims("state dimension must equal d"));
    }
    let subspace: Vec<usize> = (0..d).collect();
    build_recovery_prime_on(&rho.transpose(), &subspace, 2 * d)
}

/// Same instrument for an arbitrary coordinate subspace of a `total`-dimensional
/// input leg. `rho_t` is the transposed target state expressed on the subspace.
pub fn build_recovery_prime_on(rho_t: &CMatrix, subspace: &[usize], total: usize) -> Result<KrausChannel> {
    let m = subspace.len();
    if rho_t.shape() != (m, m) || subspace.iter().any(|&i| i >= total) || total < m || total - m > m {
        return Err(QspError::dims("recovery instrument needs m ≤ total ≤ 2m and a matching state"));
    }
    let s0 = psd_sqrt(rho_t, 1e-9)?;
    let s1 = psd_sqrt(&(identity(m) - rho_t), 1e-9)?;
    let mut embed = CMatrix::zeros(m, total);
    for (r, &i) in subspace.iter().enumerate() {
        embed[(r, i)] = c(1.0, 0.0);
    }
    let mut k2 = CMatrix::zeros(m, total);
    let complement = (0..total).filter(|i| !subspace.contains(i));
    for (r, i) in complement.enumerate() {
        k2[(r, i)] = c(1.0, 0.0);
    }
    KrausChannel::new(vec![&s0 * &embed, &s1 * &embed, k2])
}

/// `ρ ⊕ 0` on `H_S ⊕ H_S^⊥`.
pub fn embed_state(rho: &DensityOperator) -> CMatrix {
    let d = rho.dim();
    direct_sum(rho.matrix(), &CMatrix::zeros(d, d))
}

/// Probability of each instrument outcome on `σ`.
pub fn outcome_probabilities(instrument: &KrausChannel, sigma: &CMatrix) -> Vec<f64> {
    instrument.kraus().iter().map(|k| linalg::trace(&(k * sigma * k.adjoint())).re).collect()
}

/// `‖out − E(ρ)‖_max` helper used by callers that check recovery against direct application.
pub fn recovery_error(out: &CMatrix, e: &KrausChannel, rho: &DensityOperator) -> Result<f64> {
    Ok(max_abs_diff(out, &e.apply_matrix(rho.matrix())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{choi_of_channel, KrausChannel};
    use crate::opbasis::WeylIndex;
    use crate::random::{random_density, random_kraus, rng_from_seed};

    fn random_pair(seed: u64) -> (KrausChannel, DensityOperator) {
        let mut rng = rng_from_seed(seed);
        let d = 2 + (seed as usize) % 2;
        let r = 1 + (seed as usize / 2) % (d * d);
        let e = KrausChannel::new(random_kraus(d, d, r, &mut rng)).unwrap();
        let rho = DensityOperator::new(random_density(d, d, &mut rng)).unwrap();
        (e, rho)
    }

    /// Dense three-register contraction: `(𝟙 ⊗ ⟨β_k|)(C ⊗ ρ)(𝟙 ⊗ |β_k⟩)` computed index by index.
    fn bell_oracle(choi: &CMatrix, rho: &CMatrix, d: usize, k: usize) -> CMatrix {
        let beta = bell_state(d, k);
        CMatrix::from_fn(d, d, |a, a2| {
            let mut acc = c(0.0, 0.0);
            for b in 0..d {
                for s in 0..d {
                    for b2 in 0..d {
                        for s2 in 0..d {
                            acc += beta[b * d + s].conj() * choi[(a * d + b, a2 * d + b2)] * rho[(s, s2)] * beta[b2 * d + s2];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn bell_identity_channel_branch_zero() {
        let mut rng = rng_from_seed(1);
        for d in 2..4 {
            let rho = DensityOperator::new(random_density(d, d, &mut rng)).unwrap();
            let choi = choi_of_channel(&KrausChannel::identity(d)).unwrap();
            let out = bell_recover(&choi, &rho).unwrap();
            let scaled = rho.matrix() / c((d * d) as f64, 0.0);
            assert!(max_abs_diff(&out[0].operator, &scaled) < 1e-14);
        }
    }

    #[test]
    fn bell_branches_match_oracle_and_byproduct_convention() {
        for seed in 0..30u64 {
            let (e, rho) = random_pair(seed);
            let d = rho.dim();
            let choi = choi_of_channel(&e).unwrap();
            let out = bell_recover(&choi, &rho).unwrap();
            let total: f64 = out.iter().map(|o| o.probability).sum();
            assert!((total - 1.0).abs() <= 1e-9);
            for (k, o) in out.iter().enumerate() {
                assert!(max_abs_diff(&o.operator, &bell_oracle(choi.matrix(), rho.matrix(), d, k)) < 1e-13);
                let p = WeylIndex::from_linear(d, k).matrix(d);
                let twirled = e.apply_matrix(&(&p * rho.matrix() * p.adjoint())).unwrap() / c((d * d) as f64, 0.0);
                assert!(max_abs_diff(&o.operator, &twirled) <= 1e-12);
            }
        }
    }

    #[test]
    fn bell_maximally_mixed_every_branch() {
        let (e, _) = random_pair(5);
        let d = e.dim_in();
        let choi = choi_of_channel(&e).unwrap();
        let out = bell_recover(&choi, &DensityOperator::maximally_mixed(d)).unwrap();
        let e1 = choi.output_of_identity() / c((d * d * d) as f64, 0.0);
        for o in out {
            assert!(max_abs_diff(&o.operator, &e1) < 1e-12);
        }
    }

    #[test]
    fn recovery_channel_scalar_and_extremes() {
        let r = build_recovery_channel(&DensityOperator::maximally_mixed(3)).unwrap();
        assert!(max_abs_diff(&r.k0, &(identity(3) * c((1.0f64 / 3.0).sqrt(), 0.0))) < 1e-12);
        assert!(max_abs_diff(&r.k1, &(identity(3) * c((2.0f64 / 3.0).sqrt(), 0.0))) < 1e-12);

        let r = build_recovery_channel(&DensityOperator::basis(2, 0).unwrap()).unwrap();
        let z = linalg::from_rows(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]);
        let x = linalg::from_rows(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(r.rotations[0], z);
        assert_eq!(r.rotations[1], x);
    }

    #[test]
    fn multiplexer_matches_dilation() {
        let mut rng = rng_from_seed(2);
        for k in 0..50 {
            let d = 2 + k % 3;
            let rho = DensityOperator::new(random_density(d, 1 + k % d, &mut rng)).unwrap();
            let r = build_recovery_channel(&rho).unwrap();
            assert!(linalg::unitarity_defect(r.dilation.matrix()) <= 1e-9);
            assert!(max_abs_diff(&(&r.k0 * &r.k0 + &r.k1 * &r.k1), &identity(d)) <= 1e-8);
            assert!(linalg::max_abs(&linalg::commutator(&r.k0, &r.k1)) <= 1e-8);
            let gap = max_abs_diff(&r.circuit(), r.dilation.matrix());
            assert!(gap <= 1e-8, "k={k} d={d} gap={gap:e} vals={:?}", hermitian_eigen(&r.rho_t).0);
            let sigma = random_density(d, d, &mut rng);
            let a = r.apply_with(&r.circuit(), &sigma).unwrap();
            let b = r.instrument().apply_matrix(&sigma).unwrap();
            assert!(max_abs_diff(&a, &b) <= 1e-8);
        }
    }

    #[test]
    fn povm_identity_branch_zero() {
        let choi = choi_of_channel(&KrausChannel::identity(2)).unwrap();
        let rho = DensityOperator::basis(2, 0).unwrap();
        let out = povm_recover(&choi, None, &rho, 0).unwrap();
        assert!(max_abs_diff(&out.output, rho.matrix()) < 1e-14);
        assert_eq!(out.copies_used, 1);
    }

    #[test]
    fn povm_both_branches_reproduce_channel() {
        for seed in 0..100u64 {
            let (e, rho) = random_pair(seed);
            let c1 = choi_of_channel(&e).unwrap();
            let c2 = c1.clone();
            let want = e.apply_matrix(rho.matrix()).unwrap();
            let b0 = povm_recover(&c1, Some(&c2), &rho, 0).unwrap();
            let b1 = povm_recover(&c1, Some(&c2), &rho, 1).unwrap();
            assert!(max_abs_diff(&b0.output, &want) <= 1e-8);
            assert!(max_abs_diff(&b1.output, &want) <= 1e-8);
            assert_eq!(b0.copies_used, 1);
            let expect = if c1.rank() == 1 { 1 } else { 2 };
            assert_eq!(b1.copies_used, expect);
            assert!((b0.herald.probability + b1.herald.probability - 1.0).abs() <= 1e-9);
            assert!((linalg::trace(&b1.herald.operator).re - b1.herald.probability).abs() <= 1e-8);
        }
    }

    #[test]
    fn povm_probabilities_match_dense_measurement() {
        for seed in 0..20u64 {
            let (e, rho) = random_pair(seed);
            let d = rho.dim();
            let choi = choi_of_channel(&e).unwrap();
            // Measure {ρ^t, 𝟙−ρ^t} on the input leg of the full Choi state.
            let eff = kron(&identity(d), &rho.transpose());
            let p0 = linalg::trace(&(eff * choi.matrix())).re;
            let (q0, q1) = povm_probabilities(&choi, &rho).unwrap();
            assert!((p0 - q0).abs() < 1e-12 && (q0 + q1 - 1.0).abs() < 1e-15);
            assert!((q0 - 1.0 / d as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn povm_branch_one_needs_second_copy() {
        let e = KrausChannel::amplitude_damping(0.4).unwrap();
        let c1 = choi_of_channel(&e).unwrap();
        let rho = DensityOperator::basis(2, 1).unwrap();
        assert!(matches!(povm_recover(&c1, None, &rho, 1), Err(QspError::HeraldedFailure(_))));
        let u = KrausChannel::unitary(&crate::gates::h());
        let cu = choi_of_channel(&u).unwrap();
        let out = povm_recover(&cu, None, &rho, 1).unwrap();
        assert_eq!(out.copies_used, 1);
        assert!(max_abs_diff(&out.output, &u.apply_matrix(rho.matrix()).unwrap()) < 1e-12);
    }

    #[test]
    fn recovery_prime_structure() {
        let mut rng = rng_from_seed(4);
        for k in 0..20 {
            let d = 2 + k % 2;
            let rho = DensityOperator::new(random_density(d, d, &mut rng)).unwrap();
            let r = build_recovery_prime(&rho, d).unwrap();
            assert_eq!(r.rank(), 3);
            assert!(r.tp_residual() <= 1e-8);
            let p = outcome_probabilities(&r, &embed_state(&rho));
            assert!(p[2].abs() <= 1e-9);
            let sigma = random_density(d, d, &mut rng);
            let outside = direct_sum(&CMatrix::zeros(d, d), &sigma);
            assert!((outcome_probabilities(&r, &outside)[2] - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn bell_oracle_sanity_on_product_choi() {
        // For the fully depolarising channel every branch is 𝟙/d³.
        let d = 2;
        let choi = choi_of_channel(&KrausChannel::completely_depolarizing(d)).unwrap();
        let state = DensityOperator::basis(d, 1).unwrap();
        for o in bell_recover(&choi, &state).unwrap() {
            let want = identity(d) / c((d * d * d) as f64, 0.0);
            assert!(max_abs_diff(&o.operator, &want) < 1e-14);
        }
    }
}
