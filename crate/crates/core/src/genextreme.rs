//! Generalised-extreme channels (Kraus rank ≤ d): block-structured Choi
//! matrices, the isometry form, single-qudit-ancilla circuit synthesis, and
//! convex mixtures.
//!
//! A spec `(C_i, U_i)` with `Σ_i C_i = 𝟙` defines the isometry
//! `V = Σ_i |i⟩ ⊗ U_i√C_i` and the Heisenberg-picture map
//! `X ↦ V†(X ⊗ 𝟙)V = Σ_ij X_ij C_ij`, `C_ij = √C_i U_i†U_j √C_j`.
//! The block matrix `Σ_ij |i⟩⟨j| ⊗ C_ij` is read as a (matrix-normalised)
//! Choi matrix; its channel has Kraus operators `(𝟙 ⊗ ⟨m|)V^*`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{ChoiNormalization, ChoiState, KrausChannel, RANK_CUTOFF};
use crate::error::{QspError, Result};
use crate::json;
use crate::linalg::{
    self, c, complete_isometry, hermitian_eigen, identity, kron, max_abs_diff, partial_trace, polar_unitary, psd_sqrt,
    swap_operator, unitarity_defect, CMatrix,
};
use crate::random::{haar_unitary, random_povm, rng_from_seed};
use crate::states::{trace_distance_matrices, DensityOperator, UnitaryGate};

/// Blocks `C_i` (PSD, summing to 𝟙) and gauges `U_i` (unitary, `U_0 = 𝟙`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenExtremeSpec {
    pub d: usize,
    #[serde(with = "json::cmatrix_vec")]
    pub blocks: Vec<CMatrix>,
    #[serde(with = "json::cmatrix_vec")]
    pub gauges: Vec<CMatrix>,
}

impl GenExtremeSpec {
    pub fn new(blocks: Vec<CMatrix>, gauges: Vec<CMatrix>) -> Result<Self> {
        let d = blocks.first().map(|b| b.nrows()).unwrap_or(0);
        let spec = GenExtremeSpec { d, blocks, gauges };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if d < 1 || self.blocks.len() != d || self.gauges.len() != d {
            return Err(QspError::validation(format!("a spec for d = {d} needs exactly d blocks and d gauges")));
        }
        if self.blocks.iter().chain(&self.gauges).any(|m| m.shape() != (d, d)) {
            return Err(QspError::dims(format!("all blocks and gauges must be {d}x{d}")));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let (vals, _) = hermitian_eigen(b);
            let min = vals.last().copied().unwrap_or(0.0);
            if linalg::hermiticity_defect(b) > 1e-8 || min < -1e-8 {
                return Err(QspError::validation(format!("block C_{i} is not PSD (min eigenvalue {min:e})")));
            }
        }
        let sum = self.blocks.iter().fold(CMatrix::zeros(d, d), |acc, b| acc + b);
        let defect = max_abs_diff(&sum, &identity(d));
        if defect > 1e-8 {
            return Err(QspError::validation(format!("blocks do not sum to the identity (defect {defect:e})")));
        }
        for (i, u) in self.gauges.iter().enumerate() {
            if unitarity_defect(u) > 1e-9 {
                return Err(QspError::validation(format!("gauge U_{i} is not unitary")));
            }
        }
        if max_abs_diff(&self.gauges[0], &identity(d)) > 1e-9 {
            return Err(QspError::validation("gauge is not fixed: U_0 must be the identity"));
        }
        Ok(())
    }

    /// Random spec: blocks from a random POVM, Haar gauges with `U_0 = 𝟙`.
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let blocks = random_povm(d, d, rng);
        let gauges = (0..d).map(|i| if i == 0 { identity(d) } else { haar_unitary(d, rng) }).collect();
        GenExtremeSpec { d, blocks, gauges }
    }

    pub fn random_seeded(d: usize, seed: u64) -> Self {
        Self::random(d, &mut rng_from_seed(seed))
    }

    /// `√C_i U_i† U_j √C_j`.
    pub fn block(&self, i: usize, j: usize) -> Result<CMatrix> {
        let si = psd_sqrt(&self.blocks[i], 1e-8)?;
        let sj = psd_sqrt(&self.blocks[j], 1e-8)?;
        Ok(si * self.gauges[i].adjoint() * &self.gauges[j] * sj)
    }

    /// Choi rank of the induced channel.
    pub fn rank(&self) -> Result<usize> {
        Ok(build_choi(self)?.rank())
    }
}

pub fn build_choi(spec: &GenExtremeSpec) -> Result<ChoiState> {
    spec.validate()?;
    let d = spec.d;
    let mut m = CMatrix::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            m.view_mut((i * d, j * d), (d, d)).copy_from(&spec.block(i, j)?);
        }
    }
    ChoiState::new(m, d, d, ChoiNormalization::Matrix)
}

/// `V = Σ_i |i⟩ ⊗ U_i√C_i` (d² × d), rows ordered `(i, m)`.
pub fn isometry_of(spec: &GenExtremeSpec) -> Result<CMatrix> {
    spec.validate()?;
    let d = spec.d;
    let mut v = CMatrix::zeros(d * d, d);
    for i in 0..d {
        let w = &spec.gauges[i] * psd_sqrt(&spec.blocks[i], 1e-8)?;
        v.view_mut((i * d, 0), (d, d)).copy_from(&w);
    }
    Ok(v)
}

/// Heisenberg-picture map `X ↦ V†(X ⊗ 𝟙)V`.
pub fn dual_map(v: &CMatrix, x: &CMatrix) -> CMatrix {
    let d = x.nrows();
    v.adjoint() * kron(x, &identity(d)) * v
}

/// `Σ_ij X_ij C_ij`.
pub fn block_contraction(spec: &GenExtremeSpec, x: &CMatrix) -> Result<CMatrix> {
    let d = spec.d;
    let mut acc = CMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            acc += spec.block(i, j)? * x[(i, j)];
        }
    }
    Ok(acc)
}

/// The single-ancilla circuit realising the channel of `build_choi(spec)`.
#[derive(Debug, Clone)]
pub struct SynthesizedCircuit {
    /// `W^t` acting on system ⊗ ancilla (dimension d²).
    pub w_t: UnitaryGate,
    pub kraus: KrausChannel,
    pub register_dim: usize,
}

impl SynthesizedCircuit {
    /// `tr_a W^t(ρ ⊗ |0⟩⟨0|)W^{t†}` by dense simulation.
    pub fn simulate(&self, rho: &CMatrix) -> Result<CMatrix> {
        let d = rho.nrows();
        let w = self.w_t.matrix();
        let full = w * kron(rho, &linalg::projector(d, 0)) * w.adjoint();
        partial_trace(&full, &[d, d], &[0])
    }
}

/// Completes `V` to `U` (first d columns equal `V`, i.e. `U(|0⟩ ⊗ |j⟩) = V|j⟩`),
/// sets `W = SWAP·U†` and reads off `K_m = (𝟙 ⊗ ⟨m|)W^t(𝟙 ⊗ |0⟩)`.
pub fn synthesize_circuit(spec: &GenExtremeSpec) -> Result<SynthesizedCircuit> {
    let d = spec.d;
    let v = isometry_of(spec)?;
    let u = complete_isometry(&v, 1e-8)?;
    let w = swap_operator(d, d) * u.adjoint();
    let w_t = w.transpose();
    let kraus = (0..d)
        .map(|m| {
            CMatrix::from_fn(d, d, |i, a| w_t[(i * d + m, a * d)])
        })
        .collect();
    Ok(SynthesizedCircuit {
        w_t: UnitaryGate::with_tolerance(w_t, 1e-8)?,
        kraus: KrausChannel::new(kraus)?,
        register_dim: d * d,
    })
}

/// Recovers `(C_i, U_i)` from a Choi state of rank ≤ d.
///
/// Factor `C = Y·Y†` with `Y` of width d; the row blocks `Y_i` give
/// `W_i = Y_i†` with `W_i†W_j = C_ij`. The polar decomposition `W_i = Ω_i√C_ii`
/// supplies the gauges, fixed by `U_i = Ω_0†Ω_i`.
pub fn extract_spec(choi: &ChoiState) -> Result<GenExtremeSpec> {
    let d = choi.d_in();
    if choi.d_out() != d {
        return Err(QspError::Unsupported("gen-extreme extraction needs a square channel".into()));
    }
    let m = choi.matrix_normalized();
    let (vals, vecs) = hermitian_eigen(&m);
    let rank = vals.iter().filter(|&&v| v > RANK_CUTOFF).count();
    if rank > d {
        return Err(QspError::NotGenExtreme { rank, d });
    }
    let mut y = CMatrix::zeros(d * d, d);
    for (k, v) in vals.iter().take(rank).enumerate() {
        y.set_column(k, &(vecs.column(k) * c(v.sqrt(), 0.0)));
    }
    let diag_sum = (0..d).fold(CMatrix::zeros(d, d), |acc, i| acc + m.view((i * d, i * d), (d, d)));
    if max_abs_diff(&diag_sum, &identity(d)) > 1e-6 {
        return Err(QspError::validation("diagonal blocks do not sum to the identity"));
    }
    let ws: Vec<CMatrix> = (0..d).map(|i| y.view((i * d, 0), (d, d)).adjoint()).collect();
    let omegas: Vec<CMatrix> = ws.iter().map(polar_unitary).collect();
    let blocks: Vec<CMatrix> = ws
        .iter()
        .map(|w| {
            let b = w.adjoint() * w;
            (&b + b.adjoint()) * c(0.5, 0.0)
        })
        .collect();
    let gauges: Vec<CMatrix> = omegas.iter().map(|o| omegas[0].adjoint() * o).collect();
    let mut gauges = gauges;
    gauges[0] = identity(d);
    GenExtremeSpec::new(blocks, gauges)
}

/// Gram matrix `⟨K_i†K_j, K_k†K_l⟩`; nonsingular exactly when `{K_i†K_j}` is linearly independent.
pub fn extremality_gram(kraus: &[CMatrix]) -> CMatrix {
    let prods: Vec<CMatrix> =
        kraus.iter().flat_map(|a| kraus.iter().map(move |b| a.adjoint() * b)).collect();
    let n = prods.len();
    CMatrix::from_fn(n, n, |p, q| linalg::trace(&(prods[p].adjoint() * &prods[q])))
}

/// Smallest eigenvalue of the extremality Gram matrix (a linear-independence witness).
pub fn extremality_witness(kraus: &[CMatrix]) -> f64 {
    hermitian_eigen(&extremality_gram(kraus)).0.last().copied().unwrap_or(0.0)
}

/// Convex combination of gen-extreme channels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub components: Vec<GenExtremeSpec>,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, components: Vec<GenExtremeSpec>) -> Result<Self> {
        let mix = MixtureSpec { weights, components };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.components.len();
        if n == 0 || self.weights.len() != n {
            return Err(QspError::validation("mixture needs one weight per component and at least one component"));
        }
        if self.weights.iter().any(|&p| p.is_nan() || p < 0.0) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(QspError::validation("mixture weights must be non-negative and sum to 1"));
        }
        let d = self.components[0].d;
        if self.components.iter().any(|c| c.d != d) {
            return Err(QspError::dims("mixture components differ in dimension"));
        }
        if n > d.pow(4) - d * d {
            return Err(QspError::validation(format!("{n} components exceed the d⁴ − d² bound")));
        }
        for comp in &self.components {
            comp.validate()?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.components[0].d
    }

    /// At most d components.
    pub fn within_conjectured_form(&self) -> bool {
        self.components.len() <= self.dim()
    }

    pub fn component_channels(&self) -> Result<Vec<KrausChannel>> {
        self.components.iter().map(|s| Ok(synthesize_circuit(s)?.kraus)).collect()
    }

    /// Union of `√p_i`-scaled Kraus sets.
    pub fn channel(&self) -> Result<KrausChannel> {
        let mut kraus = Vec::new();
        for (p, ch) in self.weights.iter().zip(self.component_channels()?) {
            kraus.extend(ch.kraus().iter().map(|k| k * c(p.sqrt(), 0.0)));
        }
        KrausChannel::new(kraus)
    }

    /// `Σ p_i C_i` (matrix-normalised).
    pub fn choi(&self) -> Result<ChoiState> {
        let d = self.dim();
        let mut m = CMatrix::zeros(d * d, d * d);
        for (p, s) in self.weights.iter().zip(&self.components) {
            m += build_choi(s)?.matrix_normalized() * c(*p, 0.0);
        }
        ChoiState::new(m, d, d, ChoiNormalization::Matrix)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MixtureSimulation {
    #[serde(with = "json::cmatrix")]
    pub empirical: CMatrix,
    #[serde(with = "json::cmatrix")]
    pub exact: CMatrix,
    pub dits_consumed: usize,
    pub counts: Vec<usize>,
}

impl MixtureSimulation {
    pub fn trace_distance(&self) -> f64 {
        trace_distance_matrices(&self.empirical, &self.exact)
    }
}

/// Exact mixture output and the empirical mean over shots, each shot drawing one
/// random dit to pick the component.
pub fn mixture_simulate(mix: &MixtureSpec, rho: &DensityOperator, shots: usize, seed: u64) -> Result<MixtureSimulation> {
    mix.validate()?;
    let channels = mix.component_channels()?;
    let outputs = channels.iter().map(|ch| ch.apply_matrix(rho.matrix())).collect::<Result<Vec<_>>>()?;
    let d = rho.dim();
    let exact = mix.weights.iter().zip(&outputs).fold(CMatrix::zeros(d, d), |acc, (p, o)| acc + o * c(*p, 0.0));
    let mut rng = rng_from_seed(seed);
    let mut counts = vec![0usize; outputs.len()];
    for _ in 0..shots {
        let mut x = rng.random::<f64>();
        let mut pick = outputs.len() - 1;
        for (i, p) in mix.weights.iter().enumerate() {
            if x < *p {
                pick = i;
                break;
            }
            x -= p;
        }
        counts[pick] += 1;
    }
    let empirical = if shots == 0 {
        CMatrix::zeros(d, d)
    } else {
        counts.iter().zip(&outputs).fold(CMatrix::zeros(d, d), |acc, (n, o)| acc + o * c(*n as f64 / shots as f64, 0.0))
    };
    Ok(MixtureSimulation { empirical, exact, dits_consumed: shots, counts })
}
