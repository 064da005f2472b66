//! Stored-program virtual machine.
//!
//! A script lists gates and channels on qudit registers. Direct mode applies
//! them to the input state. Stored mode turns every maximal run of unitary
//! steps into program states, composes them by teleportation into a single
//! program of the run's product, and recovers its action on the current state
//! with the POVM scheme; channel steps are recovered from their Choi programs.

use std::time::Instant;

use rand::SeedableRng;
use serde::Serialize;
use serde_json::Value;

use crate::channels::{choi_of_channel, ChannelJson, KrausChannel};
use crate::error::{QspError, Result};
use crate::gates;
use crate::json::{self, MatrixJson};
use crate::linalg::{self, apply_local, basis_vector, c, max_abs_diff, CMatrix};
use crate::opbasis::{affine_rep, tensor_basis, BasisFlavor};
use crate::random::QspRng;
use crate::recovery::povm_recover_sampled;
use crate::states::{fidelity_matrices, DensityOperator, Tolerances, UnitaryGate};
use crate::teleport::{compose_branches, compose_sequence, RotationVariant, SequenceMode};
use crate::channels::program_state_of_unitary;

pub const REPORT_SCHEMA: &str = "qsp.run-report/v1";
/// Cap on the simulated register: the composition holds four copies, `D⁴ ≤ 2¹²`.
pub const MAX_TOTAL_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Unitary,
    Channel,
}

/// A step with its operation lifted to the full register.
#[derive(Debug, Clone)]
pub struct Step {
    pub kind: StepKind,
    /// Gate name, or `"inline"`.
    pub label: String,
    pub targets: Vec<usize>,
    pub channel: KrausChannel,
    /// Lifted unitary for unitary steps.
    pub unitary: Option<UnitaryGate>,
}

#[derive(Debug, Clone)]
pub struct ProgramScript {
    pub d: usize,
    pub registers: usize,
    pub steps: Vec<Step>,
    pub input_state: DensityOperator,
}

impl ProgramScript {
    pub fn total_dim(&self) -> usize {
        self.d.pow(self.registers as u32)
    }
}

fn err(path: &str, msg: impl std::fmt::Display) -> QspError {
    QspError::Validation(format!("{path}: {msg}"))
}

fn get<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| err(path, format!("missing field `{key}`")))
}

fn as_usize(v: &Value, path: &str) -> Result<usize> {
    v.as_u64().map(|n| n as usize).ok_or_else(|| err(path, "expected a non-negative integer"))
}

/// Embeds an operator on `targets` into the full register.
pub fn lift(op: &CMatrix, targets: &[usize], d: usize, registers: usize) -> Result<CMatrix> {
    let dims = vec![d; registers];
    let n = d.pow(registers as u32);
    let mut out = CMatrix::zeros(n, n);
    for k in 0..n {
        out.set_column(k, &apply_local(&basis_vector(n, k), &dims, targets, op)?);
    }
    Ok(out)
}

fn parse_state(v: &Value, d: usize, registers: usize, tol: &Tolerances) -> Result<DensityOperator> {
    let path = "input_state";
    let n = d.pow(registers as u32);
    match v {
        Value::String(s) => {
            let inner = s
                .trim()
                .strip_prefix('|')
                .and_then(|r| r.strip_suffix('>').or_else(|| r.strip_suffix('⟩')))
                .ok_or_else(|| err(path, format!("expected a ket like \"|01>\", got {s:?}")))?;
            let digits: Vec<u32> = inner
                .chars()
                .map(|ch| ch.to_digit(10).filter(|&x| (x as usize) < d))
                .collect::<Option<_>>()
                .ok_or_else(|| err(path, format!("ket digits must lie in 0..{d}")))?;
            if digits.len() != registers {
                return Err(err(path, format!("ket has {} digits but there are {registers} registers", digits.len())));
            }
            let k = digits.iter().fold(0usize, |acc, &x| acc * d + x as usize);
            DensityOperator::basis(n, k)
        }
        Value::Object(_) => {
            let m: MatrixJson = serde_json::from_value(v.clone()).map_err(|e| err(path, e))?;
            let m = m.to_matrix().map_err(|e| err(path, e))?;
            if m.shape() != (n, n) {
                return Err(err(path, format!("density matrix must be {n}x{n}")));
            }
            if linalg::hermiticity_defect(&m) > tol.herm {
                return Err(err(path, "density matrix is not Hermitian"));
            }
            DensityOperator::new(m).map_err(|e| err(path, e))
        }
        _ => Err(err(path, "expected a ket string or a matrix object")),
    }
}

fn parse_step(v: &Value, i: usize, d: usize, registers: usize, tol: &Tolerances) -> Result<Step> {
    let path = format!("steps[{i}]");
    let kind = match get(v, "kind", &path)?.as_str() {
        Some("unitary") => StepKind::Unitary,
        Some("channel") => StepKind::Channel,
        _ => return Err(err(&format!("{path}.kind"), "expected \"unitary\" or \"channel\"")),
    };
    let targets_v = get(v, "targets", &path)?
        .as_array()
        .ok_or_else(|| err(&format!("{path}.targets"), "expected an array"))?;
    let mut targets = Vec::with_capacity(targets_v.len());
    for (k, t) in targets_v.iter().enumerate() {
        let tp = format!("{path}.targets[{k}]");
        let t = as_usize(t, &tp)?;
        if t >= registers {
            return Err(err(&tp, format!("register {t} out of range (registers = {registers})")));
        }
        if targets.contains(&t) {
            return Err(err(&tp, format!("register {t} listed twice")));
        }
        targets.push(t);
    }
    if targets.is_empty() {
        return Err(err(&format!("{path}.targets"), "at least one target is required"));
    }
    let local = d.pow(targets.len() as u32);
    let rp = format!("{path}.ref");
    let r = get(v, "ref", &path)?;
    let (label, local_channel, local_unitary) = match r {
        Value::String(name) => {
            let (g, qubits) = gates::by_name(name).map_err(|e| err(&rp, e))?;
            if d != 2 {
                return Err(err(&rp, format!("named gate {name} acts on qubits but d = {d}")));
            }
            if qubits != targets.len() {
                return Err(err(&rp, format!("{name} acts on {qubits} register(s) but {} targets given", targets.len())));
            }
            (name.to_ascii_uppercase(), KrausChannel::unitary(&g), Some(g))
        }
        Value::Object(obj) if obj.contains_key("kraus") => {
            let cj: ChannelJson = serde_json::from_value(r.clone()).map_err(|e| err(&rp, e))?;
            let ch = cj.to_channel().map_err(|e| err(&rp, e))?;
            if ch.dim_in() != local || ch.dim_out() != local {
                return Err(err(&rp, format!("channel must act on dimension {local}")));
            }
            let u = if ch.is_unitary() { ch.random_unitary_form().map(|p| p[0].1.clone()) } else { None };
            let u = u.map(|m| UnitaryGate::with_tolerance(m, tol.unitary)).transpose().map_err(|e| err(&rp, e))?;
            ("inline".to_string(), ch, u)
        }
        Value::Object(_) => {
            let m: MatrixJson = serde_json::from_value(r.clone()).map_err(|e| err(&rp, e))?;
            let m = m.to_matrix().map_err(|e| err(&rp, e))?;
            if m.shape() != (local, local) {
                return Err(err(&rp, format!("matrix must be {local}x{local} for {} target(s)", targets.len())));
            }
            let g = UnitaryGate::with_tolerance(m, tol.unitary).map_err(|e| err(&rp, e))?;
            ("inline".to_string(), KrausChannel::unitary(&g), Some(g))
        }
        _ => return Err(err(&rp, "expected a gate name, a matrix, or a channel object")),
    };
    if kind == StepKind::Unitary && local_unitary.is_none() {
        return Err(err(&rp, "a unitary step needs a unitary operation"));
    }
    let kraus = local_channel
        .kraus()
        .iter()
        .map(|k| lift(k, &targets, d, registers))
        .collect::<Result<Vec<_>>>()?;
    let channel = KrausChannel::new(kraus)?;
    let unitary = match (kind, local_unitary) {
        (StepKind::Unitary, Some(g)) => Some(UnitaryGate::with_tolerance(lift(g.matrix(), &targets, d, registers)?, tol.unitary)?),
        _ => None,
    };
    Ok(Step { kind, label, targets, channel, unitary })
}

/// Parses and validates a script; errors name the offending field.
pub fn parse(text: &str) -> Result<ProgramScript> {
    parse_with(text, &Tolerances::default())
}

pub fn parse_with(text: &str, tol: &Tolerances) -> Result<ProgramScript> {
    let v: Value = serde_json::from_str(text).map_err(|e| QspError::Validation(format!("malformed JSON: {e}")))?;
    if !v.is_object() {
        return Err(err("$", "script must be a JSON object"));
    }
    let d = as_usize(get(&v, "d", "$")?, "d")?;
    if d < 2 {
        return Err(err("d", "register dimension must be at least 2"));
    }
    let registers = match v.get("registers") {
        Some(r) => as_usize(r, "registers")?,
        None => 1,
    };
    if registers == 0 {
        return Err(err("registers", "at least one register is required"));
    }
    let total = (d as u128).checked_pow(registers as u32).unwrap_or(u128::MAX);
    if total > MAX_TOTAL_DIM as u128 {
        return Err(err(
            "registers",
            format!("total dimension {total} exceeds the cap {MAX_TOTAL_DIM} (four program registers must fit 2^12)"),
        ));
    }
    let steps_v = get(&v, "steps", "$")?.as_array().ok_or_else(|| err("steps", "expected an array"))?;
    let steps = steps_v
        .iter()
        .enumerate()
        .map(|(i, s)| parse_step(s, i, d, registers, tol))
        .collect::<Result<Vec<_>>>()?;
    let input_state = parse_state(get(&v, "input_state", "$")?, d, registers, tol)?;
    Ok(ProgramScript { d, registers, steps, input_state })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Direct,
    Stored,
}

impl std::str::FromStr for RunMode {
    type Err = QspError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(RunMode::Direct),
            "stored" => Ok(RunMode::Stored),
            other => Err(QspError::validation(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: RunMode,
    pub seed: u64,
    /// Number of independent herald paths; outputs are averaged.
    pub shots: usize,
    pub tolerances: Tolerances,
    /// Include wall-clock time (makes the report non-reproducible).
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { mode: RunMode::Stored, seed: 0, shots: 1, tolerances: Tolerances::default(), timing: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeraldEntry {
    pub shot: usize,
    /// First step of the run this entry belongs to.
    pub step: usize,
    /// `"compose"` or `"recover"`.
    pub stage: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ancilla_bit: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disposal: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<usize>,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepAccount {
    pub step: usize,
    pub kind: StepKind,
    pub label: String,
    pub symmetric: bool,
    /// Program states (unitary steps) or Choi copies (channel steps) consumed per shot.
    pub copies: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub mode: RunMode,
    pub seed: u64,
    pub shots: usize,
    pub d: usize,
    pub registers: usize,
    #[serde(with = "json::cmatrix")]
    pub direct_output: CMatrix,
    #[serde(skip_serializing_if = "Option::is_none", serialize_with = "opt_matrix")]
    pub stored_output: Option<CMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
    pub herald_log: Vec<HeraldEntry>,
    pub steps: Vec<StepAccount>,
    pub program_copies_consumed: usize,
    pub random_dits_consumed: usize,
    pub restarts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

fn opt_matrix<S: serde::Serializer>(m: &Option<CMatrix>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match m {
        Some(m) => json::cmatrix::serialize(m, s),
        None => s.serialize_none(),
    }
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

pub fn run_direct(script: &ProgramScript) -> Result<CMatrix> {
    let mut rho = script.input_state.matrix().clone();
    for s in &script.steps {
        rho = s.channel.apply_matrix(&rho)?;
    }
    Ok(rho)
}

struct StoredShot {
    output: CMatrix,
    log: Vec<HeraldEntry>,
    copies: Vec<usize>,
}

fn run_stored_once(script: &ProgramScript, shot: usize, rng: &mut QspRng) -> Result<StoredShot> {
    let mut rho = script.input_state.clone();
    let mut log = Vec::new();
    let mut copies = vec![0usize; script.steps.len()];
    let mut i = 0;
    while i < script.steps.len() {
        let step = &script.steps[i];
        if step.kind == StepKind::Channel {
            let c1 = choi_of_channel(&step.channel)?;
            let rec = povm_recover_sampled(&c1, Some(&c1), &rho, rng)?;
            log.push(HeraldEntry {
                shot,
                step: i,
                stage: "recover",
                ancilla_bit: None,
                disposal: None,
                branch: Some(rec.herald.branch),
                probability: rec.herald.probability,
            });
            copies[i] = rec.copies_used;
            rho = DensityOperator::new(hermitian_part(rec.output))?;
            i += 1;
            continue;
        }
        let start = i;
        while i < script.steps.len() && script.steps[i].kind == StepKind::Unitary {
            i += 1;
        }
        // Matrix-product order: the latest gate is leftmost.
        let gates_list: Vec<UnitaryGate> =
            script.steps[start..i].iter().rev().map(|s| s.unitary.clone().expect("unitary step")).collect();
        let seq = compose_sequence(&gates_list, SequenceMode::Auto, rng)?;
        for h in &seq.log {
            log.push(HeraldEntry {
                shot,
                step: start,
                stage: "compose",
                ancilla_bit: Some(h.herald.ancilla_bit),
                disposal: h.herald.disposal,
                branch: None,
                probability: h.herald.probability,
            });
        }
        for (k, s) in script.steps[start..i].iter().enumerate() {
            let g = s.unitary.as_ref().expect("unitary step");
            copies[start + k] = if g.symmetry_defect() <= 1e-9 { 1 } else { 2 };
        }
        let program = seq.program.frame_corrected();
        let rec = povm_recover_sampled(&program.choi, None, &rho, rng)?;
        log.push(HeraldEntry {
            shot,
            step: start,
            stage: "recover",
            ancilla_bit: None,
            disposal: None,
            branch: Some(rec.herald.branch),
            probability: rec.herald.probability,
        });
        rho = DensityOperator::new(hermitian_part(rec.output))?;
    }
    Ok(StoredShot { output: rho.into_matrix(), log, copies })
}

fn hermitian_part(m: CMatrix) -> CMatrix {
    (&m + m.adjoint()) * c(0.5, 0.0)
}

/// Runs a script. Stored mode fails with a numerical error when the stored and
/// direct outputs disagree beyond `tolerances.fidelity`.
pub fn run(script: &ProgramScript, opts: &RunOptions) -> Result<RunReport> {
    let started = Instant::now();
    let direct = run_direct(script)?;
    let steps_account = |copies: &[usize]| -> Vec<StepAccount> {
        script
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| StepAccount {
                step: i,
                kind: s.kind,
                label: s.label.clone(),
                symmetric: s.unitary.as_ref().is_some_and(|u| u.symmetry_defect() <= 1e-9),
                copies: copies.get(i).copied().unwrap_or(0),
            })
            .collect()
    };
    let mut report = RunReport {
        schema: REPORT_SCHEMA,
        mode: opts.mode,
        seed: opts.seed,
        shots: opts.shots,
        d: script.d,
        registers: script.registers,
        direct_output: direct.clone(),
        stored_output: None,
        fidelity: None,
        herald_log: Vec::new(),
        steps: steps_account(&[]),
        program_copies_consumed: 0,
        random_dits_consumed: 0,
        restarts: 0,
        wall_time_ms: None,
    };
    if opts.mode == RunMode::Stored {
        if opts.shots == 0 {
            return Err(QspError::validation("shots must be at least 1"));
        }
        let mut rng = QspRng::seed_from_u64(opts.seed);
        let n = script.total_dim();
        let mut mean = CMatrix::zeros(n, n);
        let mut first_copies = Vec::new();
        for shot in 0..opts.shots {
            let s = run_stored_once(script, shot, &mut rng)?;
            mean += &s.output;
            report.herald_log.extend(s.log);
            report.program_copies_consumed += s.copies.iter().sum::<usize>();
            if shot == 0 {
                first_copies = s.copies;
            }
        }
        mean /= c(opts.shots as f64, 0.0);
        let f = fidelity_matrices(&direct, &mean);
        report.steps = steps_account(&first_copies);
        report.stored_output = Some(mean);
        report.fidelity = Some(f);
        if f < 1.0 - opts.tolerances.fidelity {
            return Err(QspError::Numerical(format!(
                "stored-vs-direct fidelity {f} below 1 - {:e}",
                opts.tolerances.fidelity
            )));
        }
    }
    if opts.timing {
        report.wall_time_ms = Some(started.elapsed().as_secs_f64() * 1e3);
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct GateDemo {
    pub name: String,
    pub registers: usize,
    pub symmetry_defect: f64,
    pub symmetric: bool,
    /// Frame-corrected fidelity to `prog(U)` for every herald branch.
    pub branch_fidelities: Vec<f64>,
    pub min_fidelity: f64,
    pub generalized_permutation: bool,
    /// Distinct nonzero moduli of the affine-representation entries (rounded to 1e-9).
    pub affine_entry_moduli: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniversalReport {
    pub gates: Vec<GateDemo>,
}

/// Teleports each gate of the universal set from its single program state and
/// classifies its affine representation.
///
/// The program of `U` is joined to an identity program (a plain Bell pair), so
/// the adjointor rotation is the affine representation of `U†`: a mere
/// relabelling of Bell outcomes for a generalised permutation.
pub fn demo_universal_set() -> Result<UniversalReport> {
    let mut out = Vec::new();
    for name in ["H", "S", "T", "CNOT", "CZ", "TOFFOLI"] {
        let (g, qubits) = gates::by_name(name)?;
        let dim = g.dim();
        let prog = program_state_of_unitary(&g);
        let id = program_state_of_unitary(&UnitaryGate::identity(dim));
        let branches = compose_branches(&id, &prog, RotationVariant::AffineInverse)?;
        let branch_fidelities: Vec<f64> = branches.iter().map(|b| b.program.frame_corrected().fidelity(&prog)).collect();
        let min_fidelity = branch_fidelities.iter().cloned().fold(1.0, f64::min);
        // Clifford-ness refers to the multi-qubit Pauli group, i.e. Pauli strings.
        let rep = affine_rep(&g, &tensor_basis(2, qubits, BasisFlavor::Weyl)?)?;
        let mut moduli: Vec<f64> = rep
            .matrix()
            .iter()
            .map(|z| (z.norm() * 1e9).round() / 1e9)
            .filter(|&m| m > 0.0)
            .collect();
        moduli.sort_by(|a, b| a.partial_cmp(b).unwrap());
        moduli.dedup();
        out.push(GateDemo {
            name: name.to_string(),
            registers: qubits,
            symmetry_defect: g.symmetry_defect(),
            symmetric: max_abs_diff(g.matrix(), &g.matrix().transpose()) <= 1e-12,
            branch_fidelities,
            min_fidelity,
            generalized_permutation: rep.is_generalized_permutation(),
            affine_entry_moduli: moduli,
        });
    }
    Ok(UniversalReport { gates: out })
}
