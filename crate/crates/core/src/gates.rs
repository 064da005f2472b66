//! Named gates used by the demos and the program VM.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{QspError, Result};
use crate::linalg::{c, diag, CMatrix, ONE, ZERO};
use crate::states::UnitaryGate;

fn gate(m: CMatrix) -> UnitaryGate {
    UnitaryGate::new(m).expect("named gates are unitary")
}

pub fn x() -> UnitaryGate {
    gate(CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]))
}

pub fn z() -> UnitaryGate {
    gate(diag(&[ONE, c(-1.0, 0.0)]))
}

pub fn h() -> UnitaryGate {
    let s = c(FRAC_1_SQRT_2, 0.0);
    gate(CMatrix::from_row_slice(2, 2, &[s, s, s, -s]))
}

pub fn s() -> UnitaryGate {
    gate(diag(&[ONE, c(0.0, 1.0)]))
}

/// `Z^{1/4}`.
pub fn t() -> UnitaryGate {
    gate(diag(&[ONE, c(FRAC_1_SQRT_2, FRAC_1_SQRT_2)]))
}

pub fn cnot() -> UnitaryGate {
    let mut m = CMatrix::identity(4, 4);
    m[(2, 2)] = ZERO;
    m[(3, 3)] = ZERO;
    m[(2, 3)] = ONE;
    m[(3, 2)] = ONE;
    gate(m)
}

pub fn cz() -> UnitaryGate {
    gate(diag(&[ONE, ONE, ONE, c(-1.0, 0.0)]))
}

pub fn toffoli() -> UnitaryGate {
    let mut m = CMatrix::identity(8, 8);
    m[(6, 6)] = ZERO;
    m[(7, 7)] = ZERO;
    m[(6, 7)] = ONE;
    m[(7, 6)] = ONE;
    gate(m)
}

pub const NAMED: [&str; 8] = ["H", "S", "T", "CNOT", "CZ", "TOFFOLI", "X", "Z"];

/// Looks up a gate by name; returns the gate and the number of qubits it acts on.
pub fn by_name(name: &str) -> Result<(UnitaryGate, usize)> {
    Ok(match name.to_ascii_uppercase().as_str() {
        "H" => (h(), 1),
        "S" => (s(), 1),
        "T" => (t(), 1),
        "X" => (x(), 1),
        "Z" => (z(), 1),
        "CNOT" | "CX" => (cnot(), 2),
        "CZ" => (cz(), 2),
        "TOFFOLI" | "CCX" => (toffoli(), 3),
        other => return Err(QspError::validation(format!("unknown gate `{other}`"))),
    })
}
