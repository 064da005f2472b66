//! Stored-program quantum computation with Choi program states.
//!
//! Dense small-dimension simulation of program-state preparation, heralded
//! channel recovery, symmetry-based gate teleportation and gen-extreme channel
//! synthesis.

pub mod channels;
pub mod error;
pub mod gates;
pub mod genextreme;
pub mod json;
pub mod linalg;
pub mod opbasis;
pub mod progvm;
pub mod random;
pub mod recovery;
pub mod states;
pub mod teleport;


pub use error::{QspError, Result};
pub use linalg::{CMatrix, CVector};
pub use channels::{ChoiNormalization, ChoiState, KrausChannel, ProgramState};
pub use opbasis::{AffineRep, BasisFlavor, PauliBasis};
pub use states::{DensityOperator, Tolerances, UnitaryGate};
