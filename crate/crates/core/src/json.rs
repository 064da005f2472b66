//! JSON wire formats. Complex numbers are `[re, im]` pairs; matrices are row-major.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{QspError, Result};
use crate::linalg::{c, CMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl MatrixJson {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let z = m[(i, j)];
                data.push([z.re, z.im]);
            }
        }
        MatrixJson { rows, cols, data }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        if self.rows == 0 || self.cols == 0 {
            return Err(QspError::validation("matrix must have positive rows and cols"));
        }
        if self.data.len() != self.rows * self.cols {
            return Err(QspError::validation(format!(
                "matrix data has {} entries, expected {}x{} = {}",
                self.data.len(),
                self.rows,
                self.cols,
                self.rows * self.cols
            )));
        }
        if self.data.iter().any(|[re, im]| !re.is_finite() || !im.is_finite()) {
            return Err(QspError::validation("matrix has non-finite entries"));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |i, j| {
            let [re, im] = self.data[i * self.cols + j];
            c(re, im)
        }))
    }
}

pub fn matrix_to_value(m: &CMatrix) -> serde_json::Value {
    serde_json::to_value(MatrixJson::from_matrix(m)).expect("matrix serialises")
}

pub fn matrix_from_value(v: &serde_json::Value) -> Result<CMatrix> {
    let mj: MatrixJson =
        serde_json::from_value(v.clone()).map_err(|e| QspError::validation(format!("bad matrix JSON: {e}")))?;
    mj.to_matrix()
}

pub fn matrix_from_str(s: &str) -> Result<CMatrix> {
    let mj: MatrixJson = serde_json::from_str(s).map_err(|e| QspError::validation(format!("bad matrix JSON: {e}")))?;
    mj.to_matrix()
}

/// `#[serde(with = "crate::json::cmatrix")]` adaptor.
pub mod cmatrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson::from_matrix(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CMatrix, D::Error> {
        let mj = MatrixJson::deserialize(d)?;
        mj.to_matrix().map_err(serde::de::Error::custom)
    }
}

/// Same as [`cmatrix`] for `Vec<CMatrix>`.
pub mod cmatrix_vec {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[CMatrix], s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<MatrixJson> = ms.iter().map(MatrixJson::from_matrix).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<CMatrix>, D::Error> {
        let v = Vec::<MatrixJson>::deserialize(d)?;
        v.iter().map(|m| m.to_matrix().map_err(serde::de::Error::custom)).collect()
    }
}
