use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BankMode {
    #[default]
    StandardBasis,
    RandomQr,
}

/// `m` orthonormal columns in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBank {
    pub columns: DMatrix<f64>,
    pub mode: BankMode,
}

impl OrthonormalBank {
    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn count(&self) -> usize {
        self.columns.ncols()
    }
}

pub fn build_orthonormal_bank(
    count: usize,
    dim: usize,
    mode: BankMode,
    stream: &mut RngStream,
) -> Result<OrthonormalBank> {
    if dim < count {
        return Err(Error::Dimension(format!(
            "cannot fit {count} orthonormal columns in dimension {dim}"
        )));
    }
    let columns = match mode {
        BankMode::StandardBasis => DMatrix::identity(dim, count),
        BankMode::RandomQr => {
            let g = DMatrix::from_fn(dim, count, |_, _| StandardNormal.sample(stream));
            g.qr().q()
        }
    };
    Ok(OrthonormalBank { columns, mode })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_basis_is_identity() {
        let mut s = RngStream::new(0, 0);
        let b = build_orthonormal_bank(3, 3, BankMode::StandardBasis, &mut s).unwrap();
        assert_eq!(b.columns, DMatrix::identity(3, 3));
    }

    #[test]
    fn random_qr_is_orthonormal_and_deterministic() {
        let b1 = build_orthonormal_bank(9, 16, BankMode::RandomQr, &mut RngStream::new(5, 1)).unwrap();
        let b2 = build_orthonormal_bank(9, 16, BankMode::RandomQr, &mut RngStream::new(5, 1)).unwrap();
        assert_eq!(b1, b2);
        let gram = b1.columns.transpose() * &b1.columns;
        assert!((gram - DMatrix::<f64>::identity(9, 9)).abs().max() < 1e-10);
    }

    #[test]
    fn too_many_columns() {
        let r = build_orthonormal_bank(5, 4, BankMode::StandardBasis, &mut RngStream::new(0, 0));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
