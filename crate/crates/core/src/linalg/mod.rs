//! Dense linear algebra generic over [`Scalar`](crate::Scalar).

pub mod decomp;
pub mod eigen;
pub mod matrix;

pub use decomp::{orthonormal_row_basis, random_orthogonal, svd, Svd};
pub use eigen::{symmetric_eigen, symmetric_eigenvalues, symmetric_top_eigen, EigenSystem, TopEigen};
pub use matrix::{axpy, dot, norm, Matrix};
