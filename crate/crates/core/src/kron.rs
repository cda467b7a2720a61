//! Kronecker products.

use nalgebra::DMatrix;

/// `A ⊗ B`: the block matrix whose `(i, j)` block is `A[i, j] * B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// `A ⊗ B ⊗ C`.
pub fn kron3(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    kron(&kron(a, b), c)
}

/// Kronecker product of three row vectors, with the last factor varying
/// fastest.
pub fn kron3_vec(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len() * c.len());
    for &x in a {
        for &y in b {
            let xy = x * y;
            out.extend(c.iter().map(|&z| xy * z));
        }
    }
    out
}
