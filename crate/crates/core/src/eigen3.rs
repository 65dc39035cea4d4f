//! Cyclic Jacobi eigen-decomposition for symmetric 3×3 matrices.

use crate::frames::{Mat3, Vec3};

/// Eigenvalues in ascending order with matching unit eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricEigen3 {
    pub values: [f64; 3],
    pub vectors: [Vec3; 3],
}

/// Decomposes the symmetric part of `m`. Sweeps until off-diagonal mass is
/// below machine precision relative to the diagonal.
pub fn symmetric_eigen3(m: &Mat3) -> SymmetricEigen3 {
    let mut a = 0.5 * (m + m.transpose());
    let mut v = Mat3::identity();
    for _ in 0..50 {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        let diag = a[(0, 0)].powi(2) + a[(1, 1)].powi(2) + a[(2, 2)].powi(2);
        if off <= f64::EPSILON.powi(2) * diag * 1e-4 || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Mat3::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= rot;
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    SymmetricEigen3 {
        values: order.map(|i| a[(i, i)]),
        vectors: order.map(|i| v.column(i).normalize()),
    }
}
