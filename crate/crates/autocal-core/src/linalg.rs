//! Kernel extraction for the singular matrices produced by the Lagrange
//! step of the closed-form solvers.

use nalgebra::{DMatrix, DVector};

/// Singular-value summary of a kernel extraction.
pub(crate) struct KernelVector {
    /// Right singular vector of the smallest singular value.
    pub vector: DVector<f64>,
    /// Largest singular value.
    pub sigma_max: f64,
    /// Second-smallest singular value; a vanishing value means the kernel
    /// has dimension greater than one.
    pub sigma_second: f64,
}

/// Extracts the right singular vector associated with the smallest singular
/// value of a square matrix, together with the spectrum summary needed for
/// rank checks.
pub(crate) fn kernel_vector(a: DMatrix<f64>) -> KernelVector {
    let n = a.nrows();
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("SVD of a finite matrix computes V");

    // nalgebra does not guarantee ordering; sort indices by singular value.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));

    KernelVector {
        vector: v_t.row(order[0]).transpose(),
        sigma_max: svd.singular_values[order[n - 1]],
        sigma_second: svd.singular_values[order[1]],
    }
}
