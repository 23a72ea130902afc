//! Small dense helpers shared by the encoder, losses and optimizer.

use ndarray::{Array2, ArrayView2, Axis};

/// A set of named, contiguous `f64` parameter tensors.
///
/// The optimizer walks `tensors_mut` of the parameters and `tensors` of the
/// gradients in lockstep, so both must list tensors in the same order.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// All scalars flattened in tensor order.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }
}

/// Rows of `m` at `indices`, in order.
pub fn gather_rows(m: &ArrayView2<f64>, indices: &[usize]) -> Array2<f64> {
    m.select(Axis(0), indices)
}

/// `out[indices[r]] += rows[r]` for every row `r`.
pub fn scatter_add_rows(out: &mut Array2<f64>, indices: &[usize], rows: &ArrayView2<f64>) {
    for (r, &i) in indices.iter().enumerate() {
        let mut dst = out.row_mut(i);
        dst += &rows.row(r);
    }
}

/// Square Frobenius norm.
pub fn sq_norm(m: &ArrayView2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// `n × n` identity.
pub fn identity(n: usize) -> Array2<f64> {
    Array2::eye(n)
}

/// `rows × cols` truncation matrix `[I 0]` (`rows <= cols`).
pub fn truncation(rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for i in 0..rows.min(cols) {
        m[[i, i]] = 1.0;
    }
    m
}

impl<A: Parameters, B: Parameters> Parameters for (A, B) {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = self.0.tensors();
        out.extend(self.1.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = self.0.tensors_mut();
        out.extend(self.1.tensors_mut());
        out
    }
}

/// Independent deterministic sub-seed for `(seed, version, stream)`.
pub fn derive_seed(seed: u64, version: usize, stream: u64) -> u64 {
    // splitmix64 finaliser over a simple combination.
    let mut z = seed
        .wrapping_add((version as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `m` in row-major order; products with a transposed left operand may
/// come back column-major, which `Parameters` cannot expose as a slice.
pub fn row_major(m: Array2<f64>) -> Array2<f64> {
    if m.is_standard_layout() {
        m
    } else {
        m.as_standard_layout().into_owned()
    }
}
