use rand::Rng;

/// Dense 2-D array of 64-bit floats in row-major order.
///
/// Tensors are plain immutable values: every operation allocates its
/// result. They are `Send + Sync` and safe to share read-only across
/// threads; mutation happens only through the optimizer, which owns its
/// parameters exclusively.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows * cols");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    /// Build from nested rows; rows must all have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "from_rows needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor { rows: rows.len(), cols, data }
    }

    /// Entries drawn uniformly from `[lo, hi)`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { rows, cols, data }
    }

    /// Glorot uniform initialisation: `U[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let s = (6.0 / (rows + cols) as f64).sqrt();
        Tensor::uniform(rows, cols, -s, s, rng)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul inner dimensions must match");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Tensor { rows: m, cols: n, data: out }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor { rows: self.cols, cols: self.rows, data: out }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute entry-wise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Exact bit-level equality, including shapes.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Numerically stable softmax of a single row.
///
/// Entries are shifted by the row maximum before exponentiation, so the
/// result is invariant under constant shifts and immune to overflow.
pub fn stable_softmax(row: &Tensor) -> Tensor {
    assert!(row.rows() == 1 && row.cols() >= 1, "stable_softmax expects a non-empty row");
    assert!(row.all_finite(), "stable_softmax expects finite entries");
    let mut out = row.clone();
    softmax_slice(out.data_mut());
    out
}

/// In-place stable softmax over a slice. Shared kernel for the public
/// `stable_softmax`, the tape's row-softmax, and the segment softmax.
pub(crate) fn softmax_slice(xs: &mut [f64]) {
    debug_assert!(!xs.is_empty());
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_small() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transpose_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::uniform(4, 7, -1.0, 1.0, &mut rng);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn softmax_uniform_on_equal_entries() {
        let s = stable_softmax(&Tensor::from_rows(&[vec![0.0, 0.0]]));
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_hand_computation() {
        // [ln 1, ln 2, ln 3] -> [1/6, 2/6, 3/6]
        let s = stable_softmax(&Tensor::from_rows(&[vec![
            1.0f64.ln(),
            2.0f64.ln(),
            3.0f64.ln(),
        ]]));
        for (got, want) in s.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_no_overflow_on_large_entries() {
        let s = stable_softmax(&Tensor::from_rows(&[vec![1000.0, 1000.0]]));
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_sums_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..9);
            let row = Tensor::uniform(1, n, -30.0, 30.0, &mut rng);
            let shift: f64 = rng.gen_range(-100.0..100.0);
            let shifted = row.map(|x| x + shift);
            let a = stable_softmax(&row);
            let b = stable_softmax(&shifted);
            assert!((a.sum() - 1.0).abs() < 1e-12);
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "non-empty row")]
    fn softmax_rejects_empty_row() {
        stable_softmax(&Tensor::new(1, 0, vec![]));
    }
}
