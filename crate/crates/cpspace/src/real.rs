//! Scalar abstraction for the numeric kernels.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar the kernels are generic over: f32 or f64.
pub trait Real:
    Float + FromPrimitive + std::iter::Sum + std::fmt::Debug + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("scalar conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Euclidean inner product.
pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Matrix-vector product for a dense row-major square matrix.
pub fn mat_vec<S: Real>(m: &[Vec<S>], v: &[S]) -> Vec<S> {
    m.iter().map(|row| dot(row, v)).collect()
}

pub fn trace<S: Real>(m: &[Vec<S>]) -> S {
    m.iter().enumerate().map(|(i, row)| row[i]).sum()
}

/// Pairwise (cascade) summation; associative reduction with O(log n) error
/// growth, deterministic for a fixed input order.
pub fn pairwise_sum<S: Real>(values: &[S]) -> S {
    match values.len() {
        0 => S::zero(),
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

/// Mean and standard error of the mean via pairwise summation.
pub fn mean_stderr<S: Real>(values: &[S]) -> (S, S) {
    let n = S::of(values.len() as f64);
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, S::zero());
    }
    let sq: Vec<S> = values.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - S::one());
    (mean, (var / n).sqrt())
}
