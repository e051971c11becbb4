//! Small dense helpers shared by the solvers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn frob_dot(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn sq_dist1(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn sq_norm(a: ArrayView1<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub(crate) fn row_sums(z: ArrayView2<f64>) -> Array1<f64> {
    z.sum_axis(Axis(1))
}

pub(crate) fn all_finite2(z: &Array2<f64>) -> bool {
    z.iter().all(|v| v.is_finite())
}
