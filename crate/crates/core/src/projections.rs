//! Euclidean projections onto the scaled simplex {z >= 0, sum z = r} and onto
//! Sigma_t, the nonnegative matrices whose column j sums to b_j.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2};

use crate::{Error, Result};

/// Radius of a scaled simplex; always positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SimplexTarget(f64);

impl SimplexTarget {
    pub fn new(radius: f64) -> Result<Self> {
        if radius > 0.0 && radius.is_finite() {
            Ok(Self(radius))
        } else {
            Err(Error::invalid(format!("simplex radius must be positive, got {radius}")))
        }
    }

    pub fn radius(self) -> f64 {
        self.0
    }
}

/// argmin { ||z - v|| : z >= 0, sum z = r }.
pub fn project_simplex(v: ArrayView1<f64>, r: f64) -> Result<Array1<f64>> {
    let target = SimplexTarget::new(r)?;
    if v.is_empty() {
        return Err(Error::invalid("cannot project an empty vector"));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("non-finite entry {x}")));
    }
    let mut out = v.to_vec();
    let mut scratch = Vec::with_capacity(out.len());
    project_simplex_in_place(&mut out, target.radius(), &mut scratch);
    Ok(Array1::from(out))
}

/// Threshold for the sort-based projection: z_i = max(v_i - theta, 0).
pub(crate) fn simplex_threshold(v: &[f64], r: f64, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend_from_slice(v);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in scratch.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - r) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    theta
}

pub(crate) fn project_simplex_in_place(v: &mut [f64], r: f64, scratch: &mut Vec<f64>) {
    let theta = simplex_threshold(v, r, scratch);
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Projects each column j of `m` onto the simplex of radius b_j.
pub fn project_sigma(m: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array2<f64>> {
    if m.ncols() != b.len() {
        return Err(Error::dim(format!(
            "matrix has {} columns but {} column masses were given",
            m.ncols(),
            b.len()
        )));
    }
    if let Some((j, bj)) = b.iter().enumerate().find(|(_, bj)| !(**bj > 0.0) || !bj.is_finite()) {
        return Err(Error::invalid(format!("column mass b_{j} = {bj} must be positive")));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let mut out = m.to_owned();
    project_sigma_in_place(out.view_mut(), b);
    Ok(out)
}

pub(crate) fn project_sigma_in_place(mut m: ArrayViewMut2<f64>, b: ArrayView1<f64>) {
    let mut col = Vec::with_capacity(m.nrows());
    let mut scratch = Vec::with_capacity(m.nrows());
    for (mut column, &bj) in m.columns_mut().into_iter().zip(b.iter()) {
        col.clear();
        col.extend(column.iter().copied());
        project_simplex_in_place(&mut col, bj, &mut scratch);
        for (dst, src) in column.iter_mut().zip(&col) {
            *dst = *src;
        }
    }
}
