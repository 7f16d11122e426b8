//! Small dense-vector helpers.
//!
//! State dimensions in this toolkit are tiny (tens of components), so plain
//! `Vec<f64>` slices with a handful of free functions beat a matrix library.

/// Euclidean norm of a slice.
pub fn norm(v: &[f64]) -> f64 {
    norm_sq(v).sqrt()
}

/// Squared Euclidean norm.
pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Componentwise `a + b`. Panics on length mismatch.
pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Componentwise `a - b`. Panics on length mismatch.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `s * v`.
pub fn scale(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| s * x).collect()
}

/// In-place `y += s * x`.
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Dense matrix (rows of equal length) times vector.
pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| {
            assert_eq!(row.len(), v.len());
            row.iter().zip(v).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// True iff every component is finite.
pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_of_345() {
        assert_eq!(norm(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn mat_vec_identity() {
        let m = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(mat_vec(&m, &[2.5, -1.0]), vec![2.5, -1.0]);
    }

    #[test]
    fn axpy_accumulates() {
        let mut y = vec![1.0, 2.0];
        axpy(&mut y, 2.0, &[10.0, 20.0]);
        assert_eq!(y, vec![21.0, 42.0]);
    }
}
