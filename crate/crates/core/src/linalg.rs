use nalgebra::DMatrix;
use ndarray::Array2;

/// Largest eigenvalue modulus of a square matrix, from a real Schur decomposition.
pub fn spectral_radius(matrix: &Array2<f64>) -> f64 {
    let (rows, cols) = matrix.dim();
    assert_eq!(rows, cols, "spectral radius needs a square matrix");
    if rows == 0 {
        return 0.0;
    }
    let m = DMatrix::from_fn(rows, cols, |i, j| matrix[[i, j]]);
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn diagonal_and_rotation() {
        assert!((spectral_radius(&array![[0.5, 0.0], [0.0, -2.0]]) - 2.0).abs() < 1e-12);
        // pure rotation scaled by 0.7: complex pair of modulus 0.7
        let (c, s) = (0.3f64.cos() * 0.7, 0.3f64.sin() * 0.7);
        assert!((spectral_radius(&array![[c, -s], [s, c]]) - 0.7).abs() < 1e-12);
        assert_eq!(spectral_radius(&Array2::zeros((3, 3))), 0.0);
    }
}
