//! Dense least squares by column-pivoted Householder QR.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold on |R_kk| / max |R_ii| below which a column is rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Minimizes ‖A x − b‖₂ for a row-major `rows × cols` matrix.
pub fn least_squares(a: &[f64], rows: usize, cols: usize, b: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(b.len(), rows);
    if rows < cols {
        return Err(Error::RankDeficient { rank: rows, unknowns: cols });
    }
    let qr = DMatrix::from_row_slice(rows, cols, a).col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..cols).map(|k| r[(k, k)].abs()).collect();
    let top = diag.iter().copied().fold(0.0, f64::max);
    let rank = diag.iter().filter(|&&d| d > RANK_TOLERANCE * top).count();
    if rank < cols {
        return Err(Error::RankDeficient { rank, unknowns: cols });
    }
    let mut rhs = DVector::from_column_slice(b);
    qr.q_tr_mul(&mut rhs);
    let mut x = rhs.rows(0, cols).into_owned();
    if !r.solve_upper_triangular_mut(&mut x) {
        return Err(Error::RankDeficient { rank, unknowns: cols });
    }
    qr.p().inv_permute_rows(&mut x);
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_square_system() {
        let a = [2.0, 1.0, 1.0, 3.0];
        let x = least_squares(&a, 2, 2, &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn overdetermined_line_fit() {
        // y = 1 + 2t sampled exactly.
        let ts = [0.0, 1.0, 2.0, 3.0];
        let a: Vec<f64> = ts.iter().flat_map(|&t| [1.0, t]).collect();
        let b: Vec<f64> = ts.iter().map(|&t| 1.0 + 2.0 * t).collect();
        let x = least_squares(&a, 4, 2, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-13 && (x[1] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn residual_is_orthogonal_to_columns() {
        let a = [1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 4.0];
        let b = [0.0, 2.0, 1.0, 5.0];
        let x = least_squares(&a, 4, 2, &b).unwrap();
        let r: Vec<f64> = (0..4).map(|i| b[i] - a[2 * i] * x[0] - a[2 * i + 1] * x[1]).collect();
        for j in 0..2 {
            let dot: f64 = (0..4).map(|i| a[2 * i + j] * r[i]).sum();
            assert!(dot.abs() < 1e-12);
        }
    }

    #[test]
    fn pivoted_solution_is_unpermuted() {
        // Column scales force pivoting away from the natural order.
        let a = [1e-3, 5.0, 1.0, 2e-3, 1.0, 0.0, 3e-3, 2.0, 4.0, 1e-3, 0.5, 1.0];
        let x_true = [1000.0, -1.0, 2.0];
        let b: Vec<f64> = (0..4).map(|i| (0..3).map(|j| a[3 * i + j] * x_true[j]).sum()).collect();
        let x = least_squares(&a, 4, 3, &b).unwrap();
        for (u, v) in x.iter().zip(x_true) {
            assert!((u - v).abs() < 1e-8 * v.abs().max(1.0), "{x:?}");
        }
    }

    #[test]
    fn duplicate_column_reports_rank() {
        let a = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        match least_squares(&a, 3, 2, &[1.0, 2.0, 3.0]) {
            Err(Error::RankDeficient { rank, unknowns }) => assert_eq!((rank, unknowns), (1, 2)),
            other => panic!("{other:?}"),
        }
    }
}
