use super::CgError;

/// Compressed sparse row matrix.
///
/// `row_ptr`, `col_idx` and `values` are the three separately tracked data
/// structures Ar, Ac and Av. Indices are kept as 64-bit words so every
/// structure has the same word size in the simulated address space.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub row_ptr: Vec<u64>,
    pub col_idx: Vec<u64>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_nnz(&self, row: usize) -> usize {
        (self.row_ptr[row + 1] - self.row_ptr[row]) as usize
    }

    /// `c * I` of dimension `n`.
    pub fn scaled_identity(n: usize, c: f64) -> Self {
        Self {
            n_rows: n,
            row_ptr: (0..=n as u64).collect(),
            col_idx: (0..n as u64).collect(),
            values: vec![c; n],
        }
    }

    /// Check the structural CSR invariants.
    pub fn validate(&self) -> Result<(), CgError> {
        let bad = |why: &str| Err(CgError::InvalidMatrix(why.to_string()));
        if self.row_ptr.len() != self.n_rows + 1 {
            return bad("row_ptr length is not n_rows + 1");
        }
        if self.col_idx.len() != self.values.len() {
            return bad("col_idx and values differ in length");
        }
        if self.row_ptr[0] != 0 {
            return bad("row_ptr[0] != 0");
        }
        if self.row_ptr[self.n_rows] as usize != self.nnz() {
            return bad("row_ptr[n_rows] != nnz");
        }
        if self.row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return bad("row_ptr is decreasing");
        }
        if self.col_idx.iter().any(|&c| c as usize >= self.n_rows) {
            return bad("column index out of range");
        }
        Ok(())
    }

    /// `y = A x` with plain arithmetic, in row order.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_rows);
        (0..self.n_rows)
            .map(|i| {
                let (lo, hi) = (self.row_ptr[i] as usize, self.row_ptr[i + 1] as usize);
                self.col_idx[lo..hi]
                    .iter()
                    .zip(&self.values[lo..hi])
                    .map(|(&c, &v)| v * x[c as usize])
                    .sum()
            })
            .collect()
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_ptr[i] as usize, self.row_ptr[i + 1] as usize);
        self.col_idx[lo..hi]
            .iter()
            .position(|&c| c as usize == j)
            .map_or(0.0, |k| self.values[lo + k])
    }
}

/// Diagonal weight of the 27-point stencil; every off-diagonal coupling is -1.
pub const STENCIL_DIAGONAL: f64 = 26.0;
pub const STENCIL_OFF_DIAGONAL: f64 = -1.0;

/// 3D Poisson matrix on a `side`³ grid discretised with the 27-point stencil.
///
/// Row `(z * side + y) * side + x` couples the grid point to itself and to every
/// neighbour at Chebyshev distance 1; rows at the boundary are truncated.
/// Columns within a row are sorted.
pub fn generate_poisson27(side: usize) -> Result<CsrMatrix, CgError> {
    if side < 2 {
        return Err(CgError::InvalidSide(side));
    }
    let n_rows = side.checked_pow(3).ok_or(CgError::Capacity { side })?;
    let interior = (3 * side as u128).saturating_sub(2).pow(3);
    // row_ptr + col_idx + values, 8 bytes each
    let bytes = (n_rows as u128 + 1 + 2 * interior) * 8;
    if bytes > isize::MAX as u128 {
        return Err(CgError::Capacity { side });
    }
    let nnz = interior as usize;

    let mut row_ptr = Vec::with_capacity(n_rows + 1);
    let mut col_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    row_ptr.push(0u64);
    let s = side as isize;
    for z in 0..s {
        for y in 0..s {
            for x in 0..s {
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (nx, ny, nz) = (x + dx, y + dy, z + dz);
                            if nx < 0 || ny < 0 || nz < 0 || nx >= s || ny >= s || nz >= s {
                                continue;
                            }
                            col_idx.push(((nz * s + ny) * s + nx) as u64);
                            values.push(if (dx, dy, dz) == (0, 0, 0) {
                                STENCIL_DIAGONAL
                            } else {
                                STENCIL_OFF_DIAGONAL
                            });
                        }
                    }
                }
                row_ptr.push(col_idx.len() as u64);
            }
        }
    }
    debug_assert_eq!(col_idx.len(), nnz);
    Ok(CsrMatrix {
        n_rows,
        row_ptr,
        col_idx,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force neighbour count: enumerate every other grid point and test
    /// Chebyshev distance.
    fn brute_force_row_nnz(side: usize, row: usize) -> usize {
        let coord = |i: usize| (i % side, (i / side) % side, i / (side * side));
        let (x, y, z) = coord(row);
        (0..side.pow(3))
            .filter(|&j| {
                let (a, b, c) = coord(j);
                x.abs_diff(a) <= 1 && y.abs_diff(b) <= 1 && z.abs_diff(c) <= 1
            })
            .count()
    }

    #[test]
    fn side_two_is_complete() {
        let a = generate_poisson27(2).unwrap();
        assert_eq!(a.n_rows, 8);
        assert!((0..8).all(|i| a.row_nnz(i) == 8));
        a.validate().unwrap();
    }

    #[test]
    fn side_three_matches_enumeration() {
        let a = generate_poisson27(3).unwrap();
        assert_eq!(a.n_rows, 27);
        assert_eq!(a.row_nnz(13), 27);
        assert_eq!(a.row_nnz(0), 8);
        for row in 0..27 {
            assert_eq!(a.row_nnz(row), brute_force_row_nnz(3, row), "row {row}");
        }
    }

    #[test]
    fn side_five_matches_enumeration() {
        let a = generate_poisson27(5).unwrap();
        for row in 0..125 {
            assert_eq!(a.row_nnz(row), brute_force_row_nnz(5, row));
        }
    }

    #[test]
    fn symmetric_positive_definite() {
        let a = generate_poisson27(6).unwrap();
        a.validate().unwrap();
        for i in 0..a.n_rows {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[k as usize] as usize;
                assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..8 {
            let x: Vec<f64> = (0..a.n_rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ax = a.mul_vec(&x);
            let xax: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
            assert!(xax > 0.0);
        }
    }

    #[test]
    fn invalid_and_oversized_sides() {
        assert!(matches!(generate_poisson27(1), Err(CgError::InvalidSide(1))));
        assert!(matches!(generate_poisson27(1 << 40), Err(CgError::Capacity { .. })));
    }

    #[test]
    fn validate_catches_bad_columns() {
        let mut a = generate_poisson27(2).unwrap();
        a.col_idx[3] = 99;
        assert!(a.validate().is_err());
    }
}
