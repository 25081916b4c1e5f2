use std::fmt::Write as _;
use std::path::Path;

use crate::solver::CscMatrix;

/// Coordinate-format Matrix Market file, 1-based indices.
pub fn write_matrix_market(path: impl AsRef<Path>, m: &CscMatrix) -> std::io::Result<()> {
    let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
    writeln!(s, "{} {} {}", m.nrows, m.ncols, m.nnz()).unwrap();
    for (i, j, v) in m.triplets() {
        writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v).unwrap();
    }
    std::fs::write(path, s)
}

/// Dense column vector in Matrix Market array format.
pub fn write_vector_market(path: impl AsRef<Path>, v: &[f64]) -> std::io::Result<()> {
    let mut s = String::from("%%MatrixMarket matrix array real general\n");
    writeln!(s, "{} 1", v.len()).unwrap();
    for x in v {
        writeln!(s, "{:.17e}", x).unwrap();
    }
    std::fs::write(path, s)
}
