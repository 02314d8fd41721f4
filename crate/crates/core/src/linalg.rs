//! Small dense helpers: symmetric eigen-decomposition by cyclic Jacobi rotations.

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return None;
        }
        Some(Self { n, data: rows.iter().flatten().copied().collect() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    s += self.get(i, j).powi(2);
                }
            }
        }
        s.sqrt()
    }
}

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
    pub sweeps: usize,
}

const OFF_DIAGONAL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigen-decomposition. Iterates until the off-diagonal
/// Frobenius norm drops to 1e-12 (or the sweep budget is exhausted).
pub fn symmetric_eigen(matrix: &SymMatrix) -> Eigen {
    let n = matrix.n;
    let mut a = matrix.clone();
    let mut v = SymMatrix::zeros(n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS && a.off_diagonal_norm() > OFF_DIAGONAL_TOL {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);

                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the original index order among equal eigenvalues.
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v.get(k, i)).collect()).collect();
    Eigen { values, vectors, sweeps }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(e: &Eigen, n: usize) -> SymMatrix {
        let mut m = SymMatrix::zeros(n);
        for (lambda, u) in e.values.iter().zip(&e.vectors) {
            for i in 0..n {
                for j in 0..n {
                    m.set(i, j, m.get(i, j) + lambda * u[i] * u[j]);
                }
            }
        }
        m
    }

    #[test]
    fn diagonal_matrix_is_already_decomposed() {
        let m = SymMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let e = symmetric_eigen(&m);
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert_eq!(e.vectors[0], vec![0.0, 1.0]);
        assert_eq!(e.sweeps, 0);
    }

    #[test]
    fn two_by_two_rank_one() {
        let m = SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let e = symmetric_eigen(&m);
        assert!((e.values[0] - 2.0).abs() < 1e-12);
        assert!(e.values[1].abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors[0][0].abs() - h).abs() < 1e-12);
        assert!((e.vectors[0][1].abs() - h).abs() < 1e-12);
    }

    #[test]
    fn reconstructs_dense_matrix() {
        let rows = vec![
            vec![4.0, 1.0, -2.0, 0.5],
            vec![1.0, 3.0, 0.0, 1.5],
            vec![-2.0, 0.0, 5.0, -1.0],
            vec![0.5, 1.5, -1.0, 2.0],
        ];
        let m = SymMatrix::from_rows(&rows).unwrap();
        let e = symmetric_eigen(&m);
        let r = reconstruct(&e, 4);
        for i in 0..4 {
            for j in 0..4 {
                assert!((r.get(i, j) - m.get(i, j)).abs() < 1e-10);
            }
        }
        assert!((e.values.iter().sum::<f64>() - m.trace()).abs() < 1e-10);
        for w in e.values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = e.vectors[i].iter().zip(&e.vectors[j]).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10);
            }
        }
    }
}
