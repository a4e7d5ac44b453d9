//! Dense exact linear algebra over F_p: Gaussian elimination, rank, canonical
//! solutions, nullspaces and rank factorizations. Sizes here are desk scale,
//! so everything is straightforward row reduction.

use crate::field::{PrimeField, Scalar};

#[derive(Clone, Debug)]
pub struct Mat {
    pub field: PrimeField,
    pub rows: usize,
    pub cols: usize,
    data: Vec<Scalar>,
}

impl Mat {
    pub fn zeros(field: PrimeField, rows: usize, cols: usize) -> Mat {
        Mat { field, rows, cols, data: vec![Scalar::ZERO; rows * cols] }
    }

    pub fn from_rows(field: PrimeField, rows: Vec<Vec<Scalar>>) -> Mat {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { field, rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> Scalar {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Scalar) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Scalar] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }

    /// Reduces in place to row echelon form; returns the pivot columns.
    pub fn row_reduce(&mut self) -> Vec<usize> {
        let f = self.field;
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..self.cols {
            if row == self.rows {
                break;
            }
            let Some(pr) = (row..self.rows).find(|&r| !self.at(r, col).is_zero()) else {
                continue;
            };
            self.swap_rows(row, pr);
            let inv = f.inv(self.at(row, col));
            for c in col..self.cols {
                let v = f.mul(self.at(row, c), inv);
                self.set(row, c, v);
            }
            for r in 0..self.rows {
                if r != row && !self.at(r, col).is_zero() {
                    let factor = self.at(r, col);
                    for c in col..self.cols {
                        let v = f.sub(self.at(r, c), f.mul(factor, self.at(row, c)));
                        self.set(r, c, v);
                    }
                }
            }
            pivots.push(col);
            row += 1;
        }
        pivots
    }

    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        m.row_reduce().len()
    }
}

/// Solves A x = b; returns the canonical solution with free variables set to
/// zero, or `None` when the system is inconsistent.
pub fn solve(a: &Mat, b: &[Scalar]) -> Option<Vec<Scalar>> {
    assert_eq!(a.rows, b.len());
    let f = a.field;
    let mut aug = Mat::zeros(f, a.rows, a.cols + 1);
    for r in 0..a.rows {
        for c in 0..a.cols {
            aug.set(r, c, a.at(r, c));
        }
        aug.set(r, a.cols, b[r]);
    }
    let pivots = aug.row_reduce();
    // Inconsistent iff a pivot lands in the augmented column.
    if pivots.last() == Some(&a.cols) {
        return None;
    }
    let mut x = vec![Scalar::ZERO; a.cols];
    for (r, &pc) in pivots.iter().enumerate() {
        x[pc] = aug.at(r, a.cols);
    }
    Some(x)
}

/// A basis of the nullspace of A, each vector canonical (free variable = 1).
pub fn nullspace(a: &Mat) -> Vec<Vec<Scalar>> {
    let f = a.field;
    let mut m = a.clone();
    let pivots = m.row_reduce();
    let pivot_set: std::collections::HashSet<usize> = pivots.iter().copied().collect();
    let mut basis = Vec::new();
    for free in 0..a.cols {
        if pivot_set.contains(&free) {
            continue;
        }
        let mut v = vec![Scalar::ZERO; a.cols];
        v[free] = Scalar::ONE;
        for (r, &pc) in pivots.iter().enumerate() {
            v[pc] = f.neg(m.at(r, free));
        }
        basis.push(v);
    }
    basis
}

/// Writes A as a sum of rank-1 outer products: A = sum_i u_i v_i^T, with
/// exactly rank(A) summands.
pub fn rank_factorization(a: &Mat) -> Vec<(Vec<Scalar>, Vec<Scalar>)> {
    let f = a.field;
    let mut m = a.clone();
    let mut out = Vec::new();
    loop {
        // First nonzero entry in row-major order.
        let mut pivot = None;
        'scan: for r in 0..m.rows {
            for c in 0..m.cols {
                if !m.at(r, c).is_zero() {
                    pivot = Some((r, c));
                    break 'scan;
                }
            }
        }
        let Some((pr, pc)) = pivot else { break };
        let inv = f.inv(m.at(pr, pc));
        let u: Vec<Scalar> = (0..m.rows).map(|r| f.mul(m.at(r, pc), inv)).collect();
        let v: Vec<Scalar> = (0..m.cols).map(|c| m.at(pr, c)).collect();
        for r in 0..m.rows {
            if u[r].is_zero() {
                continue;
            }
            for c in 0..m.cols {
                let val = f.sub(m.at(r, c), f.mul(u[r], v[c]));
                m.set(r, c, val);
            }
        }
        out.push((u, v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::CounterRng;

    fn s(v: u32) -> Scalar {
        Scalar(v)
    }

    #[test]
    fn rank_and_solve_basic() {
        let f = PrimeField::new(5).unwrap();
        let a = Mat::from_rows(
            f,
            vec![vec![s(1), s(2)], vec![s(2), s(4)], vec![s(0), s(1)]],
        );
        assert_eq!(a.rank(), 2);
        let b = vec![s(3), s(1), s(2)];
        // Rows 1 and 2 of A are dependent; b breaks that dependency.
        assert!(solve(&a, &b).is_none());
        let b2 = vec![s(3), s(1), s(2)];
        let _ = b2;
        let consistent = vec![s(0), s(0), s(1)];
        let x = solve(&a, &consistent).unwrap();
        // Check A x = b.
        for (r, want) in [s(0), s(0), s(1)].iter().enumerate() {
            let mut acc = Scalar::ZERO;
            for c in 0..2 {
                acc = f.add(acc, f.mul(a.at(r, c), x[c]));
            }
            assert_eq!(acc, *want);
        }
    }

    #[test]
    fn solve_random_consistent_systems() {
        let f = PrimeField::new(7).unwrap();
        let mut rng = CounterRng::new(2);
        for _ in 0..200 {
            let rows = 1 + rng.below(6) as usize;
            let cols = 1 + rng.below(6) as usize;
            let a = Mat::from_rows(
                f,
                (0..rows).map(|_| (0..cols).map(|_| rng.scalar(f)).collect()).collect(),
            );
            let x0: Vec<Scalar> = (0..cols).map(|_| rng.scalar(f)).collect();
            let b: Vec<Scalar> = (0..rows)
                .map(|r| {
                    let mut acc = Scalar::ZERO;
                    for c in 0..cols {
                        acc = f.add(acc, f.mul(a.at(r, c), x0[c]));
                    }
                    acc
                })
                .collect();
            let x = solve(&a, &b).expect("consistent by construction");
            for r in 0..rows {
                let mut acc = Scalar::ZERO;
                for c in 0..cols {
                    acc = f.add(acc, f.mul(a.at(r, c), x[c]));
                }
                assert_eq!(acc, b[r]);
            }
        }
    }

    #[test]
    fn nullspace_vectors_annihilate() {
        let f = PrimeField::new(3).unwrap();
        let mut rng = CounterRng::new(77);
        for _ in 0..100 {
            let rows = 1 + rng.below(5) as usize;
            let cols = 1 + rng.below(5) as usize;
            let a = Mat::from_rows(
                f,
                (0..rows).map(|_| (0..cols).map(|_| rng.scalar(f)).collect()).collect(),
            );
            let ns = nullspace(&a);
            assert_eq!(ns.len(), cols - a.rank());
            for v in ns {
                for r in 0..rows {
                    let mut acc = Scalar::ZERO;
                    for c in 0..cols {
                        acc = f.add(acc, f.mul(a.at(r, c), v[c]));
                    }
                    assert_eq!(acc, Scalar::ZERO);
                }
            }
        }
    }

    #[test]
    fn rank_factorization_reconstructs() {
        let f = PrimeField::new(5).unwrap();
        let mut rng = CounterRng::new(11);
        for _ in 0..100 {
            let rows = 1 + rng.below(5) as usize;
            let cols = 1 + rng.below(5) as usize;
            let a = Mat::from_rows(
                f,
                (0..rows).map(|_| (0..cols).map(|_| rng.scalar(f)).collect()).collect(),
            );
            let fac = rank_factorization(&a);
            assert_eq!(fac.len(), a.rank());
            let mut sum = Mat::zeros(f, rows, cols);
            for (u, v) in &fac {
                for r in 0..rows {
                    for c in 0..cols {
                        let val = f.add(sum.at(r, c), f.mul(u[r], v[c]));
                        sum.set(r, c, val);
                    }
                }
            }
            for r in 0..rows {
                for c in 0..cols {
                    assert_eq!(sum.at(r, c), a.at(r, c));
                }
            }
        }
    }
}
