//! Exact square linear solves over the rationals.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Zero};

use crate::rational::Rational;

/// Solves `A x = rhs` exactly; `None` when `A` is singular.
///
/// Rows are cleared to integers and reduced with fraction-free (Bareiss)
/// elimination, so intermediate entries stay integral and every division
/// is exact.
pub fn solve_exact(a: &[Vec<Rational>], rhs: &[Rational]) -> Option<Vec<Rational>> {
    let n = a.len();
    assert_eq!(rhs.len(), n, "rhs length must match the matrix");
    if n == 0 {
        return Some(Vec::new());
    }

    let mut m: Vec<Vec<BigInt>> = a
        .iter()
        .zip(rhs)
        .map(|(row, r)| {
            assert_eq!(row.len(), n, "matrix must be square");
            let lcm = row
                .iter()
                .chain(std::iter::once(r))
                .fold(BigInt::one(), |acc, v| acc.lcm(v.denom()));
            row.iter()
                .chain(std::iter::once(r))
                .map(|v| v.numer() * (&lcm / v.denom()))
                .collect()
        })
        .collect();

    let mut prev = BigInt::one();
    for k in 0..n {
        let pivot = (k..n).find(|&r| !m[r][k].is_zero())?;
        m.swap(k, pivot);
        let (head, tail) = m.split_at_mut(k + 1);
        let pivot_row = &head[k];
        for row in tail.iter_mut() {
            let factor = row[k].clone();
            for j in k + 1..=n {
                let v = &row[j] * &pivot_row[k] - &factor * &pivot_row[j];
                row[j] = v / &prev;
            }
            row[k] = BigInt::zero();
        }
        prev = m[k][k].clone();
    }

    let mut x = vec![Rational::zero(); n];
    for i in (0..n).rev() {
        let mut acc = Rational::from_integer(m[i][n].clone());
        for j in i + 1..n {
            if !m[i][j].is_zero() {
                acc -= Rational::from_integer(m[i][j].clone()) * &x[j];
            }
        }
        x[i] = acc / Rational::from_integer(m[i][i].clone());
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};
    use proptest::prelude::*;

    #[test]
    fn solves_small_system() {
        let a = vec![vec![int(2), int(1)], vec![ratio(1, 2), int(3)]];
        let x = solve_exact(&a, &[int(1), int(2)]).unwrap();
        assert_eq!(x, vec![ratio(2, 11), ratio(7, 11)]);
    }

    #[test]
    fn needs_pivoting() {
        let a = vec![vec![int(0), int(1)], vec![int(1), int(0)]];
        assert_eq!(solve_exact(&a, &[int(3), int(4)]).unwrap(), vec![int(4), int(3)]);
    }

    #[test]
    fn detects_singular() {
        let a = vec![vec![int(1), int(2)], vec![int(2), int(4)]];
        assert!(solve_exact(&a, &[int(1), int(1)]).is_none());
    }

    proptest! {
        #[test]
        fn residual_is_exactly_zero(entries in proptest::collection::vec((-9i64..9, 1i64..5), 16), rhs in proptest::collection::vec(-9i64..9, 4)) {
            let a: Vec<Vec<Rational>> = entries.chunks(4)
                .map(|row| row.iter().map(|&(n, d)| ratio(n, d)).collect())
                .collect();
            let b: Vec<Rational> = rhs.iter().map(|&v| int(v)).collect();
            if let Some(x) = solve_exact(&a, &b) {
                for (row, bi) in a.iter().zip(&b) {
                    let lhs: Rational = row.iter().zip(&x).map(|(aij, xj)| aij * xj).sum();
                    prop_assert_eq!(&lhs, bi);
                }
            }
        }
    }
}
