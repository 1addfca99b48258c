//! Pareto dominance and non-dominated filtering (minimization).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParetoError {
    #[error("dimension mismatch: {lhs} vs {rhs}")]
    DimensionMismatch { lhs: usize, rhs: usize },
}

/// a dominates b: a <= b everywhere and a < b somewhere.
pub fn try_dominates(a: &[f64], b: &[f64]) -> Result<bool, ParetoError> {
    if a.len() != b.len() {
        return Err(ParetoError::DimensionMismatch { lhs: a.len(), rhs: b.len() });
    }
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return Ok(false);
        }
        if x < y {
            strict = true;
        }
    }
    Ok(strict)
}

/// Panicking wrapper for callers that guarantee equal dimensions.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    try_dominates(a, b).expect("objective dimension mismatch")
}

/// Indices of the non-dominated points. Duplicates are all retained
/// (domination requires a strict improvement somewhere).
///
/// Points are swept in lexicographic order, so each candidate only has
/// to be compared against the members already kept: a later point in
/// the order can never dominate an earlier one.
pub fn pareto_front_indices(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .iter()
            .zip(&points[j])
            .find_map(|(a, b)| a.partial_cmp(b).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = Vec::new();
    'outer: for &idx in &order {
        for &k in &kept {
            if dominates(&points[k], &points[idx]) {
                continue 'outer;
            }
        }
        kept.push(idx);
    }
    kept.sort_unstable();
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn simple_domination_cases() {
        assert!(dominates(&[1.0, 1.0], &[2.0, 2.0]));
        assert!(!dominates(&[1.0, 3.0], &[2.0, 2.0]));
        assert!(!dominates(&[2.0, 2.0], &[1.0, 3.0]));
        let a = [1.5, 2.5];
        assert!(!dominates(&a, &a));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert_eq!(
            try_dominates(&[1.0], &[1.0, 2.0]),
            Err(ParetoError::DimensionMismatch { lhs: 1, rhs: 2 })
        );
    }

    #[test]
    fn dominated_point_is_filtered() {
        let pts = vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![2.0, 2.0]];
        assert_eq!(pareto_front_indices(&pts), vec![0, 1]);
    }

    #[test]
    fn single_point_is_its_own_front() {
        let pts = vec![vec![3.0, 4.0, 5.0]];
        assert_eq!(pareto_front_indices(&pts), vec![0]);
    }

    #[test]
    fn duplicates_are_all_retained() {
        let pts = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![2.0, 0.5]];
        assert_eq!(pareto_front_indices(&pts), vec![0, 1, 2]);
    }

    #[test]
    fn front_matches_pairwise_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4242);
        let pts: Vec<Vec<f64>> =
            (0..100).map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let fast = pareto_front_indices(&pts);
        // All-pairs oracle.
        let brute: Vec<usize> = (0..pts.len())
            .filter(|&i| (0..pts.len()).all(|j| j == i || !dominates(&pts[j], &pts[i])))
            .collect();
        assert_eq!(fast, brute);
    }

    proptest::proptest! {
        #[test]
        fn dominance_is_a_strict_partial_order(
            a in proptest::collection::vec(-10.0f64..10.0, 3),
            b in proptest::collection::vec(-10.0f64..10.0, 3),
            c in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            // Irreflexive.
            proptest::prop_assert!(!dominates(&a, &a));
            // Antisymmetric.
            if dominates(&a, &b) {
                proptest::prop_assert!(!dominates(&b, &a));
            }
            // Transitive.
            if dominates(&a, &b) && dominates(&b, &c) {
                proptest::prop_assert!(dominates(&a, &c));
            }
        }
    }
}
