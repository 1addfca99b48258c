//! Exact hypervolume computation (minimization convention).
//!
//! Two dimensions use a sorted sweep; three and four dimensions use the
//! slicing recursion: sort by the last objective, cut the dominated
//! region into slabs and multiply each slab height by the hypervolume of
//! the projections contributing to it.

use super::pareto::{dominates, pareto_front_indices};

/// Hypervolume together with the number of points that were excluded
/// because they do not strictly dominate the reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypervolume {
    pub volume: f64,
    pub excluded: usize,
}

fn strictly_dominates_ref(p: &[f64], r: &[f64]) -> bool {
    p.iter().zip(r).all(|(a, b)| a < b)
}

/// Hypervolume of the region dominated by `points` and bounded by `r`.
pub fn hypervolume(points: &[Vec<f64>], r: &[f64]) -> Hypervolume {
    let kept: Vec<Vec<f64>> =
        points.iter().filter(|p| strictly_dominates_ref(p, r)).cloned().collect();
    let excluded = points.len() - kept.len();
    if kept.is_empty() {
        return Hypervolume { volume: 0.0, excluded };
    }
    let front: Vec<Vec<f64>> =
        pareto_front_indices(&kept).into_iter().map(|i| kept[i].clone()).collect();
    Hypervolume { volume: hv_recursive(&front, r), excluded }
}

fn hv_recursive(points: &[Vec<f64>], r: &[f64]) -> f64 {
    match r.len() {
        0 => 0.0,
        1 => {
            let best = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            (r[0] - best).max(0.0)
        }
        2 => hv_2d(points, r),
        _ => hv_slice(points, r),
    }
}

/// Sweep in ascending first objective, accumulating rectangles against
/// the running best second objective.
fn hv_2d(points: &[Vec<f64>], r: &[f64]) -> f64 {
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    let mut best_f2 = r[1];
    let mut volume = 0.0;
    for p in sorted {
        if p[1] < best_f2 {
            volume += (r[0] - p[0]) * (best_f2 - p[1]);
            best_f2 = p[1];
        }
    }
    volume
}

/// Dimension-sweep slicing on the last objective.
fn hv_slice(points: &[Vec<f64>], r: &[f64]) -> f64 {
    let m = r.len();
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| a[m - 1].partial_cmp(&b[m - 1]).unwrap());
    let r_proj: Vec<f64> = r[..m - 1].to_vec();

    let mut volume = 0.0;
    let mut projections: Vec<Vec<f64>> = Vec::with_capacity(sorted.len());
    for (k, p) in sorted.iter().enumerate() {
        projections.push(p[..m - 1].to_vec());
        let z_low = p[m - 1];
        let z_high = if k + 1 < sorted.len() { sorted[k + 1][m - 1] } else { r[m - 1] };
        if z_high > z_low {
            let front: Vec<Vec<f64>> = pareto_front_indices(&projections)
                .into_iter()
                .map(|i| projections[i].clone())
                .collect();
            volume += (z_high - z_low) * hv_recursive(&front, &r_proj);
        }
    }
    volume
}

/// Hypervolume gained by adding `new_points` to `front`.
pub fn hvi(new_points: &[Vec<f64>], front: &[Vec<f64>], r: &[f64]) -> f64 {
    let mut merged = front.to_vec();
    merged.extend_from_slice(new_points);
    (hypervolume(&merged, r).volume - hypervolume(front, r).volume).max(0.0)
}

/// Exclusive contribution of one candidate point over a front.
///
/// Equals `hvi(&[p], front, r)` but avoids recomputing the base
/// hypervolume: the contribution is the box [p, r] minus the part
/// already covered, which is the hypervolume of the pointwise maxima.
pub fn hvi_single(p: &[f64], front: &[Vec<f64>], r: &[f64]) -> f64 {
    if !strictly_dominates_ref(p, r) {
        return 0.0;
    }
    // Covered entirely by an existing point?
    if front.iter().any(|q| q.iter().zip(p).all(|(a, b)| a <= b)) {
        return 0.0;
    }
    let own: f64 = p.iter().zip(r).map(|(a, b)| b - a).product();
    let limited: Vec<Vec<f64>> = front
        .iter()
        .map(|q| q.iter().zip(p).map(|(a, b)| a.max(*b)).collect::<Vec<f64>>())
        .filter(|m| strictly_dominates_ref(m, r))
        .collect();
    if limited.is_empty() {
        return own;
    }
    let front_limited: Vec<Vec<f64>> =
        pareto_front_indices(&limited).into_iter().map(|i| limited[i].clone()).collect();
    (own - hv_recursive(&front_limited, r)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_point_staircase_by_inclusion_exclusion() {
        let front = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let hv = hypervolume(&front, &[3.0, 3.0]);
        assert_eq!(hv.volume, 3.0);
        assert_eq!(hv.excluded, 0);
    }

    #[test]
    fn empty_front_has_zero_volume() {
        assert_eq!(hypervolume(&[], &[1.0, 1.0]).volume, 0.0);
    }

    #[test]
    fn points_outside_the_reference_box_are_excluded() {
        let front = vec![vec![1.0, 2.0], vec![4.0, 0.0]];
        let hv = hypervolume(&front, &[3.0, 3.0]);
        assert_eq!(hv.volume, 2.0);
        assert_eq!(hv.excluded, 1);
    }

    #[test]
    fn dominated_new_point_adds_nothing() {
        let front = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert_eq!(hvi(&[vec![2.5, 2.5]], &front, &[3.0, 3.0]), 0.0);
        assert_eq!(hvi(&[vec![1.0, 2.0]], &front, &[3.0, 3.0]), 0.0);
    }

    #[test]
    fn dominating_new_point_adds_hand_computed_volume() {
        let front = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let gained = hvi(&[vec![0.5, 0.5]], &front, &[3.0, 3.0]);
        assert_relative_eq!(gained, 3.25, max_relative = 1e-12);
    }

    #[test]
    fn exclusive_contribution_matches_the_two_pass_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for m in [2usize, 3, 4] {
            let r = vec![1.0; m];
            let front: Vec<Vec<f64>> =
                (0..12).map(|_| (0..m).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
            for _ in 0..30 {
                let p: Vec<f64> = (0..m).map(|_| rng.gen_range(-0.2..1.1)).collect();
                let fast = hvi_single(&p, &front, &r);
                let slow = hvi(&[p.clone()], &front, &r);
                assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn two_d_sweep_agrees_with_the_slicing_recursion() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let pts: Vec<Vec<f64>> =
                (0..15).map(|_| (0..2).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
            let r = [1.2, 1.2];
            let front: Vec<Vec<f64>> =
                pareto_front_indices(&pts).into_iter().map(|i| pts[i].clone()).collect();
            let swept = hv_2d(&front, &r);
            let sliced = hv_slice(&front, &r);
            assert_abs_diff_eq!(swept, sliced, epsilon = 1e-12);
        }
    }

    #[test]
    fn three_d_volume_matches_monte_carlo() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let pts: Vec<Vec<f64>> =
            (0..8).map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let r = vec![1.0, 1.0, 1.0];
        let exact = hypervolume(&pts, &r).volume;

        let n = 400_000usize;
        let mut hit = 0usize;
        for _ in 0..n {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            if pts.iter().any(|p| p.iter().zip(&z).all(|(a, b)| a <= b)) {
                hit += 1;
            }
        }
        let est = hit as f64 / n as f64;
        let se = (est * (1.0 - est) / n as f64).sqrt();
        assert!((exact - est).abs() <= 4.0 * se + 1e-4, "exact {exact} mc {est} se {se}");
    }

    #[test]
    fn volume_is_monotone_under_insertions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
        let r = vec![1.0; 4];
        let mut pts: Vec<Vec<f64>> = Vec::new();
        let mut last = 0.0;
        for _ in 0..60 {
            pts.push((0..4).map(|_| rng.gen_range(0.0..1.0)).collect());
            let hv = hypervolume(&pts, &r).volume;
            assert!(hv >= last - 1e-12);
            last = hv;
        }
    }
}
