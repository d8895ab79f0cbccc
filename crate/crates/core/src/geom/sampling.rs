//! Farthest point sampling and area-proportional budget allocation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::PointCloud;

/// Greedy farthest point sampling.
///
/// The first index is a seeded uniform draw; every subsequent pick maximizes
/// the minimum distance to the points already selected (ties resolved toward
/// the smaller index, so the result is deterministic given `(cloud, m, seed)`).
pub fn fps_sample(cloud: &PointCloud, m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "fps budget {m} out of range for {n} points"
        )));
    }
    let mut rng = crate::seed::rng_from(seed);
    let first = rng.gen_range(0..n);
    let mut selected = Vec::with_capacity(m);
    selected.push(first);

    let mut min_d2 = vec![f64::INFINITY; n];
    let mut last = first;
    for _ in 1..m {
        let lp = cloud.points[last];
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, p) in cloud.points.iter().enumerate() {
            let d2 = (p - lp).norm_squared();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best.1 {
                best = (i, min_d2[i]);
            }
        }
        selected.push(best.0);
        min_d2[best.0] = f64::NEG_INFINITY;
        last = best.0;
    }
    Ok(selected)
}

/// Largest-remainder allocation of `total` counts proportional to `areas`,
/// with a per-entry floor. The outputs always sum to `total` exactly.
pub fn allocate_budget(areas: &[f64], total: usize, floor: usize) -> Result<Vec<usize>> {
    let k = areas.len();
    if k == 0 {
        return Err(Error::invalid("allocate_budget over empty area list"));
    }
    if areas.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::invalid("areas must be positive"));
    }
    if total < k * floor {
        return Err(Error::invalid(format!(
            "budget {total} below floor {floor} x {k}"
        )));
    }
    let spare = total - k * floor;
    let area_sum: f64 = areas.iter().sum();
    let ideal: Vec<f64> = areas.iter().map(|a| spare as f64 * a / area_sum).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    // Hand out the leftover by largest fractional remainder, ties toward the
    // smaller index.
    let mut remainders: Vec<(usize, f64)> = ideal
        .iter()
        .enumerate()
        .map(|(i, x)| (i, x - x.floor()))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(i, _) in remainders.iter().take(spare - assigned) {
        counts[i] += 1;
    }
    for c in counts.iter_mut() {
        *c += floor;
    }
    debug_assert_eq!(counts.iter().sum::<usize>(), total);
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::Rng;

    fn square_plus_center() -> PointCloud {
        PointCloud::new(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.5, 0.5, 0.0),
        ])
    }

    #[test]
    fn fps_exhaustion_is_a_permutation() {
        let cloud = square_plus_center();
        let idx = fps_sample(&cloud, 5, 9).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn fps_single_pick_is_the_seeded_draw() {
        let cloud = square_plus_center();
        let a = fps_sample(&cloud, 1, 123).unwrap();
        let b = fps_sample(&cloud, 1, 123).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn fps_square_greedy_trace() {
        // Hand-enumerated greedy property on the unit square plus center:
        // starting from a corner, the other picks are the remaining corners;
        // starting from the center, the three follow-up picks are corners.
        let cloud = square_plus_center();
        for seed in 0..40u64 {
            let idx = fps_sample(&cloud, 4, seed).unwrap();
            if idx[0] == 4 {
                assert!(idx[1..].iter().all(|&i| i < 4), "seed {seed}: {idx:?}");
            } else {
                assert!(
                    idx.iter().filter(|&&i| i < 4).count() == 4,
                    "seed {seed}: {idx:?}"
                );
            }
        }
    }

    #[test]
    fn fps_rejects_bad_budget() {
        let cloud = square_plus_center();
        assert!(fps_sample(&cloud, 0, 1).is_err());
        assert!(fps_sample(&cloud, 6, 1).is_err());
    }

    #[test]
    fn fps_indices_distinct_and_deterministic() {
        let mut rng = crate::seed::rng_from(5);
        let cloud = PointCloud::new(
            (0..200)
                .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
                .collect(),
        );
        let a = fps_sample(&cloud, 64, 77).unwrap();
        let b = fps_sample(&cloud, 64, 77).unwrap();
        assert_eq!(a, b);
        let mut uniq = a.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 64);
        assert!(a.iter().all(|&i| i < 200));
    }

    #[test]
    fn budget_even_split() {
        assert_eq!(allocate_budget(&[1.0, 1.0], 5120, 8).unwrap(), vec![2560, 2560]);
    }

    #[test]
    fn budget_largest_remainder_by_hand() {
        // floor=1 each, spare=6 split 4.5/1.5 -> floors 4/1, leftover to the
        // larger remainder (tie -> smaller index): [1+5, 1+1].
        assert_eq!(allocate_budget(&[3.0, 1.0], 8, 1).unwrap(), vec![6, 2]);
    }

    #[test]
    fn budget_floor_saturated() {
        assert_eq!(allocate_budget(&[1.0, 1.0, 1.0], 3, 1).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn budget_rejects_insufficient_total() {
        assert!(allocate_budget(&[1.0, 1.0], 15, 8).is_err());
    }

    #[test]
    fn budget_sums_exactly_over_random_areas() {
        let mut rng = crate::seed::rng_from(31);
        for _ in 0..1000 {
            let k = rng.gen_range(1..12);
            let areas: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total = rng.gen_range(k * 8..4096);
            let budgets = allocate_budget(&areas, total, 8).unwrap();
            assert_eq!(budgets.iter().sum::<usize>(), total);
            assert!(budgets.iter().all(|&b| b >= 8));
        }
    }
}
