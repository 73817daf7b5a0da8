//! Exact one-sided permutation tests for tiny samples.

/// p-value of Mann-Whitney U for "`x` tends to exceed `y`", by enumerating
/// every split of the pooled sample (ties count one half).
pub fn mann_whitney_greater(x: &[f64], y: &[f64]) -> f64 {
    let u = |a: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for &p in a {
            for &q in b {
                s += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
            }
        }
        s
    };
    let observed = u(x, y);
    let pooled: Vec<f64> = x.iter().chain(y).cloned().collect();
    let n = pooled.len();
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        if mask.count_ones() as usize != x.len() {
            continue;
        }
        let a: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| pooled[i]).collect();
        let b: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| pooled[i]).collect();
        total += 1;
        if u(&a, &b) >= observed {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

/// p-value of the paired sign-flip test for "mean difference > 0", over all
/// 2^n sign assignments.
pub fn sign_flip_greater(diffs: &[f64]) -> f64 {
    let observed: f64 = diffs.iter().sum();
    let n = diffs.len();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).map(|i| if mask >> i & 1 == 1 { -diffs[i] } else { diffs[i] }).sum();
        if s >= observed {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_samples_hit_the_minimum_p() {
        let p = mann_whitney_greater(&[6.0, 7.0, 8.0, 9.0, 10.0], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(p, 1.0 / 252.0);
        assert_eq!(mann_whitney_greater(&[1.0; 5], &[1.0; 5]), 1.0);
    }

    #[test]
    fn all_positive_differences_give_one_in_thirty_two() {
        assert_eq!(sign_flip_greater(&[1.0, 2.0, 3.0, 4.0, 5.0]), 1.0 / 32.0);
        assert!(sign_flip_greater(&[1.0, -2.0, 3.0, 4.0, 5.0]) > 0.05);
        assert_eq!(sign_flip_greater(&[0.0; 5]), 1.0);
    }
}
