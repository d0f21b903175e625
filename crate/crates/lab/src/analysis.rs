//! Small statistics used to summarize sweeps and training traces.

/// Median of finite values; `None` for an empty slice.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// 1-based ranks with ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| out[k] = avg);
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Spearman rank correlation (Pearson on average ranks). `None` when either
/// side is constant or fewer than two pairs are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

/// Largest decrease `v[i] − v[j]` over `start ≤ i ≤ j`.
pub fn max_drop(series: &[f64], start: usize) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in series.iter().skip(start) {
        peak = peak.max(v);
        worst = worst.max(peak - v);
    }
    worst
}

/// Whether the step from `losses[boundary - 1]` to `losses[boundary]` is within
/// the normal spread of consecutive steps: `median(|Δ|) + 3·MAD(|Δ|)`.
pub fn step_is_typical(losses: &[f64], boundary: usize) -> bool {
    if boundary == 0 || boundary >= losses.len() {
        return false;
    }
    let steps: Vec<f64> = losses.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let med = median(&steps).unwrap_or(0.0);
    let dev: Vec<f64> = steps.iter().map(|s| (s - med).abs()).collect();
    let mad = median(&dev).unwrap_or(0.0);
    steps[boundary - 1] <= med + 3.0 * mad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn spearman_monotone_and_reversed() {
        let x = [1.0, 5.0, 10.0, 20.0, 40.0];
        let y = [0.1, 0.2, 0.25, 0.3, 0.9];
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let r: Vec<f64> = y.iter().rev().copied().collect();
        assert!((spearman(&x, &r).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&x, &[1.0; 5]), None);
    }

    #[test]
    fn drop_after_start() {
        let s = [0.0, 0.9, 0.2, 0.5, 0.6, 0.4];
        assert!((max_drop(&s, 0) - 0.7).abs() < 1e-12);
        assert!((max_drop(&s, 3) - 0.2).abs() < 1e-12);
        assert_eq!(max_drop(&[0.1, 0.2, 0.3], 0), 0.0);
    }

    #[test]
    fn typical_step() {
        let mut l: Vec<f64> = (0..50).map(|i| 100.0 - i as f64 * 0.5 + if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
        assert!(step_is_typical(&l, 25));
        l[25] += 20.0;
        assert!(!step_is_typical(&l, 25));
    }
}
