//! Small sample-statistics helpers shared by the estimators and the
//! simulation checks.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// Pearson correlation.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Two-sample Kolmogorov–Smirnov distance `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Order statistic of rank `rank` (1-based) from an ascending slice.
pub fn order_stat(sorted: &[f64], rank: usize) -> f64 {
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Percentile interval `[x_(ceil(B a/2)), x_(ceil(B (1 - a/2)))]` for level `1 - a`.
pub fn percentile_interval(sorted: &[f64], level: f64) -> (f64, f64) {
    let b = sorted.len() as f64;
    let alpha = 1.0 - level;
    // the small slack keeps e.g. 500 * 0.025 = 12.5000000001 from rounding up a rank
    let lo = (b * alpha / 2.0 - 1e-9).ceil() as usize;
    let hi = (b * (1.0 - alpha / 2.0) - 1e-9).ceil() as usize;
    (order_stat(sorted, lo), order_stat(sorted, hi))
}
