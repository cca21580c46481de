//! Small numeric summaries shared by the sampler, prediction, and evaluation.

use crate::scalar::{cvt, Scalar};

/// Running mean (Welford). Unlike a naive `sum / n` this returns the exact
/// common value when every input is identical, which the model-comparison
/// identities rely on.
pub fn mean<T: Scalar>(xs: &[T]) -> T {
    let mut m = T::zero();
    for (k, &x) in xs.iter().enumerate() {
        m += (x - m) / cvt::<T>((k + 1) as f64);
    }
    m
}

/// Unbiased sample standard deviation; zero for fewer than two values.
pub fn sample_sd<T: Scalar>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / cvt::<T>((xs.len() - 1) as f64)).sqrt()
}

/// Quantile with linear interpolation between order statistics (the common
/// "type 7" rule). `p` must lie in [0, 1]; `xs` must be non-empty.
pub fn quantile<T: Scalar>(xs: &[T], p: f64) -> T {
    assert!(!xs.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "quantile level {p} outside [0, 1]");
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let w = cvt::<T>(h - lo as f64);
    sorted[lo] * (T::one() - w) + sorted[hi] * w
}

/// Mean, sd, and the 2.5% / 50% / 97.5% quantiles of one scalar quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary<T> {
    pub mean: T,
    pub sd: T,
    pub q025: T,
    pub q50: T,
    pub q975: T,
}

pub fn summarize<T: Scalar>(xs: &[T]) -> Summary<T> {
    Summary {
        mean: mean(xs),
        sd: sample_sd(xs),
        q025: quantile(xs, 0.025),
        q50: quantile(xs, 0.5),
        q975: quantile(xs, 0.975),
    }
}

/// Pearson correlation of two equal-length slices.
pub fn correlation<T: Scalar>(xs: &[T], ys: &[T]) -> T {
    assert_eq!(xs.len(), ys.len(), "correlation needs equal lengths");
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Effective sample size of a (possibly autocorrelated) chain, via Geyer's
/// initial-positive-sequence rule on lag-pair sums of the autocorrelation.
/// A zero-variance chain carries no correlation information and reports its
/// own length.
pub fn ess(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    let autocov = |lag: usize| -> f64 {
        (0..n - lag).map(|t| (xs[t] - m) * (xs[t + lag] - m)).sum::<f64>() / n as f64
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return n as f64;
    }
    let mut tau = 1.0;
    let mut prev = f64::INFINITY;
    let mut k = 1;
    while k + 1 < n {
        let pair = (autocov(k) + autocov(k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 2;
    }
    (n as f64 / tau).min(n as f64)
}

/// Monte Carlo standard error of the chain mean, autocorrelation-aware.
pub fn mc_standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0);
    (var / ess(xs)).sqrt()
}

/// Two-sided Mann-Kendall trend test p-value under the normal approximation
/// (no tie correction; intended for continuous chain traces).
pub fn mann_kendall_pvalue(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 3 {
        return 1.0;
    }
    let mut s: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            let d = xs[j] - xs[i];
            s += (d > 0.0) as i64 - (d < 0.0) as i64;
        }
    }
    let var = (n * (n - 1) * (2 * n + 5)) as f64 / 18.0;
    let z = if s > 0 {
        (s as f64 - 1.0) / var.sqrt()
    } else if s < 0 {
        (s as f64 + 1.0) / var.sqrt()
    } else {
        0.0
    };
    let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
    use statrs::distribution::ContinuousCDF;
    2.0 * (1.0 - normal.cdf(z.abs()))
}
