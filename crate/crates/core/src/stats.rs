//! Small statistical helpers shared across modules.

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the sample mean.
pub fn stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0);
    (var / n as f64).sqrt()
}

/// Mean and standard error in one pass over per-path statistics.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    (mean(xs), stderr(xs))
}

/// Ordinary least-squares slope of y against x.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Log-log slope of `values` against `args`; pairs with non-positive entries
/// are dropped.
pub fn log_log_slope(args: &[f64], values: &[f64]) -> f64 {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (&a, &v) in args.iter().zip(values) {
        if a > 0.0 && v > 0.0 {
            lx.push(a.ln());
            ly.push(v.ln());
        }
    }
    ols_slope(&lx, &ly)
}

/// Fitted exponential decay rate r of a series s(t) ~ C e^{-r t}.
/// Entries with non-positive values are skipped.
pub fn exp_decay_rate(times: &[f64], series: &[f64]) -> f64 {
    -log_linear_slope(times, series)
}

fn log_linear_slope(times: &[f64], series: &[f64]) -> f64 {
    let mut tx = Vec::new();
    let mut ly = Vec::new();
    for (&t, &s) in times.iter().zip(series) {
        if s > 0.0 {
            tx.push(t);
            ly.push(s.ln());
        }
    }
    if tx.len() < 2 {
        return 0.0;
    }
    ols_slope(&tx, &ly)
}
