//! One-dimensional quadrature and summation helpers.

const MAX_DEPTH: u32 = 30;

/// Adaptive Simpson rule with Richardson correction.
///
/// Bisects until the two Simpson estimates on a panel agree to the panel's
/// share of `rel_tol · |∫f|`. Exact for cubics and so for constants.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    // Four initial panels so that symmetric integrands cannot fool the first comparison.
    let n = 4;
    let h = (b - a) / n as f64;
    let xs: Vec<f64> = (0..=2 * n)
        .map(|k| if k == 2 * n { b } else { a + k as f64 * h / 2.0 })
        .collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let panels: Vec<[f64; 3]> = (0..n).map(|k| [fs[2 * k], fs[2 * k + 1], fs[2 * k + 2]]).collect();
    let rough: f64 = panels.iter().map(|p| simpson(h, p)).sum();
    let scale = rough
        .abs()
        .max(panels.iter().map(|p| simpson(h, &p.map(f64::abs))).sum::<f64>());
    let eps = (rel_tol * scale).max(1e-300) / n as f64;
    (0..n)
        .map(|k| refine(&f, xs[2 * k], xs[2 * k + 2], panels[k], eps, 0))
        .sum()
}

fn simpson(h: f64, p: &[f64; 3]) -> f64 {
    h / 6.0 * (p[0] + 4.0 * p[1] + p[2])
}

fn refine<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, p: [f64; 3], eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fl, fr) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
    let whole = simpson(b - a, &p);
    let left = simpson(m - a, &[p[0], fl, p[1]]);
    let right = simpson(b - m, &[p[1], fr, p[2]]);
    let diff = left + right - whole;
    if depth >= MAX_DEPTH || diff.abs() <= 15.0 * eps {
        return left + right + diff / 15.0;
    }
    refine(f, a, m, [p[0], fl, p[1]], eps / 2.0, depth + 1) + refine(f, m, b, [p[1], fr, p[2]], eps / 2.0, depth + 1)
}

/// `∫_a^b f` split at the given breakpoints (only those inside `(a, b)` are used).
///
/// Each piece is integrated on its open interior so that right-continuous
/// step functions are evaluated on the correct side of a break.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breakpoints: &[f64], rel_tol: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let mut total = 0.0;
    let mut lo = a;
    let start = breakpoints.partition_point(|&x| x <= a);
    for &bp in breakpoints[start..].iter().take_while(|&&x| x < b) {
        total += integrate_open(&f, lo, bp, rel_tol);
        lo = bp;
    }
    total + integrate_open(&f, lo, b, rel_tol)
}

fn integrate_open<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let hi = prev_float(b).max(a);
    adaptive_simpson(|x| f(x.min(hi)), a, b, rel_tol)
}

/// Largest float strictly below `x` (for finite positive or negative `x`).
pub fn prev_float(x: f64) -> f64 {
    if x.is_nan() || x == f64::NEG_INFINITY {
        return x;
    }
    if x == 0.0 {
        return -f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits - 1 } else { bits + 1 })
}

/// Smallest float strictly above `x`.
pub fn next_float(x: f64) -> f64 {
    -prev_float(-x)
}

/// Pairwise (cascade) summation; deterministic for a fixed input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean (two-pass).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_matches_closed_forms() {
        let v = adaptive_simpson(|x| (-0.4 * x).exp(), 0.0, 10.0, 1e-12);
        let exact = (1.0 - (-4.0f64).exp()) / 0.4;
        assert!((v - exact).abs() < 1e-10, "{v} vs {exact}");
        assert_eq!(adaptive_simpson(|_| 2.5, 1.0, 3.0, 1e-8), 5.0);
        let sin = adaptive_simpson(f64::sin, 0.0, std::f64::consts::PI, 1e-12);
        assert!((sin - 2.0).abs() < 1e-11);
    }

    #[test]
    fn pieces_respect_step_functions() {
        let step = |x: f64| if x < 2.0 { 1.0 } else { 3.0 };
        let v = integrate_pieces(step, 0.0, 5.0, &[2.0], 1e-10);
        assert!((v - (2.0 + 9.0)).abs() < 1e-12);
    }

    #[test]
    fn float_neighbours() {
        assert!(prev_float(1.0) < 1.0);
        assert!(next_float(1.0) > 1.0);
        assert_eq!(next_float(prev_float(2.5)), 2.5);
    }

    #[test]
    fn mean_and_stderr_of_constant_sample() {
        let (m, s) = mean_and_stderr(&[2.0; 100]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 0.0);
    }
}
