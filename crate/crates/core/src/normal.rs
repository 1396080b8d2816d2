//! Standard normal distribution function and quantiles.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Complementary error function, accurate to about 1e-15 absolute.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.5 {
        1.0 - erf_series(x)
    } else if x > 27.0 {
        0.0
    } else {
        erfc_continued_fraction(x)
    }
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = 2/sqrt(pi) exp(-x^2) sum 2^n x^(2n+1) / (1*3*...*(2n+1)); every term is positive
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > sum * 1e-17 {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / PI.sqrt() * (-x2).exp() * sum
}

fn erfc_continued_fraction(x: f64) -> f64 {
    // erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))), evaluated bottom-up
    let mut tail = x;
    for k in (1..=120).rev() {
        tail = x + f64::from(k) / 2.0 / tail;
    }
    (-x * x).exp() / PI.sqrt() / tail
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile, by bisection on [`phi`].
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn matches_high_precision_values() {
        // 40-digit evaluations of erfc(-x/sqrt 2)/2
        let table = [
            (-37.5, 4.605353009581955e-308),
            (-20.0, 2.7536241186062337e-89),
            (-10.0, 7.619853024160525e-24),
            (-8.5, 9.479534822203318e-18),
            (-6.0, 9.86587645037698e-10),
            (-5.0, 2.866515718791939e-07),
            (-4.0, 3.1671241833119924e-05),
            (-3.5, 0.00023262907903552504),
            (-3.0, 0.0013498980316300946),
            (-2.5, 0.006209665325776135),
            (-2.0, 0.02275013194817921),
            (-1.7677, 0.03855553500062365),
            (-1.5, 0.06680720126885807),
            (-1.0, 0.15865525393145705),
            (-0.5, 0.3085375387259869),
            (-0.1, 0.460172162722971),
            (0.3, 0.6179114221889527),
            (0.7, 0.758036347776927),
            (1.2, 0.8849303297782917),
            (1.6448536269514722, 0.95),
            (2.2, 0.9860965524865014),
            (2.9, 0.998134186699616),
            (3.3, 0.9995165758576162),
            (4.5, 0.9999966023268753),
            (7.0, 0.9999999999987201),
        ];
        for (x, expected) in table {
            let got = phi(x);
            assert!(
                (got - expected).abs() <= 1e-15 + 1e-13 * expected,
                "x = {x}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn agrees_with_statrs() {
        // statrs is itself only good to about 1e-11 here
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut x = -12.0;
        while x <= 12.0 {
            assert!((phi(x) - n.cdf(x)).abs() < 1e-10, "x = {x}: {} vs {}", phi(x), n.cdf(x));
            x += 0.01;
        }
    }

    #[test]
    fn known_values() {
        assert_eq!(phi(0.0), 0.5);
        assert!((phi(1.959963984540054) - 0.975).abs() < 1e-14);
        assert!((erfc(1.0) - 0.157_299_207_050_285_13).abs() < 1e-15);
        assert!((erfc(3.0) - 2.209_049_699_858_544e-5).abs() < 1e-18);
    }

    #[test]
    fn tails_are_monotone() {
        let mut prev = 0.0;
        for i in 0..=2000 {
            let v = phi(-10.0 + 0.01 * f64::from(i));
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn quantiles() {
        assert!((quantile(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!((quantile(0.95) - 1.6448536269514722).abs() < 1e-12);
        assert!(quantile(0.5).abs() < 1e-14);
        assert_eq!(quantile(0.0), f64::NEG_INFINITY);
    }
}
