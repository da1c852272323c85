//! Paired t-test on squared-error differences with Student-t tail
//! probabilities from the regularised incomplete beta function.

use super::EvalError;

/// Smallest paired sample accepted by [`significance`].
pub const MIN_PAIRS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Significance {
    pub n: usize,
    /// Mean of `a − b`; positive when `a` has the larger errors.
    pub mean_diff: f64,
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    /// Cohen's d: mean over standard deviation of the differences.
    pub cohens_d: f64,
    /// The differences have zero spread, so `t` and `d` are infinite or undefined.
    pub degenerate: bool,
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularised incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // The fraction converges fast only below the mean; use symmetry above it.
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Student-t CDF.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * t_two_sided_p(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Paired test on the per-day squared errors of two forecasters.
pub fn significance(a: &[f64], b: &[f64]) -> Result<Significance, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Length(vec![a.len(), b.len()]));
    }
    let n = a.len();
    if n < MIN_PAIRS {
        return Err(EvalError::TooFew { need: MIN_PAIRS, have: n });
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diff.iter().sum::<f64>() / n as f64;
    let var = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        let t = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return Ok(Significance {
            n,
            mean_diff: mean,
            t,
            p: if mean == 0.0 { 1.0 } else { 0.0 },
            cohens_d: t,
            degenerate: mean != 0.0,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(Significance {
        n,
        mean_diff: mean,
        t,
        p: t_two_sided_p(t, (n - 1) as f64),
        cohens_d: mean / sd,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_at_integers_is_factorial() {
        for (x, f) in [(1.0, 1.0), (2.0, 1.0), (5.0, 24.0), (10.0, 362_880.0_f64)] {
            assert!((ln_gamma(x) - f.ln()).abs() < 1e-12, "{x}");
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn tabulated_critical_values() {
        // Two-sided 5% and 1% points.
        for (df, t05, t01) in [(1.0, 12.706_204_736, 63.656_741_163), (10.0, 2.228_138_852, 3.169_272_667), (30.0, 2.042_272_456, 2.749_995_654)] {
            assert!((t_two_sided_p(t05, df) - 0.05).abs() < 1e-9, "df {df}");
            assert!((t_two_sided_p(t01, df) - 0.01).abs() < 1e-9, "df {df}");
        }
    }

    #[test]
    fn cauchy_cdf_is_closed_form() {
        for t in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let want = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert!((t_cdf(t, 1.0) - want).abs() < 1e-13);
        }
    }

    #[test]
    fn identical_samples() {
        let a: Vec<f64> = (0..40).map(f64::from).collect();
        let s = significance(&a, &a).unwrap();
        assert_eq!((s.t, s.p, s.cohens_d, s.degenerate), (0.0, 1.0, 0.0, false));
    }

    #[test]
    fn constant_shift_is_degenerate() {
        let a: Vec<f64> = (0..40).map(f64::from).collect();
        let b: Vec<f64> = a.iter().map(|x| x - 0.5).collect();
        let s = significance(&a, &b).unwrap();
        assert!(s.degenerate && s.t == f64::INFINITY && s.p == 0.0);
    }

    #[test]
    fn small_samples_are_refused() {
        assert!(matches!(significance(&[1.0; 10], &[0.0; 10]), Err(EvalError::TooFew { need: 30, have: 10 })));
    }
}
