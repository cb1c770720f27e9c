//! 2x2 chi-squared statistic and its df=1 survival function.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Rows are the two runs being compared; columns are (correct, incorrect).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency(pub [[u64; 2]; 2]);

impl Contingency {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Contingency([[a, b], [c, d]])
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> [u64; 2] {
        [self.0[0][0] + self.0[0][1], self.0[1][0] + self.0[1][1]]
    }

    pub fn col_sums(&self) -> [u64; 2] {
        [self.0[0][0] + self.0[1][0], self.0[0][1] + self.0[1][1]]
    }
}

/// Pearson statistic summed cell by cell with expected counts
/// `row * col / n`. With `yates`, each `|O - E|` is reduced by 0.5 (not
/// below zero) before squaring.
pub fn chi2_2x2(table: &Contingency, yates: bool) -> Result<f64, EvalError> {
    let rows = table.row_sums();
    let cols = table.col_sums();
    if rows.contains(&0) || cols.contains(&0) {
        return Err(EvalError::DegenerateTable(*table));
    }
    let n = table.total() as f64;
    let mut stat = 0.0;
    for (i, row) in table.0.iter().enumerate() {
        for (j, &observed) in row.iter().enumerate() {
            let expected = rows[i] as f64 * cols[j] as f64 / n;
            let mut diff = (observed as f64 - expected).abs();
            if yates {
                diff = (diff - 0.5).max(0.0);
            }
            stat += diff * diff / expected;
        }
    }
    Ok(stat)
}

/// `P(X > x)` for `X ~ chi-squared(1)`, i.e. `erfc(sqrt(x / 2))`.
pub fn chi2_sf_df1(x: f64) -> Result<f64, EvalError> {
    if x.is_nan() || x < 0.0 {
        return Err(EvalError::NegativeStatistic(x));
    }
    Ok(erfc((x / 2.0).sqrt()))
}

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Complementary error function.
///
/// For `|z| < 2` this is `1 - erf(z)` with erf from the all-positive series
/// `erf(z) = 2/sqrt(pi) * exp(-z^2) * sum_n (2z^2)^n z / (2n+1)!!`. Above
/// that, the Laplace continued fraction
/// `erfc(z) = exp(-z^2)/sqrt(pi) / (z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))`
/// evaluated with the modified Lentz method, which keeps full relative
/// precision in the tail.
pub fn erfc(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z < 0.0 {
        return 2.0 - erfc(-z);
    }
    if z < 2.0 {
        1.0 - erf_series(z)
    } else {
        erfc_continued_fraction(z)
    }
}

fn erf_series(z: f64) -> f64 {
    let z2 = z * z;
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    while term > sum * 1e-17 {
        n += 1.0;
        term *= 2.0 * z2 / (2.0 * n + 1.0);
        sum += term;
    }
    FRAC_2_SQRT_PI * (-z2).exp() * sum
}

fn erfc_continued_fraction(z: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let mut f = z;
    let mut c = f;
    let mut d = 0.0;
    for n in 1..5_000 {
        let a = n as f64 / 2.0;
        d = z + a * d;
        if d == 0.0 {
            d = TINY;
        }
        c = z + a / c;
        if c == 0.0 {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-z * z).exp() / (PI.sqrt() * f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn balanced_table_is_zero() {
        assert_eq!(chi2_2x2(&Contingency::new(100, 100, 100, 100), false).unwrap(), 0.0);
        assert_eq!(chi2_2x2(&Contingency::new(100, 100, 100, 100), true).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_he_table() {
        // E = 136 / 114 per column, |O - E| = 35 in every cell.
        let t = Contingency::new(171, 79, 101, 149);
        let pearson = 1225.0 * (2.0 / 136.0 + 2.0 / 114.0);
        let yates = 34.5 * 34.5 * (2.0 / 136.0 + 2.0 / 114.0);
        assert!((chi2_2x2(&t, false).unwrap() - pearson).abs() < 1e-9);
        assert!((chi2_2x2(&t, true).unwrap() - yates).abs() < 1e-9);
        assert!((pearson - 39.506).abs() < 0.01);
        assert!((yates - 38.387).abs() < 0.01);
    }

    #[test]
    fn degenerate_marginals() {
        assert!(matches!(
            chi2_2x2(&Contingency::new(0, 0, 3, 4), false),
            Err(EvalError::DegenerateTable(_))
        ));
        assert!(matches!(
            chi2_2x2(&Contingency::new(5, 0, 3, 0), true),
            Err(EvalError::DegenerateTable(_))
        ));
    }

    #[test]
    fn survival_spot_values() {
        assert_eq!(chi2_sf_df1(0.0).unwrap(), 1.0);
        assert!((chi2_sf_df1(3.8415).unwrap() - 0.05).abs() < 1e-3);
        // Reference values from an external statistics package.
        let cases = [
            (1.0, 0.31731050786291115),
            (3.8415, 0.049998772071222324),
            (10.0, 0.001565402258002549),
            (38.57, 5.282467298154404e-10),
            (100.0, 1.5239706048320995e-23),
            (200.0, 2.0884875837625688e-45),
        ];
        for (x, expected) in cases {
            let got = chi2_sf_df1(x).unwrap();
            assert!(
                ((got - expected) / expected).abs() < 1e-12,
                "sf({x}) = {got}, expected {expected}"
            );
        }
        assert!(matches!(chi2_sf_df1(-1.0), Err(EvalError::NegativeStatistic(_))));
        assert!(chi2_sf_df1(f64::NAN).is_err());
    }

    #[test]
    fn erfc_branch_boundary_is_continuous() {
        let below = erfc(2.0 - 1e-12);
        let at = erfc(2.0);
        assert!(((below - at) / at).abs() < 1e-10);
        assert!((erfc(-1.0) - (2.0 - erfc(1.0))).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn row_and_column_swaps_preserve_statistic(
            a in 1u64..1000, b in 1u64..1000, c in 1u64..1000, d in 1u64..1000, yates: bool,
        ) {
            let base = chi2_2x2(&Contingency::new(a, b, c, d), yates).unwrap();
            let rows = chi2_2x2(&Contingency::new(c, d, a, b), yates).unwrap();
            let cols = chi2_2x2(&Contingency::new(b, a, d, c), yates).unwrap();
            prop_assert!((base - rows).abs() <= 1e-9 * base.max(1.0));
            prop_assert!((base - cols).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn proportional_rows_give_zero(a in 1u64..200, b in 1u64..200, k in 1u64..5) {
            let stat = chi2_2x2(&Contingency::new(a, b, a * k, b * k), false).unwrap();
            prop_assert!(stat.abs() < 1e-9);
        }

        #[test]
        fn survival_in_unit_interval(x in 0.0f64..1000.0) {
            let p = chi2_sf_df1(x).unwrap();
            prop_assert!(p > 0.0 && p <= 1.0);
        }
    }
}
