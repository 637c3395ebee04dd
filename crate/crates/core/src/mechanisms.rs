//! Missing-data mechanisms (MCAR / MAR / MNAR self-masking) and
//! classification of observation patterns.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;

use crate::data::Mask;
use crate::error::{invalid, Error, Result};
use crate::rng::SeedSpec;
use crate::special::sigmoid;

/// Missingness mechanism used to simulate a mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mechanism {
    /// Each entry is missing independently with probability `rate`.
    Mcar { rate: f64 },
    /// Row `driver_row` stays fully observed; every other entry in column `j`
    /// is missing with probability `sigmoid(phi1 * X[driver_row, j] + phi0)`.
    Mar { driver_row: usize, phi0: f64, phi1: f64 },
    /// Entry `(i, j)` is observed with probability `sigmoid(phi1 * X[i, j] + phi0)`.
    MnarSelfMask { phi0: f64, phi1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MechanismKind {
    Mcar,
    Mar,
    MnarSelfMask,
}

impl Mechanism {
    pub fn kind(&self) -> MechanismKind {
        match self {
            Mechanism::Mcar { .. } => MechanismKind::Mcar,
            Mechanism::Mar { .. } => MechanismKind::Mar,
            Mechanism::MnarSelfMask { .. } => MechanismKind::MnarSelfMask,
        }
    }
}

/// The six pattern categories. `Random` labels simulated mixtures and is
/// never produced by [`classify_pattern`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatternClass {
    Univariate,
    Multivariate,
    Monotone,
    FileMatching,
    General,
    Random,
}

/// Draws a `p x n` mask. MAR and MNAR need the data matrix `x`.
pub fn gen_mask(
    shape: (usize, usize),
    mechanism: &Mechanism,
    x: Option<&DMatrix<f64>>,
    seed: SeedSpec,
) -> Result<Mask> {
    let (p, n) = shape;
    let needs_data = |what| -> Result<&DMatrix<f64>> {
        let x = x.ok_or(Error::DataRequired(what))?;
        if x.shape() != shape {
            return Err(Error::Shape {
                expected: shape,
                found: x.shape(),
            });
        }
        Ok(x)
    };
    let mut rng = seed.rng();
    let mut mask = Mask::full(p, n);
    match *mechanism {
        Mechanism::Mcar { rate } => {
            if !(0.0..=1.0).contains(&rate) {
                return Err(invalid("MCAR rate must lie in [0, 1]"));
            }
            for j in 0..n {
                for i in 0..p {
                    let u: f64 = rng.random();
                    mask.set(i, j, u >= rate);
                }
            }
        }
        Mechanism::Mar { driver_row, phi0, phi1 } => {
            let x = needs_data("MAR mechanism")?;
            if driver_row >= p {
                return Err(Error::IndexOutOfRange {
                    index: driver_row,
                    len: p,
                });
            }
            for j in 0..n {
                let miss = sigmoid(phi1 * x[(driver_row, j)] + phi0);
                for i in 0..p {
                    let u: f64 = rng.random();
                    if i != driver_row {
                        mask.set(i, j, u >= miss);
                    }
                }
            }
        }
        Mechanism::MnarSelfMask { phi0, phi1 } => {
            let x = needs_data("MNAR mechanism")?;
            for j in 0..n {
                for i in 0..p {
                    let u: f64 = rng.random();
                    mask.set(i, j, u < sigmoid(phi1 * x[(i, j)] + phi0));
                }
            }
        }
    }
    Ok(mask)
}

/// Ignorability: MCAR or MAR, with data and mechanism parameters distinct.
pub fn is_ignorable(kind: MechanismKind, distinct_params: bool) -> bool {
    matches!(kind, MechanismKind::Mcar | MechanismKind::Mar) && distinct_params
}

/// Classifies a mask. Rules are tried in order:
///
/// 1. `Univariate`: all missing entries lie in one row.
/// 2. `Multivariate`: at least two rows are missing, and every column with
///    a missing entry misses exactly the same set of rows.
/// 3. `Monotone`: with rows sorted by ascending missing count (ties by
///    index), each column's missing set is a suffix of that order.
/// 4. `FileMatching`: the rows with missing entries split into at least two
///    groups that are never observed together in any column.
/// 5. `General` otherwise.
///
/// A mask with no missing entry satisfies the monotone rule vacuously.
pub fn classify_pattern(mask: &Mask) -> PatternClass {
    let (p, n) = mask.shape();
    let missing_rows: Vec<usize> = (0..p).filter(|&i| mask.row_observed_count(i) < n).collect();
    if missing_rows.len() == 1 {
        return PatternClass::Univariate;
    }
    let column_sets: Vec<Vec<usize>> = (0..n).map(|j| mask.missing_rows(j)).filter(|s| !s.is_empty()).collect();
    if missing_rows.len() >= 2 && column_sets.windows(2).all(|w| w[0] == w[1]) {
        return PatternClass::Multivariate;
    }
    if is_monotone(mask) {
        return PatternClass::Monotone;
    }
    if is_file_matching(mask, &missing_rows) {
        return PatternClass::FileMatching;
    }
    PatternClass::General
}

fn is_monotone(mask: &Mask) -> bool {
    let (p, n) = mask.shape();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by_key(|&i| (n - mask.row_observed_count(i), i));
    (0..n).all(|j| {
        let mut seen_missing = false;
        order.iter().all(|&i| {
            if !mask.is_observed(i, j) {
                seen_missing = true;
                true
            } else {
                !seen_missing
            }
        })
    })
}

/// Connected components of the co-observation graph restricted to rows that
/// have missing entries. Two or more components, each observed somewhere,
/// means the groups are never jointly observed.
fn is_file_matching(mask: &Mask, rows: &[usize]) -> bool {
    if rows.len() < 2 || rows.iter().any(|&i| mask.row_observed_count(i) == 0) {
        return false;
    }
    let n = mask.ncols();
    let k = rows.len();
    let co_observed = |a: usize, b: usize| (0..n).any(|j| mask.is_observed(rows[a], j) && mask.is_observed(rows[b], j));
    let mut component = alloc::vec![usize::MAX; k];
    let mut count = 0;
    for start in 0..k {
        if component[start] != usize::MAX {
            continue;
        }
        let mut stack = alloc::vec![start];
        component[start] = count;
        while let Some(a) = stack.pop() {
            for b in 0..k {
                if component[b] == usize::MAX && co_observed(a, b) {
                    component[b] = count;
                    stack.push(b);
                }
            }
        }
        count += 1;
    }
    count >= 2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal_data(p: usize, n: usize, seed: u64) -> DMatrix<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = SeedSpec::new(seed).rng();
        DMatrix::from_fn(p, n, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn mcar_extremes() {
        let all = gen_mask((4, 5), &Mechanism::Mcar { rate: 0.0 }, None, SeedSpec::new(1)).unwrap();
        assert_eq!(all.count_missing(), 0);
        let none = gen_mask((4, 5), &Mechanism::Mcar { rate: 1.0 }, None, SeedSpec::new(1)).unwrap();
        assert_eq!(none.count_observed(), 0);
    }

    #[test]
    fn mcar_rate_out_of_range() {
        assert!(gen_mask((2, 2), &Mechanism::Mcar { rate: 1.5 }, None, SeedSpec::new(0)).is_err());
    }

    #[test]
    fn data_driven_mechanisms_require_data() {
        let m = Mechanism::MnarSelfMask { phi0: 0.0, phi1: 1.0 };
        assert_eq!(
            gen_mask((2, 2), &m, None, SeedSpec::new(0)),
            Err(Error::DataRequired("MNAR mechanism"))
        );
        let m = Mechanism::Mar { driver_row: 0, phi0: 0.0, phi1: 1.0 };
        assert!(matches!(gen_mask((2, 2), &m, None, SeedSpec::new(0)), Err(Error::DataRequired(_))));
    }

    #[test]
    fn mcar_observed_fraction_within_three_sigma() {
        let (p, n, rate) = (100, 1000, 0.3);
        let m = gen_mask((p, n), &Mechanism::Mcar { rate }, None, SeedSpec::new(11)).unwrap();
        let total = (p * n) as f64;
        let frac = m.count_observed() as f64 / total;
        let sd = (rate * (1.0 - rate) / total).sqrt();
        assert!((frac - (1.0 - rate)).abs() < 3.0 * sd, "{frac}");
    }

    #[test]
    fn mnar_neutral_logistic_observes_half() {
        // binomial(1e5, 0.5): mean 5e4, sd ~158
        let x = normal_data(100, 1000, 3);
        let m = gen_mask((100, 1000), &Mechanism::MnarSelfMask { phi0: 0.0, phi1: 0.0 }, Some(&x), SeedSpec::new(5)).unwrap();
        let obs = m.count_observed() as f64;
        let sd = (1e5f64 * 0.25).sqrt();
        assert!((obs - 5e4).abs() < 3.0 * sd, "{obs}");
    }

    #[test]
    fn mnar_positive_slope_biases_observed_mean_upward() {
        let x = normal_data(100, 1000, 4);
        let m = gen_mask((100, 1000), &Mechanism::MnarSelfMask { phi0: 0.0, phi1: 1.0 }, Some(&x), SeedSpec::new(6)).unwrap();
        let all_mean = x.mean();
        let (mut s, mut c) = (0.0, 0usize);
        for j in 0..1000 {
            for i in 0..100 {
                if m.is_observed(i, j) {
                    s += x[(i, j)];
                    c += 1;
                }
            }
        }
        let obs_mean = s / c as f64;
        // one-sided z test: standard error of a mean over ~5e4 unit-variance draws
        let z = (obs_mean - all_mean) / (1.0 / (c as f64).sqrt());
        assert!(z > 3.0, "z = {z}");
    }

    #[test]
    fn mar_keeps_driver_row_observed_and_depends_on_it() {
        let x = normal_data(3, 20_000, 8);
        let mech = Mechanism::Mar { driver_row: 0, phi0: 0.0, phi1: 3.0 };
        let m = gen_mask((3, 20_000), &mech, Some(&x), SeedSpec::new(9)).unwrap();
        assert_eq!(m.row_observed_count(0), 20_000);
        let (mut hi, mut hi_n, mut lo, mut lo_n) = (0, 0, 0, 0);
        for j in 0..20_000 {
            if x[(0, j)] > 0.0 {
                hi_n += 1;
                hi += usize::from(!m.is_observed(1, j));
            } else {
                lo_n += 1;
                lo += usize::from(!m.is_observed(1, j));
            }
        }
        assert!(hi as f64 / hi_n as f64 > 0.7 && (lo as f64 / lo_n as f64) < 0.3);
    }

    #[test]
    fn gen_mask_is_reproducible() {
        let x = normal_data(5, 50, 1);
        let mech = Mechanism::MnarSelfMask { phi0: 0.3, phi1: 1.0 };
        let a = gen_mask((5, 50), &mech, Some(&x), SeedSpec::with_stream(42, 2)).unwrap();
        let b = gen_mask((5, 50), &mech, Some(&x), SeedSpec::with_stream(42, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ignorability() {
        assert!(is_ignorable(MechanismKind::Mcar, true));
        assert!(!is_ignorable(MechanismKind::MnarSelfMask, true));
        assert!(!is_ignorable(MechanismKind::Mar, false));
        assert!(is_ignorable(MechanismKind::Mar, true));
    }

    #[test]
    fn classify_univariate() {
        let m = Mask::from_fn(4, 6, |i, j| !(i == 0 && j % 2 == 0));
        assert_eq!(classify_pattern(&m), PatternClass::Univariate);
    }

    #[test]
    fn classify_staircase_as_monotone() {
        // column j (1-based) misses rows > p - j
        let p = 4;
        let m = Mask::from_fn(p, p, |i, j| (i + 1) <= p - (j + 1));
        assert_eq!(classify_pattern(&m), PatternClass::Monotone);
    }

    #[test]
    fn classify_multivariate_block() {
        let m = Mask::from_fn(4, 6, |i, j| !((i == 1 || i == 2) && j >= 3));
        assert_eq!(classify_pattern(&m), PatternClass::Multivariate);
    }

    /// Exhaustive check: rows 0 and 1 are never co-observed in any column.
    #[test]
    fn classify_file_matching() {
        let m = Mask::from_fn(3, 6, |i, j| match i {
            0 => j < 3,
            1 => j >= 3,
            _ => true,
        });
        for j in 0..6 {
            assert!(!(m.is_observed(0, j) && m.is_observed(1, j)));
        }
        assert_eq!(classify_pattern(&m), PatternClass::FileMatching);
    }

    #[test]
    fn classify_general() {
        let m = Mask::from_fn(3, 4, |i, j| !matches!((i, j), (0, 0) | (1, 1) | (2, 2) | (0, 2)));
        assert_eq!(classify_pattern(&m), PatternClass::General);
    }

    proptest::proptest! {
        #[test]
        fn single_row_masks_are_univariate(row in 0usize..5, bits in proptest::collection::vec(proptest::bool::ANY, 8)) {
            proptest::prop_assume!(bits.iter().any(|&b| !b));
            let m = Mask::from_fn(5, 8, |i, j| i != row || bits[j]);
            proptest::prop_assert_eq!(classify_pattern(&m), PatternClass::Univariate);
        }
    }
}
