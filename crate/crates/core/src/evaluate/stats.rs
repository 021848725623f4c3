//! Score aggregation and agreement statistics.

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

/// Median (mean of the middle two for even counts) and population standard
/// deviation.
pub fn aggregate(scores: &[u8]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::Empty("score list"));
    }
    let mut s: Vec<f64> = scores.iter().map(|&x| f64::from(x)).collect();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
    let mean = s.iter().sum::<f64>() / n as f64;
    let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    Ok((median, var.sqrt()))
}

/// Unweighted Cohen's kappa between two raters.
///
/// Returns 1 when chance agreement and observed agreement are both perfect.
pub fn cohen_kappa(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Precondition("kappa needs at least two paired ratings".into()));
    }
    if let Some(x) = a.iter().chain(b).find(|x| !(1..=5).contains(*x)) {
        return Err(Error::Precondition(format!("label {x} outside 1..=5")));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut ca = [0usize; 6];
    let mut cb = [0usize; 6];
    for (&x, &y) in a.iter().zip(b) {
        ca[x as usize] += 1;
        cb[y as usize] += 1;
    }
    let expected: f64 = (1..=5).map(|k| ca[k] as f64 * cb[k] as f64).sum::<f64>() / (n * n);
    if (1.0 - expected).abs() < 1e-12 {
        // Both raters used a single identical label.
        return Ok(if observed == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// Width of the normal-approximation 95% interval for the mean,
/// `2·1.96·sd/√n`, using the population standard deviation.
pub fn ci_width(scores: &[f64]) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::Precondition("confidence interval needs at least two scores".into()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(2.0 * Z_95 * var.sqrt() / n.sqrt())
}

/// Median rounded half away from zero to the nearest Likert label.
pub fn likert_round(x: f64) -> u8 {
    x.round().clamp(1.0, 5.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[1, 2, 3, 4, 5]).unwrap().0, 3.0);
        assert_eq!(aggregate(&[4; 5]).unwrap().1, 0.0);
        assert_eq!(aggregate(&[1, 1, 5, 5]).unwrap(), (3.0, 2.0));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(cohen_kappa(&[1, 1, 2, 2], &[1, 2, 2, 2]).unwrap(), 0.5);
        assert_eq!(cohen_kappa(&[3, 1, 4, 1, 5], &[3, 1, 4, 1, 5]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[4, 4, 4], &[4, 4, 4]).unwrap(), 1.0);
        assert!(cohen_kappa(&[1, 2], &[1]).is_err());
        assert!(cohen_kappa(&[1], &[1]).is_err());
        assert!(cohen_kappa(&[0, 2], &[1, 2]).is_err());
    }

    #[test]
    fn independent_raters_have_near_zero_kappa() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<u8> = (0..1000).map(|_| rng.gen_range(1..=5)).collect();
        let b: Vec<u8> = (0..1000).map(|_| rng.gen_range(1..=5)).collect();
        assert!(cohen_kappa(&a, &b).unwrap().abs() <= 0.1);
    }

    #[test]
    fn ci_examples() {
        assert_eq!(ci_width(&[3.0; 4]).unwrap(), 0.0);
        let two = 2.0 * 1.96 / 2f64.sqrt();
        assert!((ci_width(&[3.0, 5.0]).unwrap() - two).abs() < 1e-12);
        assert!(ci_width(&[3.0]).is_err());
    }

    #[test]
    fn ci_shrinks_with_root_n() {
        // Alternating 2/4 has sd exactly 1 at every even n.
        let widths: Vec<f64> = [4usize, 16, 64]
            .iter()
            .map(|&n| {
                let s: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 2.0 } else { 4.0 }).collect();
                ci_width(&s).unwrap() * (n as f64).sqrt()
            })
            .collect();
        for w in &widths {
            assert!((w - widths[2]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn kappa_identity(a in prop::collection::vec(1u8..=5, 2..40)) {
            prop_assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn kappa_in_range(pairs in prop::collection::vec((1u8..=5, 1u8..=5), 2..40)) {
            let (a, b): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let k = cohen_kappa(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&k));
        }

        #[test]
        fn aggregate_matches_brute_force(s in prop::collection::vec(1u8..=5, 1..9)) {
            let (median, std) = aggregate(&s).unwrap();
            // The median minimises the summed absolute deviation.
            let cost = |m: f64| s.iter().map(|&x| (f64::from(x) - m).abs()).sum::<f64>();
            let grid: Vec<f64> = (2..=10).map(|k| k as f64 / 2.0).collect();
            let best = grid.iter().map(|&m| cost(m)).fold(f64::INFINITY, f64::min);
            prop_assert!((cost(median) - best).abs() < 1e-9);
            let n = s.len() as f64;
            let pairs: f64 = s.iter().flat_map(|&x| s.iter().map(move |&y| (f64::from(x) - f64::from(y)).powi(2))).sum();
            prop_assert!((std * std - pairs / (2.0 * n * n)).abs() < 1e-9);
        }
    }
}
