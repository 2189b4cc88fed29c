use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{label_counts, BinaryLabel, DataError};

/// How to carve a dataset into train / validation / test.
///
/// `test_fraction` is taken from the whole set, `validation_fraction` from
/// what remains after the test cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.15,
            validation_fraction: 0.15,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec {
            seed,
            ..SplitSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (name, f) in [
            ("test_fraction", self.test_fraction),
            ("validation_fraction", self.validation_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(DataError::InvalidSplit(format!(
                    "{name} must lie in (0, 1), got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// Sorted, disjoint index lists that together cover `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Train and validation together, sorted.
    pub fn train_and_validation(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.train.iter().chain(&self.validation).copied().collect();
        all.sort_unstable();
        all
    }
}

// Guards `ceil`/`floor` against products like 100 * 0.15 = 15.000000000000002.
const ROUNDING_SLACK: f64 = 1e-9;

/// Splits sample indices by label.
///
/// Cut sizes are `ceil(n * fraction)`. With stratification each label
/// contributes `floor(n_label * fraction)` and the shortfall is handed out
/// one sample per label, largest label first, so every label's share is
/// within one sample of its global proportion.
pub fn stratified_split(labels: &[BinaryLabel], spec: &SplitSpec) -> Result<SplitIndices, DataError> {
    spec.validate()?;
    let counts = label_counts(labels.iter().copied());
    for label in BinaryLabel::BOTH {
        if counts[label.index()] == 0 {
            return Err(DataError::MissingLabel(label));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let all: Vec<usize> = (0..labels.len()).collect();
    let (mut test, rest) = cut(&all, labels, spec.test_fraction, spec.stratified, &mut rng);
    let (mut validation, mut train) =
        cut(&rest, labels, spec.validation_fraction, spec.stratified, &mut rng);
    test.sort_unstable();
    validation.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices {
        train,
        validation,
        test,
    })
}

/// Takes `ceil(len * fraction)` of `pool` (at most `len - 1`), returning
/// `(taken, remaining)`.
fn cut(
    pool: &[usize],
    labels: &[BinaryLabel],
    fraction: f64,
    stratified: bool,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let n = pool.len();
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let target = ((n as f64 * fraction - ROUNDING_SLACK).ceil() as usize).min(n.saturating_sub(1));

    if !stratified {
        let mut shuffled = pool.to_vec();
        shuffled.shuffle(rng);
        let rest = shuffled.split_off(target);
        return (shuffled, rest);
    }

    let mut strata: Vec<Vec<usize>> = BinaryLabel::BOTH
        .iter()
        .map(|&l| pool.iter().copied().filter(|&i| labels[i] == l).collect())
        .collect();
    for s in &mut strata {
        s.shuffle(rng);
    }
    let mut take: Vec<usize> = strata
        .iter()
        .map(|s| (s.len() as f64 * fraction + ROUNDING_SLACK).floor() as usize)
        .collect();
    let mut remainder = target.saturating_sub(take.iter().sum());
    let mut order: Vec<usize> = (0..strata.len()).collect();
    // largest stratum first; ties resolved toward the lower label
    order.sort_by(|&a, &b| strata[b].len().cmp(&strata[a].len()).then(a.cmp(&b)));
    while remainder > 0 {
        let before = remainder;
        for &s in &order {
            if remainder == 0 {
                break;
            }
            if take[s] < strata[s].len() {
                take[s] += 1;
                remainder -= 1;
            }
        }
        if remainder == before {
            break;
        }
    }
    let mut taken = Vec::with_capacity(target);
    let mut rest = Vec::with_capacity(n - target);
    for (s, t) in strata.into_iter().zip(take) {
        taken.extend_from_slice(&s[..t]);
        rest.extend_from_slice(&s[t..]);
    }
    (taken, rest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(normal: usize, abnormal: usize) -> Vec<BinaryLabel> {
        let mut v = vec![BinaryLabel::Normal; normal];
        v.extend(vec![BinaryLabel::Abnormal; abnormal]);
        v
    }

    fn count(idx: &[usize], labels: &[BinaryLabel], l: BinaryLabel) -> usize {
        idx.iter().filter(|&&i| labels[i] == l).count()
    }

    #[test]
    fn hundred_samples_sixty_forty() {
        let y = labels(40, 60);
        let spec = SplitSpec::with_seed(3);
        let s = stratified_split(&y, &spec).unwrap();
        assert_eq!(s.test.len(), 15);
        assert_eq!(count(&s.test, &y, BinaryLabel::Abnormal), 9);
        assert_eq!(count(&s.test, &y, BinaryLabel::Normal), 6);
    }

    #[test]
    fn herlev_sized_split() {
        // 675 abnormal / 242 normal as in the published table
        let y = labels(242, 675);
        let s = stratified_split(&y, &SplitSpec::with_seed(11)).unwrap();
        assert_eq!(s.test.len(), 138);
        assert_eq!(s.validation.len(), 117);
        assert_eq!(s.train.len(), 662);
    }

    #[test]
    fn same_seed_same_indices() {
        let y = labels(30, 70);
        let a = stratified_split(&y, &SplitSpec::with_seed(9)).unwrap();
        let b = stratified_split(&y, &SplitSpec::with_seed(9)).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&y, &SplitSpec::with_seed(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_missing_label_and_bad_fractions() {
        assert!(matches!(
            stratified_split(&labels(0, 10), &SplitSpec::default()),
            Err(DataError::MissingLabel(BinaryLabel::Normal))
        ));
        let spec = SplitSpec {
            test_fraction: 1.0,
            ..SplitSpec::default()
        };
        assert!(stratified_split(&labels(5, 5), &spec).is_err());
    }

    proptest! {
        #[test]
        fn disjoint_exhaustive_and_stratified(
            normal in 1usize..120,
            abnormal in 1usize..120,
            test_fraction in 0.01f64..0.99,
            validation_fraction in 0.01f64..0.99,
            seed in any::<u64>(),
            stratified in any::<bool>(),
        ) {
            let y = labels(normal, abnormal);
            let spec = SplitSpec { test_fraction, validation_fraction, seed, stratified };
            let s = stratified_split(&y, &spec).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
            if stratified {
                let n = y.len() as f64;
                for l in BinaryLabel::BOTH {
                    let global = count(&(0..y.len()).collect::<Vec<_>>(), &y, l) as f64 / n;
                    let expected = global * s.test.len() as f64;
                    let got = count(&s.test, &y, l) as f64;
                    prop_assert!((got - expected).abs() <= 1.0 + 1e-9,
                        "label {l}: got {got}, expected {expected}");
                }
            }
        }
    }
}
