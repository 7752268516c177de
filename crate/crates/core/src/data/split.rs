use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DatasetManifest, ManifestEntry, CLASS_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
    #[serde(default = "yes")]
    pub stratified: bool,
}

fn yes() -> bool {
    true
}

impl SplitSpec {
    /// 0.8 / 0.1 / 0.1, stratified.
    pub fn new(seed: u64) -> Self {
        SplitSpec { train: 0.8, validation: 0.1, test: 0.1, seed, stratified: true }
    }

    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.validation, self.test];
        if r.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::config(format!("split ratios {r:?} must all be positive")));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split ratios {r:?} sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// `(validation, test)` sizes for `n` items. Both are floored and the
    /// remainder goes to train, except that train never exceeds its share
    /// by more than one item; such a unit goes to whichever of validation
    /// and test has the larger fractional remainder.
    fn allocate(&self, n: usize) -> (usize, usize) {
        let q = |r: f64| n as f64 * r;
        let floor = |r: f64| (q(r) + 1e-9).floor() as usize;
        let (mut val, mut test) = (floor(self.validation), floor(self.test));
        if (n - val - test) as f64 > q(self.train) + 1.0 + 1e-9 {
            if q(self.validation) - val as f64 >= q(self.test) - test as f64 {
                val += 1;
            } else {
                test += 1;
            }
        }
        (val, test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: DatasetManifest,
    pub validation: DatasetManifest,
    pub test: DatasetManifest,
}

/// Seeded, disjoint and exhaustive three-way split, sized per class when
/// stratified.
pub fn split_dataset(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if manifest.is_empty() {
        return Err(Error::data("cannot split an empty manifest"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups: Vec<Vec<&ManifestEntry>> = if spec.stratified {
        (0..CLASS_NAMES.len()).map(|c| manifest.entries.iter().filter(|e| e.label == c).collect()).collect()
    } else {
        vec![manifest.entries.iter().collect()]
    };
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (class, mut group) in groups.into_iter().enumerate() {
        let (n_val, n_test) = spec.allocate(group.len());
        if spec.stratified && (n_val == 0 || n_test == 0 || n_val + n_test >= group.len()) {
            return Err(Error::Stratification(format!(
                "class {} has {} clips, too few to give every subset one at ratios {}/{}/{}",
                CLASS_NAMES[class],
                group.len(),
                spec.train,
                spec.validation,
                spec.test
            )));
        }
        group.shuffle(&mut rng);
        validation.extend(group[..n_val].iter().map(|&e| e.clone()));
        test.extend(group[n_val..n_val + n_test].iter().map(|&e| e.clone()));
        train.extend(group[n_val + n_test..].iter().map(|&e| e.clone()));
    }
    Ok(Split {
        train: DatasetManifest::new(train)?,
        validation: DatasetManifest::new(validation)?,
        test: DatasetManifest::new(test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(nv: usize, v: usize) -> DatasetManifest {
        let entries = (0..nv + v)
            .map(|i| ManifestEntry {
                clip_id: format!("c{i}"),
                path: format!("c{i}"),
                label: usize::from(i >= nv),
                frames: 1,
                height: 1,
                width: 1,
            })
            .collect();
        DatasetManifest::new(entries).unwrap()
    }

    #[test]
    fn split_of_350_clips() {
        let m = manifest(120, 230);
        for stratified in [true, false] {
            let s = split_dataset(&m, &SplitSpec { stratified, ..SplitSpec::new(3) }).unwrap();
            assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (280, 35, 35));
        }
    }

    #[test]
    fn bad_ratios_are_config_errors() {
        let m = manifest(10, 10);
        let spec = SplitSpec { train: 0.8, validation: 0.1, test: 0.2, ..SplitSpec::new(0) };
        assert!(matches!(split_dataset(&m, &spec), Err(Error::Config(_))));
        let spec = SplitSpec { train: 1.0, validation: 0.0, test: 0.0, ..SplitSpec::new(0) };
        assert!(matches!(split_dataset(&m, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn tiny_class_fails_stratification() {
        let m = manifest(3, 40);
        assert!(matches!(split_dataset(&m, &SplitSpec::new(0)), Err(Error::Stratification(_))));
        let spec = SplitSpec { stratified: false, ..SplitSpec::new(0) };
        assert!(split_dataset(&m, &spec).is_ok());
    }
}
