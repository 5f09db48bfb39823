//! Cross-validation fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FoldError {
    #[error("need at least {k} groups for {k} folds, found {groups}")]
    TooFewGroups { k: usize, groups: usize },
    #[error("fold count must be at least 2, got {0}")]
    BadK(usize),
}

/// `folds[f]` lists the indices of the cases held out in fold `f`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub grouped_by_patient: bool,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }

    /// Fold holding case `i`, if any.
    pub fn fold_of(&self, i: usize) -> Option<usize> {
        self.folds.iter().position(|f| f.contains(&i))
    }
}

/// Splits cases into `k` folds. With `grouped_by_patient`, all ears of a
/// patient land in one fold and fold sizes differ by at most one patient;
/// otherwise every case is its own group.
pub fn make_folds(patients: &[&str], k: usize, seed: u64, grouped_by_patient: bool) -> Result<FoldPlan, FoldError> {
    if k < 2 {
        return Err(FoldError::BadK(k));
    }
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, p) in patients.iter().enumerate() {
        let key = if grouped_by_patient { p.to_string() } else { i.to_string() };
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    if groups.len() < k {
        return Err(FoldError::TooFewGroups { k, groups: groups.len() });
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (g, (_, members)) in groups.into_iter().enumerate() {
        folds[g % k].extend(members);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldPlan {
        k,
        grouped_by_patient,
        seed,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patient_ids(n_patients: usize, bilateral: usize) -> Vec<String> {
        let mut v = Vec::new();
        for p in 0..n_patients {
            v.push(format!("p{p}"));
            if p < bilateral {
                v.push(format!("p{p}"));
            }
        }
        v
    }

    #[test]
    fn twenty_five_patients_forty_ears() {
        let ids = patient_ids(25, 15);
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let plan = make_folds(&refs, 5, 7, true).unwrap();
        let mut all: Vec<usize> = plan.folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        for f in &plan.folds {
            let mut ps: Vec<&str> = f.iter().map(|&i| refs[i]).collect();
            ps.dedup();
            assert_eq!(ps.len(), 5);
        }
        for (i, p) in refs.iter().enumerate() {
            let fold = plan.fold_of(i).unwrap();
            assert!(plan.folds[fold].iter().all(|&j| refs[j] != *p || plan.fold_of(j) == Some(fold)));
        }
    }

    #[test]
    fn one_ear_per_patient() {
        let refs = ["a", "b", "c", "d", "e"];
        let plan = make_folds(&refs, 5, 1, true).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 1));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let ids = patient_ids(25, 15);
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        assert_eq!(make_folds(&refs, 5, 3, true), make_folds(&refs, 5, 3, true));
        assert_ne!(make_folds(&refs, 5, 3, true), make_folds(&refs, 5, 4, true));
    }

    #[test]
    fn too_few_patients() {
        assert_eq!(
            make_folds(&["a", "a", "b"], 5, 0, true),
            Err(FoldError::TooFewGroups { k: 5, groups: 2 })
        );
    }

    #[test]
    fn ungrouped_splits_pairs() {
        let refs = ["a", "a", "b", "b", "c"];
        let plan = make_folds(&refs, 5, 0, false).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 1));
        assert!(make_folds(&refs, 5, 0, true).is_err());
    }
}
