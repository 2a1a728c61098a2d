//! Greedy maximum-cover selection over model ensembles: order models so
//! that each one adds the largest number of newly correct translations.

use std::collections::{BTreeMap, BTreeSet};

/// Result of a top-n greedy cover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverResult {
    /// Chosen model ids, in selection order.
    pub chosen_models: Vec<String>,
    /// Union of the chosen models' correct sentence indices.
    pub covered: BTreeSet<usize>,
    /// Newly covered sentences contributed by each chosen model.
    pub marginal_gains: Vec<usize>,
}

/// Pick up to `n` models, each time taking the one with the maximum
/// marginal gain over the sentences already covered. Ties break toward the
/// smallest model id; selection stops early once every gain is zero.
pub fn greedy_cover(correct_sets: &BTreeMap<String, BTreeSet<usize>>, n: usize) -> CoverResult {
    let mut result = CoverResult {
        chosen_models: Vec::new(),
        covered: BTreeSet::new(),
        marginal_gains: Vec::new(),
    };
    let mut remaining: BTreeSet<&String> = correct_sets.keys().collect();
    for _ in 0..n {
        let mut best: Option<(&String, usize)> = None;
        for &id in &remaining {
            let gain = correct_sets[id].difference(&result.covered).count();
            // Strict comparison keeps the earliest (smallest) id on ties.
            if best.map_or(true, |(_, g)| gain > g) {
                best = Some((id, gain));
            }
        }
        let Some((id, gain)) = best else { break };
        if gain == 0 {
            break;
        }
        result.covered.extend(correct_sets[id].iter().copied());
        result.chosen_models.push(id.clone());
        result.marginal_gains.push(gain);
        remaining.remove(&id.clone());
    }
    result
}

/// Union coverage of all models together.
#[derive(Debug, Clone, PartialEq)]
pub struct UnionCover {
    pub count: usize,
    pub count_no_overlap: usize,
    pub percent_total: f64,
    pub percent_no_overlap: f64,
}

/// Cardinality of the union of every model's correct set, with percentages
/// over all items and over the non-overlapping subset.
pub fn union_cover(
    correct_sets: &BTreeMap<String, BTreeSet<usize>>,
    total: usize,
    overlap_flags: &[bool],
) -> UnionCover {
    let mut union: BTreeSet<usize> = BTreeSet::new();
    for set in correct_sets.values() {
        union.extend(set.iter().copied());
    }
    let no_overlap_total = overlap_flags.iter().filter(|&&f| !f).count();
    let count_no_overlap =
        union.iter().filter(|&&i| overlap_flags.get(i).is_some_and(|&f| !f)).count();
    UnionCover {
        count: union.len(),
        count_no_overlap,
        percent_total: super::percent(union.len(), total),
        percent_no_overlap: super::percent(count_no_overlap, no_overlap_total),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sets(entries: &[(&str, &[usize])]) -> BTreeMap<String, BTreeSet<usize>> {
        entries
            .iter()
            .map(|(id, items)| (id.to_string(), items.iter().copied().collect()))
            .collect()
    }

    #[test]
    fn single_model_covers_its_set() {
        let s = sets(&[("m0", &[1, 4, 9])]);
        let result = greedy_cover(&s, 5);
        assert_eq!(result.chosen_models, vec!["m0"]);
        assert_eq!(result.covered, s["m0"]);
        assert_eq!(result.marginal_gains, vec![3]);
    }

    #[test]
    fn disjoint_sets_picked_largest_first() {
        let s = sets(&[("a", &[0, 1, 2, 3, 4]), ("b", &[10, 11, 12]), ("c", &[20])]);
        let result = greedy_cover(&s, 2);
        assert_eq!(result.chosen_models, vec!["a", "b"]);
        assert_eq!(result.marginal_gains, vec![5, 3]);
        assert_eq!(result.covered.len(), 8);
    }

    #[test]
    fn ties_break_to_smallest_id() {
        let s = sets(&[("z", &[1, 2]), ("a", &[3, 4]), ("m", &[5, 6])]);
        let result = greedy_cover(&s, 1);
        assert_eq!(result.chosen_models, vec!["a"]);
    }

    #[test]
    fn stops_when_gains_are_exhausted() {
        let s = sets(&[("a", &[1, 2]), ("b", &[1, 2]), ("c", &[2])]);
        let result = greedy_cover(&s, 3);
        assert_eq!(result.chosen_models, vec!["a"]);
        assert_eq!(result.marginal_gains, vec![2]);
    }

    /// Brute-force greedy recomputation: every round, rescan all unchosen
    /// models with a fresh set difference.
    fn greedy_oracle(
        correct_sets: &BTreeMap<String, BTreeSet<usize>>,
        n: usize,
    ) -> (Vec<String>, Vec<usize>, BTreeSet<usize>) {
        let mut chosen = Vec::new();
        let mut gains = Vec::new();
        let mut covered: BTreeSet<usize> = BTreeSet::new();
        for _ in 0..n {
            let mut best_id: Option<String> = None;
            let mut best_gain = 0usize;
            for (id, set) in correct_sets {
                if chosen.contains(id) {
                    continue;
                }
                let gain = set.iter().filter(|i| !covered.contains(i)).count();
                if gain > best_gain {
                    best_gain = gain;
                    best_id = Some(id.clone());
                }
            }
            match best_id {
                Some(id) if best_gain > 0 => {
                    covered.extend(correct_sets[&id].iter().copied());
                    chosen.push(id);
                    gains.push(best_gain);
                }
                _ => break,
            }
        }
        (chosen, gains, covered)
    }

    #[test]
    fn random_instances_match_brute_force() {
        let mut rng = Rng::new(2024);
        for _ in 0..200 {
            let models = 1 + rng.below(6) as usize;
            let sentences = 1 + rng.below(100) as usize;
            let mut correct: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
            for m in 0..models {
                let size = rng.below(sentences as u64 + 1) as usize;
                let set: BTreeSet<usize> =
                    (0..size).map(|_| rng.below(sentences as u64) as usize).collect();
                correct.insert(format!("m{m:02}"), set);
            }
            let n = 1 + rng.below(4) as usize;
            let got = greedy_cover(&correct, n);
            let (want_ids, want_gains, want_cov) = greedy_oracle(&correct, n);
            assert_eq!(got.chosen_models, want_ids);
            assert_eq!(got.marginal_gains, want_gains);
            assert_eq!(got.covered, want_cov);

            // Union properties against the same instance.
            let flags = vec![false; sentences];
            let union = union_cover(&correct, sentences, &flags);
            let brute: BTreeSet<usize> =
                correct.values().flat_map(|s| s.iter().copied()).collect();
            assert_eq!(union.count, brute.len());
            assert!(union.count >= correct.values().map(BTreeSet::len).max().unwrap_or(0));
            assert!(union.count >= got.covered.len());
        }
    }

    #[test]
    fn greedy_gains_are_non_increasing_and_coverage_monotone() {
        let mut rng = Rng::new(7);
        for _ in 0..50 {
            let mut correct: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
            for m in 0..5 {
                let set: BTreeSet<usize> =
                    (0..rng.below(40)).map(|_| rng.below(60) as usize).collect();
                correct.insert(format!("m{m}"), set);
            }
            let full = greedy_cover(&correct, 5);
            for pair in full.marginal_gains.windows(2) {
                assert!(pair[0] >= pair[1]);
            }
            let mut prev = 0;
            for n in 1..=5 {
                let cov = greedy_cover(&correct, n).covered.len();
                assert!(cov >= prev);
                prev = cov;
            }
        }
    }

    #[test]
    fn union_of_disjoint_sets_sums() {
        let s = sets(&[("a", &[0, 1]), ("b", &[2, 3, 4])]);
        let flags = vec![false, true, false, true, false];
        let union = union_cover(&s, 10, &flags);
        assert_eq!(union.count, 5);
        assert_eq!(union.percent_total, 50.0);
        assert_eq!(union.count_no_overlap, 3);
        assert_eq!(union.percent_no_overlap, 100.0);
    }
}
