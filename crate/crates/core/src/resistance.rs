//! Resistance measurement: attack every image of an evaluation set, apply
//! the none-becomes-original fallback, and report Ω, the ratio of failed
//! attacks to total inputs. Also multi-run stability.
//!
//! Per-image attack runs fan out across a worker pool. Each image derives
//! its RNG stream from `(master seed, dataset index)`, so the outcome of an
//! image never depends on scheduling or on which other images are present.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{AttackBudget, AttackError, AttackResult, DecisionModel, DecisionOracle};
use crate::data::{seeded_index_permutation, DataError, Dataset, EvalItem, EvalSet, Image};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("only {found} correctly classified images available, {requested} requested")]
    InsufficientCorrectImages { requested: usize, found: usize },
    #[error("stability needs at least 2 runs")]
    TooFewRuns,
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// One attack task: everything a runner needs for a single image.
pub struct AttackTask<'a, 'b> {
    pub oracle: &'a mut DecisionOracle<'b>,
    pub original: &'a Image,
    pub original_class: usize,
    pub dataset_index: usize,
    pub budget: &'a AttackBudget,
}

/// An attack strategy the harness can drive. Implemented by
/// [`crate::attacks::AttackKind`] and by scripted mocks in tests.
pub trait AttackRunner: Sync {
    fn run(&self, task: AttackTask<'_, '_>) -> Result<AttackResult, AttackError>;
}

impl AttackRunner for crate::attacks::AttackKind {
    fn run(&self, task: AttackTask<'_, '_>) -> Result<AttackResult, AttackError> {
        (*self).run(
            task.oracle,
            task.original,
            task.original_class,
            task.budget,
        )
    }
}

/// Outcome of one evaluated image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerImageOutcome {
    pub dataset_index: usize,
    /// The attack reported a verified adversarial.
    pub attack_found: bool,
    /// After the fallback, the candidate still classifies as the original.
    pub failed: bool,
    pub queries: u64,
    pub l2_to_original: Option<f64>,
    /// Stored adversarial for post-hoc re-verification (absent on failure).
    pub adversarial: Option<Image>,
}

/// Ω over one evaluation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResistanceResult {
    pub omega: f64,
    pub n_failed: usize,
    pub n_total: usize,
    pub per_image: Vec<PerImageOutcome>,
}

/// Several independently seeded resistance runs and their spread.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: Vec<ResistanceResult>,
    /// max - min of the run omegas.
    pub spread: f64,
}

/// Derives a per-image seed from the master seed and a dataset index using
/// the SplitMix64 finalizer, so parallel workers get independent,
/// schedule-free streams.
pub fn derive_seed(master: u64, index: usize) -> u64 {
    let mut z = master ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keeps only the items the model classifies correctly, topping up along
/// the evaluation set's seeded permutation until the original size is
/// restored or the dataset runs out.
pub fn filter_correct(
    model: &dyn DecisionModel,
    dataset: &Dataset,
    eval: &EvalSet,
) -> Result<EvalSet, HarnessError> {
    let requested = eval.items.len();
    let mut kept: Vec<EvalItem> = Vec::with_capacity(requested);
    let mut seen = vec![false; dataset.len()];
    for item in &eval.items {
        seen[item.dataset_index] = true;
        if model.decide(&item.image) == item.label {
            kept.push(item.clone());
        }
    }
    if kept.len() < requested {
        for index in seeded_index_permutation(dataset.len(), eval.seed) {
            if kept.len() >= requested {
                break;
            }
            if seen[index] {
                continue;
            }
            seen[index] = true;
            let image = dataset.image(index);
            let label = dataset.label(index);
            if model.decide(&image) == label {
                kept.push(EvalItem {
                    image,
                    label,
                    dataset_index: index,
                });
            }
        }
    }
    if kept.len() < requested {
        return Err(HarnessError::InsufficientCorrectImages {
            requested,
            found: kept.len(),
        });
    }
    Ok(EvalSet {
        items: kept,
        seed: eval.seed,
    })
}

/// Runs the attack on every image of an (already filtered) evaluation set
/// and counts failures: an attack that returns nothing falls back to the
/// original image, and an image counts as failed when the candidate is
/// still classified the same as the original.
pub fn resistance(
    model: &dyn DecisionModel,
    attack: &dyn AttackRunner,
    eval: &EvalSet,
    budget: &AttackBudget,
) -> Result<ResistanceResult, HarnessError> {
    let per_image: Vec<PerImageOutcome> = eval
        .items
        .par_iter()
        .map(|item| attack_one(model, attack, item, budget))
        .collect::<Result<_, _>>()?;
    let n_total = per_image.len();
    let n_failed = per_image.iter().filter(|o| o.failed).count();
    let omega = if n_total == 0 {
        0.0
    } else {
        n_failed as f64 / n_total as f64
    };
    Ok(ResistanceResult {
        omega,
        n_failed,
        n_total,
        per_image,
    })
}

fn attack_one(
    model: &dyn DecisionModel,
    attack: &dyn AttackRunner,
    item: &EvalItem,
    budget: &AttackBudget,
) -> Result<PerImageOutcome, HarnessError> {
    let mut image_budget = budget.clone();
    image_budget.seed = derive_seed(budget.seed, item.dataset_index);
    let mut oracle = DecisionOracle::new(model);
    let reference = model.decide(&item.image);
    let result = attack.run(AttackTask {
        oracle: &mut oracle,
        original: &item.image,
        original_class: reference,
        dataset_index: item.dataset_index,
        budget: &image_budget,
    })?;
    let candidate = result.adversarial.clone().unwrap_or_else(|| item.image.clone());
    let failed = model.decide(&candidate) == reference;
    Ok(PerImageOutcome {
        dataset_index: item.dataset_index,
        attack_found: result.found,
        failed,
        queries: result.queries_used,
        l2_to_original: result.l2_to_original,
        adversarial: result.adversarial,
    })
}

/// Runs `resistance` once per seed with a fresh sample each time (sampled,
/// filtered for correctness, then attacked) and reports the spread of the
/// measured omegas.
pub fn stability(
    model: &dyn DecisionModel,
    attack: &dyn AttackRunner,
    dataset: &Dataset,
    n: usize,
    budget: &AttackBudget,
    seeds: &[u64],
) -> Result<StabilityReport, HarnessError> {
    if seeds.len() < 2 {
        return Err(HarnessError::TooFewRuns);
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let eval = crate::data::sample_eval_subset(dataset, n, seed)?;
        let eval = filter_correct(model, dataset, &eval)?;
        let mut run_budget = budget.clone();
        run_budget.seed = seed;
        runs.push(resistance(model, attack, &eval, &run_budget)?);
    }
    let max = runs.iter().map(|r| r.omega).fold(f64::NEG_INFINITY, f64::max);
    let min = runs.iter().map(|r| r.omega).fold(f64::INFINITY, f64::min);
    Ok(StabilityReport {
        runs,
        spread: max - min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackBudget;
    use crate::data::{sample_eval_subset, Dataset, Image, PixelDomain, Split, IMAGE_PIXELS};

    /// Dataset where image i encodes its label at pixel 0 (`25 * label`)
    /// and its own index at pixel 1, so tests can single out one item. The
    /// matching model reads the class straight off pixel 0, so it is
    /// perfect by construction.
    fn toy_dataset(n: usize) -> Dataset {
        assert!(n <= 255);
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let images = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let mut pixels = vec![0.0; IMAGE_PIXELS];
                pixels[0] = f64::from(l) * 25.0;
                pixels[1] = i as f64;
                Image::new(PixelDomain::Raw255, pixels).unwrap()
            })
            .collect();
        Dataset::new(images, labels, Split::Test).unwrap()
    }

    fn perfect_model() -> impl DecisionModel {
        |img: &Image| (img.pixels()[0] / 25.0).round().clamp(0.0, 9.0) as usize
    }

    struct AlwaysFail;
    impl AttackRunner for AlwaysFail {
        fn run(&self, task: AttackTask<'_, '_>) -> Result<AttackResult, AttackError> {
            let _ = task.oracle.query(task.original);
            Ok(AttackResult {
                found: false,
                adversarial: None,
                queries_used: 1,
                l2_to_original: None,
            })
        }
    }

    /// Returns the original with pixel 0 nudged two classes up or down,
    /// which always flips the toy model's decision.
    struct AlwaysSucceed;
    impl AttackRunner for AlwaysSucceed {
        fn run(&self, task: AttackTask<'_, '_>) -> Result<AttackResult, AttackError> {
            let p0 = task.original.pixels()[0];
            let new = if p0 < 100.0 { p0 + 50.0 } else { p0 - 50.0 };
            let adv = task.original.with_pixel(0, new);
            let _ = task.oracle.query(&adv);
            Ok(AttackResult {
                found: true,
                l2_to_original: Some(50.0),
                adversarial: Some(adv),
                queries_used: 1,
            })
        }
    }

    /// Succeeds only on odd dataset indices.
    struct FailOnEven;
    impl AttackRunner for FailOnEven {
        fn run(&self, task: AttackTask<'_, '_>) -> Result<AttackResult, AttackError> {
            if task.dataset_index % 2 == 0 {
                AlwaysFail.run(task)
            } else {
                AlwaysSucceed.run(task)
            }
        }
    }

    #[test]
    fn filter_keeps_everything_for_a_perfect_model() {
        let ds = toy_dataset(30);
        let model = perfect_model();
        let eval = sample_eval_subset(&ds, 12, 4).unwrap();
        let filtered = filter_correct(&model, &ds, &eval).unwrap();
        let a: Vec<usize> = eval.items.iter().map(|i| i.dataset_index).collect();
        let b: Vec<usize> = filtered.items.iter().map(|i| i.dataset_index).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn filter_replaces_a_single_wrong_item() {
        let ds = toy_dataset(30);
        let eval = sample_eval_subset(&ds, 10, 4).unwrap();
        let victim = eval.items[3].dataset_index;
        // wrapper model forced wrong on exactly that dataset index
        let wrong_model = move |img: &Image| {
            let class = (img.pixels()[0] / 25.0).round().clamp(0.0, 9.0) as usize;
            if img.pixels()[1] as usize == victim {
                (class + 1) % 10
            } else {
                class
            }
        };
        let filtered = filter_correct(&wrong_model, &ds, &eval).unwrap();
        assert_eq!(filtered.items.len(), 10);
        assert!(filtered.items.iter().all(|i| i.dataset_index != victim));
        // the other nine sampled items survive in order
        let surviving: Vec<usize> = eval
            .items
            .iter()
            .map(|i| i.dataset_index)
            .filter(|&i| i != victim)
            .collect();
        let kept: Vec<usize> = filtered.items[..9].iter().map(|i| i.dataset_index).collect();
        assert_eq!(kept, surviving);
        // and the replacement is the next correct draw along the permutation
        let replacement = filtered.items[9].dataset_index;
        assert!(!eval.items.iter().any(|i| i.dataset_index == replacement));
        for item in &filtered.items {
            assert_eq!(wrong_model.decide(&item.image), item.label);
        }
    }

    #[test]
    fn filter_errors_when_not_enough_correct_images() {
        let ds = toy_dataset(20); // 2 per class
        let constant = |_img: &Image| 0usize;
        let eval = sample_eval_subset(&ds, 10, 1).unwrap();
        match filter_correct(&constant, &ds, &eval) {
            Err(HarnessError::InsufficientCorrectImages { requested, found }) => {
                assert_eq!(requested, 10);
                assert_eq!(found, 2); // only the two label-0 images survive
            }
            other => panic!("expected InsufficientCorrectImages, got {other:?}"),
        }
        // a smaller request succeeds
        let eval = sample_eval_subset(&ds, 2, 1).unwrap();
        let filtered = filter_correct(&constant, &ds, &eval).unwrap();
        assert_eq!(filtered.items.len(), 2);
    }

    #[test]
    fn omega_is_one_when_every_attack_fails() {
        let ds = toy_dataset(20);
        let model = perfect_model();
        let eval = filter_correct(&model, &ds, &sample_eval_subset(&ds, 20, 0).unwrap()).unwrap();
        let result = resistance(&model, &AlwaysFail, &eval, &AttackBudget::default()).unwrap();
        assert_eq!(result.omega, 1.0);
        assert_eq!(result.n_failed, 20);
        assert_eq!(result.n_total, 20);
    }

    #[test]
    fn omega_is_zero_when_every_attack_succeeds() {
        let ds = toy_dataset(20);
        let model = perfect_model();
        let eval = filter_correct(&model, &ds, &sample_eval_subset(&ds, 20, 0).unwrap()).unwrap();
        let result =
            resistance(&model, &AlwaysSucceed, &eval, &AttackBudget::default()).unwrap();
        assert_eq!(result.omega, 0.0);
        assert_eq!(result.n_failed, 0);
    }

    #[test]
    fn omega_is_half_when_even_indices_fail() {
        let ds = toy_dataset(20);
        let model = perfect_model();
        let eval = filter_correct(&model, &ds, &sample_eval_subset(&ds, 20, 0).unwrap()).unwrap();
        let result = resistance(&model, &FailOnEven, &eval, &AttackBudget::default()).unwrap();
        assert_eq!(result.omega, 0.5);
        for outcome in &result.per_image {
            assert_eq!(outcome.failed, outcome.dataset_index % 2 == 0);
        }
    }

    #[test]
    fn omega_equals_failed_over_total_exactly() {
        let ds = toy_dataset(30);
        let model = perfect_model();
        let eval = filter_correct(&model, &ds, &sample_eval_subset(&ds, 25, 3).unwrap()).unwrap();
        let result = resistance(&model, &FailOnEven, &eval, &AttackBudget::default()).unwrap();
        assert_eq!(result.omega, result.n_failed as f64 / result.n_total as f64);
        assert_eq!(
            result.n_failed,
            result.per_image.iter().filter(|o| o.failed).count()
        );
    }

    #[test]
    fn subset_outcomes_match_full_run() {
        // per-image determinism: an image's outcome is identical whether it
        // is attacked alone or as part of the full set
        let ds = toy_dataset(16);
        let model = perfect_model();
        let budget = AttackBudget {
            seed: 77,
            noise_trials: 20,
            ..AttackBudget::default()
        };
        let eval = filter_correct(&model, &ds, &sample_eval_subset(&ds, 16, 5).unwrap()).unwrap();
        let full = resistance(
            &model,
            &crate::attacks::AttackKind::UniformNoise,
            &eval,
            &budget,
        )
        .unwrap();
        let subset = EvalSet {
            items: eval.items[4..8].to_vec(),
            seed: eval.seed,
        };
        let partial = resistance(
            &model,
            &crate::attacks::AttackKind::UniformNoise,
            &subset,
            &budget,
        )
        .unwrap();
        for (a, b) in partial.per_image.iter().zip(&full.per_image[4..8]) {
            assert_eq!(a.dataset_index, b.dataset_index);
            assert_eq!(a.failed, b.failed);
            assert_eq!(a.queries, b.queries);
            assert_eq!(a.adversarial, b.adversarial);
        }
    }

    #[test]
    fn found_and_failed_never_coincide() {
        let ds = toy_dataset(20);
        let model = perfect_model();
        let eval = filter_correct(&model, &ds, &sample_eval_subset(&ds, 20, 2).unwrap()).unwrap();
        let result =
            resistance(&model, &AlwaysSucceed, &eval, &AttackBudget::default()).unwrap();
        for outcome in &result.per_image {
            assert!(!(outcome.attack_found && outcome.failed));
        }
    }

    #[test]
    fn stability_spread_zero_for_deterministic_failures() {
        let ds = toy_dataset(40);
        let model = perfect_model();
        let report = stability(
            &model,
            &AlwaysFail,
            &ds,
            10,
            &AttackBudget::default(),
            &[1, 2, 3],
        )
        .unwrap();
        assert_eq!(report.spread, 0.0);
        assert!(report.runs.iter().all(|r| r.omega == 1.0));
    }

    #[test]
    fn stability_identical_seeds_identical_omegas() {
        let ds = toy_dataset(40);
        let model = perfect_model();
        let report = stability(
            &model,
            &FailOnEven,
            &ds,
            12,
            &AttackBudget::default(),
            &[9, 9],
        )
        .unwrap();
        assert_eq!(report.runs[0].omega, report.runs[1].omega);
        assert_eq!(report.spread, 0.0);
    }

    #[test]
    fn stability_needs_two_runs() {
        let ds = toy_dataset(10);
        let model = perfect_model();
        assert!(matches!(
            stability(&model, &AlwaysFail, &ds, 5, &AttackBudget::default(), &[1]),
            Err(HarnessError::TooFewRuns)
        ));
    }
}
