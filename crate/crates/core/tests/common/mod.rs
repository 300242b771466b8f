#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synuse::store::{Domain, EmbeddingSet, Extractor, FeatureRecord};
use synuse::trainer::{ArmSpec, Learner};
use synuse::Result;

pub fn random_set(
    rng: &mut impl Rng,
    domain: Domain,
    extractor: Extractor,
    classes: u32,
    per_class: usize,
    dim: usize,
) -> EmbeddingSet {
    let tag = match domain {
        Domain::Real => "r",
        Domain::Synthetic => "s",
    };
    let mut records = vec![];
    for c in 0..classes {
        for i in 0..per_class {
            records.push(FeatureRecord {
                image_id: format!("{tag}{c}_{i}"),
                class_id: c,
                domain,
                extractor,
                vector: (0..dim).map(|_| rng.gen_range(0.0f32..2.0) + c as f32).collect(),
            });
        }
    }
    EmbeddingSet {
        dataset_tag: tag.into(),
        domain,
        extractor,
        dim,
        num_classes: classes,
        records,
    }
}

pub fn simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// One step of the reference loop: arm trained, counter after the
/// improvement check, counts and rewards after the update.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStep {
    pub arm: usize,
    pub counter: u32,
    pub counts: Vec<u64>,
    pub rewards: Vec<f64>,
}

/// Reference implementation of the bandit training loop, written
/// directly from the pseudocode with scalar arithmetic.
pub fn hand_simulate(accs: &[f64], num_arms: usize, patience: u32, seed: u64, reset: bool) -> Vec<SimStep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = rng.gen_range(0..num_arms);
    let mut rewards = vec![0.0f64; num_arms];
    let mut counts = vec![0u64; num_arms];
    let mut total = 0u64;
    let mut best = 0.0f64;
    let mut counter = 0u32;
    let mut out = vec![];
    for &acc in accs {
        let arm = current;
        rewards[arm] += acc;
        counts[arm] += 1;
        total += 1;
        if acc > best {
            best = acc;
            counter = 0;
        } else {
            counter += 1;
        }
        if counter > patience {
            current = if (total as usize) < num_arms {
                total as usize
            } else {
                let mut best_arm = 0;
                let mut best_ucb = f64::NEG_INFINITY;
                for i in 0..num_arms {
                    let n = counts[i] as f64 + 1e-5;
                    let u = rewards[i] / n + 2.0 * ((total as f64).ln() / n).sqrt();
                    if u > best_ucb {
                        best_ucb = u;
                        best_arm = i;
                    }
                }
                best_arm
            };
            if reset {
                counter = 0;
            }
        }
        out.push(SimStep {
            arm,
            counter,
            counts: counts.clone(),
            rewards: rewards.clone(),
        });
    }
    out
}

/// Stationary Bernoulli rewards: accuracy 1 with the arm's probability.
pub struct BernoulliLearner {
    pub probs: Vec<f64>,
    pub rng: ChaCha8Rng,
    pub last: usize,
}

impl BernoulliLearner {
    pub fn new(probs: Vec<f64>, seed: u64) -> Self {
        Self {
            probs,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: 0,
        }
    }
}

impl Learner for BernoulliLearner {
    fn fine_tune_epoch(&mut self, arm_index: usize, _arm: &ArmSpec) -> Result<()> {
        self.last = arm_index;
        Ok(())
    }

    fn validate(&mut self) -> Result<f64> {
        Ok(if self.rng.gen_bool(self.probs[self.last]) { 1.0 } else { 0.0 })
    }
}

pub fn arms(n: usize) -> Vec<ArmSpec> {
    (0..n)
        .map(|i| ArmSpec::new(format!("arm{i}"), vec![format!("img{i}")]).unwrap())
        .collect()
}

/// A scripted 30-epoch accuracy sequence with improvements, plateaus and
/// regressions.
pub const SCRIPT_30: [f64; 30] = [
    0.40, 0.45, 0.45, 0.44, 0.43, 0.50, 0.52, 0.52, 0.51, 0.50, //
    0.49, 0.55, 0.54, 0.53, 0.56, 0.56, 0.56, 0.56, 0.57, 0.50, //
    0.50, 0.50, 0.50, 0.60, 0.59, 0.58, 0.61, 0.61, 0.60, 0.59,
];

/// Brute-force normalized trapezoid over the proportion axis.
pub fn trapezoid(props: &[f64], accs: &[f64]) -> f64 {
    let mut area = 0.0;
    for i in 1..props.len() {
        area += (props[i] - props[i - 1]) * (accs[i] + accs[i - 1]) / 2.0;
    }
    area / (props[props.len() - 1] - props[0])
}
