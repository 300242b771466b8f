//! UCB arm selection over metric-ranked data subsets.
//!
//! Each arm is one top-M subset. Every epoch the arm in use is credited
//! with the validation accuracy it produced. When accuracy has failed to
//! improve for more than `patience` epochs, a new arm is chosen by
//! [`BanditState::select_loader`]:
//!
//! ```text
//! ucb_i = rewards_i / (counts_i + eps) + beta * sqrt(ln(total) / (counts_i + eps))
//! ```
//!
//! with each arm tried once (in index order) while `total < num_arms`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EPSILON: f64 = 1e-5;
pub const BETA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub num_arms: usize,
    /// Cumulative validation accuracy per arm.
    pub loader_rewards: Vec<f64>,
    /// Epochs trained on each arm.
    pub loader_counts: Vec<u64>,
    pub total_counts: u64,
    pub epsilon: f64,
    pub beta: f64,
    pub patience: u32,
    pub num_epochs_without_improvement: u32,
    pub best_val_accuracy: f64,
    pub current_arm: usize,
    /// Reset the no-improvement counter after a switch. Off reproduces the
    /// literal loop, which keeps re-selecting every epoch once patience
    /// has run out until accuracy improves again.
    pub reset_on_switch: bool,
}

/// Zeroed state with a uniformly drawn starting arm.
pub fn init_bandit(num_arms: usize, patience: u32, seed: u64) -> Result<BanditState> {
    if num_arms == 0 {
        return Err(Error::Validation("bandit needs at least one arm".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(BanditState {
        num_arms,
        loader_rewards: vec![0.0; num_arms],
        loader_counts: vec![0; num_arms],
        total_counts: 0,
        epsilon: EPSILON,
        beta: BETA,
        patience,
        num_epochs_without_improvement: 0,
        best_val_accuracy: 0.0,
        current_arm: rng.gen_range(0..num_arms),
        reset_on_switch: true,
    })
}

impl BanditState {
    /// UCB value per arm, or `None` while arms are still being tried once.
    pub fn ucb_values(&self) -> Option<Vec<f64>> {
        if self.total_counts < self.num_arms as u64 {
            return None;
        }
        let log_total = (self.total_counts as f64).ln();
        Some(
            self.loader_rewards
                .iter()
                .zip(&self.loader_counts)
                .map(|(&r, &c)| {
                    let n = c as f64 + self.epsilon;
                    r / n + self.beta * (log_total / n).sqrt()
                })
                .collect(),
        )
    }

    pub fn select_loader(&self) -> usize {
        match self.ucb_values() {
            None => self.total_counts as usize,
            Some(ucb) => argmax(&ucb),
        }
    }

    pub fn update_rewards(&mut self, arm: usize, val_accuracy: f64) -> Result<()> {
        if arm >= self.num_arms {
            return Err(Error::Validation(format!(
                "arm {arm} out of range for {} arms",
                self.num_arms
            )));
        }
        if !(0.0..=1.0).contains(&val_accuracy) {
            return Err(Error::Validation(format!(
                "validation accuracy {val_accuracy} outside [0, 1]"
            )));
        }
        self.loader_rewards[arm] += val_accuracy;
        self.loader_counts[arm] += 1;
        self.total_counts += 1;
        Ok(())
    }

    /// Improvement check and patience-gated arm selection. Returns whether
    /// `select_loader` was invoked this epoch.
    pub fn observe_epoch(&mut self, val_accuracy: f64) -> bool {
        if val_accuracy > self.best_val_accuracy {
            self.best_val_accuracy = val_accuracy;
            self.num_epochs_without_improvement = 0;
        } else {
            self.num_epochs_without_improvement += 1;
        }
        if self.num_epochs_without_improvement > self.patience {
            self.current_arm = self.select_loader();
            if self.reset_on_switch {
                self.num_epochs_without_improvement = 0;
            }
            return true;
        }
        false
    }

    /// Credits `current_arm` with `val_accuracy`, then runs the improvement
    /// check. Returns the arm that was credited and whether a switch ran.
    pub fn record_epoch(&mut self, val_accuracy: f64) -> Result<(usize, bool)> {
        let arm = self.current_arm;
        self.update_rewards(arm, val_accuracy)?;
        Ok((arm, self.observe_epoch(val_accuracy)))
    }

    pub fn check_invariants(&self) -> Result<()> {
        let sum: u64 = self.loader_counts.iter().sum();
        if sum != self.total_counts {
            return Err(Error::Validation(format!(
                "counts sum to {sum}, total_counts is {}",
                self.total_counts
            )));
        }
        if self.current_arm >= self.num_arms {
            return Err(Error::Validation("current arm out of range".into()));
        }
        for (i, (&r, &c)) in self.loader_rewards.iter().zip(&self.loader_counts).enumerate() {
            if r > c as f64 + 1e-9 {
                return Err(Error::Validation(format!(
                    "arm {i} reward {r} exceeds count {c}"
                )));
            }
        }
        Ok(())
    }
}

/// First index of the maximum.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn round_robin_then_ucb() {
        let mut s = init_bandit(2, 1, 7).unwrap();
        assert_eq!(s.select_loader(), 0);
        s.update_rewards(0, 0.5).unwrap();
        assert_eq!(s.select_loader(), 1);
        assert!(s.ucb_values().is_none());
    }

    #[test]
    fn ucb_worked_example() {
        let mut s = init_bandit(2, 1, 0).unwrap();
        s.loader_counts = vec![2, 1];
        s.loader_rewards = vec![1.4, 0.9];
        s.total_counts = 3;
        let ucb = s.ucb_values().unwrap();
        assert_abs_diff_eq!(ucb[0], 2.1822, epsilon = 1e-4);
        assert_abs_diff_eq!(ucb[1], 2.9963, epsilon = 1e-4);
        assert_eq!(s.select_loader(), 1);
    }

    #[test]
    fn ties_go_low() {
        let mut s = init_bandit(3, 1, 0).unwrap();
        s.loader_counts = vec![2, 2, 2];
        s.loader_rewards = vec![1.0, 1.0, 1.0];
        s.total_counts = 6;
        assert_eq!(s.select_loader(), 0);
    }

    #[test]
    fn rewards_accumulate() {
        let mut s = init_bandit(2, 1, 0).unwrap();
        s.update_rewards(0, 0.7).unwrap();
        assert_eq!(s.loader_rewards, vec![0.7, 0.0]);
        assert_eq!(s.loader_counts, vec![1, 0]);
        assert_eq!(s.total_counts, 1);
        s.update_rewards(1, 0.5).unwrap();
        s.update_rewards(1, 0.3).unwrap();
        assert_abs_diff_eq!(s.loader_rewards[1], 0.8);
        assert_eq!(s.loader_counts[1], 2);
        assert!(s.update_rewards(0, 1.2).is_err());
        assert!(s.update_rewards(2, 0.2).is_err());
    }

    #[test]
    fn improvement_resets_counter() {
        let mut s = init_bandit(2, 2, 0).unwrap();
        s.best_val_accuracy = 0.6;
        s.num_epochs_without_improvement = 2;
        assert!(!s.observe_epoch(0.7));
        assert_eq!(s.best_val_accuracy, 0.7);
        assert_eq!(s.num_epochs_without_improvement, 0);
    }

    #[test]
    fn switch_after_patience_exceeded() {
        let mut s = init_bandit(2, 2, 0).unwrap();
        s.best_val_accuracy = 0.9;
        assert!(!s.observe_epoch(0.5));
        assert!(!s.observe_epoch(0.5));
        assert!(s.observe_epoch(0.5));
        assert_eq!(s.num_epochs_without_improvement, 0);

        s.reset_on_switch = false;
        assert!(!s.observe_epoch(0.5));
        assert!(!s.observe_epoch(0.5));
        assert!(s.observe_epoch(0.5));
        assert!(s.observe_epoch(0.5));
        assert_eq!(s.num_epochs_without_improvement, 4);
    }

    #[test]
    fn init_edge_cases() {
        assert!(init_bandit(0, 1, 0).is_err());
        for seed in 0..20 {
            assert_eq!(init_bandit(1, 1, seed).unwrap().current_arm, 0);
            assert_eq!(
                init_bandit(5, 1, seed).unwrap(),
                init_bandit(5, 1, seed).unwrap()
            );
        }
    }

    #[test]
    fn state_round_trips_through_json() {
        let mut s = init_bandit(3, 2, 9).unwrap();
        s.record_epoch(0.4).unwrap();
        let back: BanditState = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
