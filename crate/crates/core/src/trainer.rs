//! Training loop over a pluggable learner, plus the AUC-over-proportions report.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::bandit::{init_bandit, BanditState};
use crate::error::{Error, Result};
use crate::store::{EpochRecord, RunLog};

/// One candidate training subset: the ordered top-M ids under one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub image_ids: Vec<String>,
}

impl ArmSpec {
    pub fn new(name: impl Into<String>, image_ids: Vec<String>) -> Result<Self> {
        let name = name.into();
        if image_ids.is_empty() {
            return Err(Error::Validation(format!("arm {name} has no images")));
        }
        Ok(Self { name, image_ids })
    }
}

/// What the training loop needs from a model.
pub trait Learner {
    /// Trains for one epoch on `arm`'s subset.
    fn fine_tune_epoch(&mut self, arm_index: usize, arm: &ArmSpec) -> Result<()>;

    /// Validation accuracy in [0, 1] after the epochs seen so far.
    fn validate(&mut self) -> Result<f64>;
}

impl<L: Learner + ?Sized> Learner for &mut L {
    fn fine_tune_epoch(&mut self, arm_index: usize, arm: &ArmSpec) -> Result<()> {
        (**self).fine_tune_epoch(arm_index, arm)
    }

    fn validate(&mut self) -> Result<f64> {
        (**self).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateParams {
    /// Per-arm data quality, by arm index.
    pub qualities: Vec<f64>,
    pub base: f64,
    pub cap: f64,
    pub rate: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            qualities: vec![],
            base: 0.1,
            cap: 0.9,
            rate: 0.03,
            noise: 0.01,
            seed: 0,
        }
    }
}

/// Deterministic accuracy-response model.
///
/// Each epoch on arm `a` adds `q_a` to the accumulated training mass `m`;
/// validation then reports
///
/// ```text
/// b + (c - b) * (1 - exp(-rate * m)) + noise * u(seed, step)
/// ```
///
/// with `u` in [-1, 1], floored at `b` and clipped to 1.
#[derive(Debug, Clone)]
pub struct SurrogateLearner {
    params: SurrogateParams,
    mass: f64,
    step: u64,
}

impl SurrogateLearner {
    pub fn new(params: SurrogateParams) -> Result<Self> {
        if params.qualities.is_empty() {
            return Err(Error::Validation("surrogate needs per-arm qualities".into()));
        }
        if params.qualities.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::Validation("arm qualities must lie in [0, 1]".into()));
        }
        if !(0.0 <= params.base && params.base <= params.cap && params.cap <= 1.0) {
            return Err(Error::Validation("need 0 <= base <= cap <= 1".into()));
        }
        if params.rate < 0.0 || params.noise < 0.0 {
            return Err(Error::Validation("rate and noise must be nonnegative".into()));
        }
        Ok(Self {
            params,
            mass: 0.0,
            step: 0,
        })
    }

    pub fn params(&self) -> &SurrogateParams {
        &self.params
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// One fine-tune plus validate on `arm`.
    pub fn surrogate_step(&mut self, arm: usize) -> Result<f64> {
        self.add_mass(arm)?;
        Ok(self.accuracy())
    }

    fn add_mass(&mut self, arm: usize) -> Result<()> {
        let q = self.params.qualities.get(arm).ok_or_else(|| {
            Error::Learner(format!("surrogate has no quality for arm {arm}"))
        })?;
        self.mass += q;
        Ok(())
    }

    fn accuracy(&mut self) -> f64 {
        let p = &self.params;
        let clean = p.base + (p.cap - p.base) * (1.0 - (-p.rate * self.mass).exp());
        let acc = clean + p.noise * unit_noise(p.seed, self.step);
        self.step += 1;
        acc.max(p.base).min(1.0)
    }
}

impl Learner for SurrogateLearner {
    fn fine_tune_epoch(&mut self, arm_index: usize, _arm: &ArmSpec) -> Result<()> {
        self.add_mass(arm_index)
    }

    fn validate(&mut self) -> Result<f64> {
        Ok(self.accuracy())
    }
}

/// Deterministic value in [-1, 1] for `(seed, step)` (splitmix64 finalizer).
pub fn unit_noise(seed: u64, step: u64) -> f64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(step)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    2.0 * ((z >> 11) as f64 / (1u64 << 53) as f64) - 1.0
}

/// Replays a fixed accuracy sequence, ignoring which arm is trained.
#[derive(Debug, Clone)]
pub struct ScriptedLearner {
    accuracies: Vec<f64>,
    next: usize,
    pub trained: Vec<usize>,
}

impl ScriptedLearner {
    pub fn new(accuracies: Vec<f64>) -> Self {
        Self {
            accuracies,
            next: 0,
            trained: vec![],
        }
    }
}

impl Learner for ScriptedLearner {
    fn fine_tune_epoch(&mut self, arm_index: usize, _arm: &ArmSpec) -> Result<()> {
        self.trained.push(arm_index);
        Ok(())
    }

    fn validate(&mut self) -> Result<f64> {
        let acc = self
            .accuracies
            .get(self.next)
            .copied()
            .ok_or_else(|| Error::Learner("scripted accuracies exhausted".into()))?;
        self.next += 1;
        Ok(acc)
    }
}

#[derive(Serialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
enum Request<'a> {
    FineTune { ids: &'a [String] },
    Validate,
}

#[derive(Deserialize)]
struct Response {
    #[serde(default)]
    accuracy: Option<f64>,
    #[serde(default)]
    error: Option<String>,
}

/// Learner living in a child process that speaks line-delimited JSON on
/// stdin/stdout. Every request gets exactly one response line:
///
/// ```text
/// > {"cmd":"fine_tune","ids":["a","b"]}
/// < {"ok":true}
/// > {"cmd":"validate"}
/// < {"accuracy":0.81}
/// ```
///
/// A response carrying an `"error"` string fails the run.
pub struct ChildProcessLearner {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl ChildProcessLearner {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Learner(format!("cannot spawn {program}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(Self {
            child,
            stdin,
            stdout,
        })
    }

    fn call(&mut self, request: &Request<'_>) -> Result<Response> {
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Learner("learner stdin closed".into()))?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::Learner(format!("write to learner failed: {e}")))?;
        let mut reply = String::new();
        let n = self
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::Learner(format!("read from learner failed: {e}")))?;
        if n == 0 {
            return Err(Error::Learner("learner exited without replying".into()));
        }
        let resp: Response = serde_json::from_str(reply.trim())
            .map_err(|e| Error::Learner(format!("bad learner reply {:?}: {e}", reply.trim())))?;
        if let Some(err) = resp.error {
            return Err(Error::Learner(err));
        }
        Ok(resp)
    }
}

impl Learner for ChildProcessLearner {
    fn fine_tune_epoch(&mut self, _arm_index: usize, arm: &ArmSpec) -> Result<()> {
        self.call(&Request::FineTune {
            ids: &arm.image_ids,
        })
        .map(drop)
    }

    fn validate(&mut self) -> Result<f64> {
        self.call(&Request::Validate)?
            .accuracy
            .ok_or_else(|| Error::Learner("validate reply has no accuracy".into()))
    }
}

impl Drop for ChildProcessLearner {
    fn drop(&mut self) {
        // closing stdin is the shutdown signal
        self.stdin.take();
        let _ = self.child.wait();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub total_epochs: u64,
    pub patience: u32,
    pub seed: u64,
    pub reset_on_switch: bool,
    /// Let `select_loader` assign each epoch until every arm has been
    /// trained once, instead of starting from a random arm.
    pub round_robin_warmup: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            total_epochs: 100,
            patience: 3,
            seed: 0,
            reset_on_switch: true,
            round_robin_warmup: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmShare {
    pub name: String,
    pub pulls: u64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs: u64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub switches: u64,
    pub arms: Vec<ArmShare>,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub log: RunLog,
    pub state: BanditState,
    pub switches: u64,
}

impl TrainingRun {
    pub fn summary(&self, arms: &[ArmSpec]) -> RunSummary {
        let total = self.state.total_counts.max(1) as f64;
        RunSummary {
            epochs: self.state.total_counts,
            final_accuracy: self.log.records.last().map_or(0.0, |r| r.val_accuracy),
            best_accuracy: self.state.best_val_accuracy,
            switches: self.switches,
            arms: arms
                .iter()
                .zip(&self.state.loader_counts)
                .map(|(a, &c)| ArmShare {
                    name: a.name.clone(),
                    pulls: c,
                    share: c as f64 / total,
                })
                .collect(),
        }
    }

    pub fn arm_trace(&self) -> Vec<usize> {
        self.log.records.iter().map(|r| r.arm_index).collect()
    }
}

/// Runs the bandit training loop. `on_epoch` sees every record as soon as
/// it exists, so a sink that persists records keeps the partial log when
/// the learner fails.
pub fn run_training<L, F>(arms: &[ArmSpec], mut learner: L, config: &TrainingConfig, mut on_epoch: F) -> Result<TrainingRun>
where
    L: Learner,
    F: FnMut(&EpochRecord) -> Result<()>,
{
    if arms.is_empty() {
        return Err(Error::Validation("training needs at least one arm".into()));
    }
    if config.total_epochs == 0 {
        return Err(Error::Validation("total_epochs must be at least 1".into()));
    }
    let mut state = init_bandit(arms.len(), config.patience, config.seed)?;
    state.reset_on_switch = config.reset_on_switch;
    let mut log = RunLog::default();
    let mut switches = 0;
    for epoch in 0..config.total_epochs {
        if config.round_robin_warmup && state.total_counts < arms.len() as u64 {
            state.current_arm = state.select_loader();
        }
        let arm = state.current_arm;
        learner.fine_tune_epoch(arm, &arms[arm])?;
        let acc = learner.validate()?;
        if !acc.is_finite() || !(0.0..=1.0).contains(&acc) {
            return Err(Error::Learner(format!(
                "epoch {epoch}: accuracy {acc} outside [0, 1]"
            )));
        }
        state.update_rewards(arm, acc)?;
        let ucb_values = state.ucb_values();
        if state.observe_epoch(acc) {
            switches += 1;
        }
        let record = EpochRecord {
            epoch,
            arm_index: arm,
            val_accuracy: acc,
            ucb_values,
            counts: state.loader_counts.clone(),
            rewards: state.loader_rewards.clone(),
        };
        on_epoch(&record)?;
        log.push(record)?;
    }
    Ok(TrainingRun {
        log,
        state,
        switches,
    })
}

/// Dataset proportions, in percent, at which accuracy is reported.
pub const PROPORTIONS: [u32; 5] = [1, 20, 50, 90, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionReport {
    pub proportions: Vec<u32>,
    pub accuracies: Vec<f64>,
    /// Trapezoid integral over the proportion axis taken as fractions.
    pub raw_auc: f64,
    /// `raw_auc` divided by the axis span (0.99).
    pub normalized_auc: f64,
}

pub fn auc_report(accuracies: &BTreeMap<u32, f64>) -> Result<ProportionReport> {
    if let Some(extra) = accuracies.keys().find(|p| !PROPORTIONS.contains(p)) {
        return Err(Error::Validation(format!("unexpected proportion {extra}%")));
    }
    let mut ys = Vec::with_capacity(PROPORTIONS.len());
    for p in PROPORTIONS {
        let acc = *accuracies
            .get(&p)
            .ok_or_else(|| Error::Validation(format!("missing proportion {p}%")))?;
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::Validation(format!(
                "accuracy {acc} at {p}% outside [0, 1]"
            )));
        }
        ys.push(acc);
    }
    let xs: Vec<f64> = PROPORTIONS.iter().map(|&p| f64::from(p) / 100.0).collect();
    let raw: f64 = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum();
    let span = xs[xs.len() - 1] - xs[0];
    Ok(ProportionReport {
        proportions: PROPORTIONS.to_vec(),
        accuracies: ys,
        raw_auc: raw,
        normalized_auc: raw / span,
    })
}
