//! Resubmit training with a tighter internal latency target until the
//! winner meets the deployment budget.

use serde::{Deserialize, Serialize};

use crate::mlengine::{train_with_probe, CandidateConfig, LatencyProbe, MlError, TrainOutput, TrainRequest, WallClockProbe};

/// Each retry multiplies the internal latency target by this factor.
pub const TIGHTEN_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: usize,
    /// Target handed to candidate filtering.
    pub internal_budget_ms: f64,
    pub candidates: usize,
    pub winner: Option<String>,
    /// Re-measured p99 of the winner, checked against the deployment budget.
    pub verified_latency_us: Option<f64>,
    pub outcome: String,
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub output: TrainOutput,
    pub attempts: Vec<AttemptRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum RetrainError {
    #[error("max_attempts must be >= 1")]
    NoAttempts,
    #[error("no candidate met the {budget_ms} ms budget after {} attempt(s)", .history.len())]
    Exhausted { budget_ms: f64, history: Vec<AttemptRecord> },
    #[error(transparent)]
    Ml(#[from] MlError),
}

/// [`retrain_with_probes`] with wall-clock measurement for both selection
/// and verification.
pub fn retrain_until_budget(req: &TrainRequest, max_attempts: usize) -> Result<RetrainOutcome, RetrainError> {
    retrain_with_probes(req, max_attempts, &WallClockProbe, &WallClockProbe)
}

fn drop_capacity_at_least(grid: &mut Vec<CandidateConfig>, cap: usize) {
    grid.retain(|c| c.capacity() < cap);
}

/// Train, then re-measure the winner with `verify`. On a budget-infeasible
/// attempt the largest-capacity candidates are dropped; on a verification
/// overflow the winner and everything at least as large are dropped. Either
/// way the internal target is halved before the next attempt, while the
/// deployment budget (`req.latency_budget_ms`) never changes.
pub fn retrain_with_probes(
    req: &TrainRequest,
    max_attempts: usize,
    engine: &dyn LatencyProbe,
    verify: &dyn LatencyProbe,
) -> Result<RetrainOutcome, RetrainError> {
    if max_attempts == 0 {
        return Err(RetrainError::NoAttempts);
    }
    let budget_ms = req.latency_budget_ms;
    let mut grid = req.candidates();
    let mut target = budget_ms;
    let mut history = Vec::new();
    for attempt in 1..=max_attempts {
        let mut record = AttemptRecord {
            attempt,
            internal_budget_ms: target,
            candidates: grid.len(),
            winner: None,
            verified_latency_us: None,
            outcome: String::new(),
        };
        if grid.is_empty() {
            record.outcome = "no candidates left".into();
            history.push(record);
            break;
        }
        let sub = TrainRequest {
            dataset: req.dataset,
            task: req.task,
            latency_budget_ms: target,
            seed: req.seed,
            candidate_set: req.candidate_set.clone(),
            grid: grid.clone(),
            latency_samples: req.latency_samples,
            parallel: req.parallel,
        };
        match train_with_probe(&sub, engine) {
            Ok(output) => {
                let winner = &output.candidates[output.winner];
                record.winner = Some(winner.label.clone());
                let latency = verify.p99_us(&output.artifact, req.latency_samples)?;
                record.verified_latency_us = Some(latency);
                if latency <= budget_ms * 1_000.0 {
                    record.outcome = "accepted".into();
                    history.push(record);
                    return Ok(RetrainOutcome { output, attempts: history });
                }
                record.outcome = format!("verified p99 {latency:.1} us exceeds the {budget_ms} ms budget");
                let cap = winner.hyperparams.capacity();
                drop_capacity_at_least(&mut grid, cap);
            }
            Err(MlError::BudgetInfeasible { .. }) => {
                record.outcome = format!("no candidate under {target} ms");
                let cap = grid.iter().map(CandidateConfig::capacity).max().unwrap_or(0);
                drop_capacity_at_least(&mut grid, cap);
            }
            Err(e) => return Err(e.into()),
        }
        history.push(record);
        target *= TIGHTEN_FACTOR;
    }
    Err(RetrainError::Exhausted { budget_ms, history })
}
