use serde::{Deserialize, Serialize};

use crate::error::{CiteError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Adam,
    Sgd,
    Stopped,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Adam => "adam",
            Phase::Sgd => "sgd",
            Phase::Stopped => "stopped",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Continue,
    /// Restore the best checkpoint and continue with SGD at a reduced rate.
    SwitchToSgd,
    Stop,
}

/// Early-stopping state: Adam until `patience` epochs pass without a strict
/// improvement, then SGD under the same rule, then stop.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleState {
    pub phase: Phase,
    pub best_val: f64,
    pub epochs_since_improve: usize,
    pub patience: usize,
    /// 1-based epoch of the best checkpoint.
    pub best_epoch: Option<usize>,
    pub epochs_seen: usize,
    /// Whether the most recent tick set a new best.
    pub improved: bool,
}

impl ScheduleState {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(CiteError::Validation("patience must be ≥ 1".into()));
        }
        Ok(Self {
            phase: Phase::Adam,
            best_val: f64::NEG_INFINITY,
            epochs_since_improve: 0,
            patience,
            best_epoch: None,
            epochs_seen: 0,
            improved: false,
        })
    }
}

pub fn schedule_tick(state: &mut ScheduleState, val_metric: f64) -> Result<Action> {
    if state.phase == Phase::Stopped {
        return Err(CiteError::State("schedule already stopped".into()));
    }
    state.epochs_seen += 1;
    state.improved = val_metric > state.best_val;
    if state.improved {
        state.best_val = val_metric;
        state.best_epoch = Some(state.epochs_seen);
        state.epochs_since_improve = 0;
        return Ok(Action::Continue);
    }
    state.epochs_since_improve += 1;
    if state.epochs_since_improve < state.patience {
        return Ok(Action::Continue);
    }
    state.epochs_since_improve = 0;
    Ok(match state.phase {
        Phase::Adam => {
            state.phase = Phase::Sgd;
            Action::SwitchToSgd
        }
        _ => {
            state.phase = Phase::Stopped;
            Action::Stop
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(metrics: &[f64]) -> Vec<Action> {
        let mut s = ScheduleState::new(5).unwrap();
        metrics.iter().map(|&m| schedule_tick(&mut s, m).unwrap()).collect()
    }

    #[test]
    fn rising_metrics_continue() {
        let acts = run(&(0..30).map(|i| 10.0 + i as f64).collect::<Vec<_>>());
        assert!(acts.iter().all(|a| *a == Action::Continue));
    }

    #[test]
    fn switch_on_sixth_call_then_stop() {
        let acts = run(&[10.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0]);
        assert_eq!(acts[5], Action::SwitchToSgd);
        assert!(acts[..5].iter().all(|a| *a == Action::Continue));
        assert!(acts[6..10].iter().all(|a| *a == Action::Continue));
        assert_eq!(acts[10], Action::Stop);
    }

    #[test]
    fn ties_do_not_improve() {
        let acts = run(&[5.0; 6]);
        assert_eq!(acts[5], Action::SwitchToSgd);
    }

    #[test]
    fn tick_after_stop_is_error() {
        let mut s = ScheduleState::new(1).unwrap();
        schedule_tick(&mut s, 1.0).unwrap();
        assert_eq!(schedule_tick(&mut s, 0.0).unwrap(), Action::SwitchToSgd);
        assert_eq!(schedule_tick(&mut s, 0.0).unwrap(), Action::Stop);
        assert!(matches!(schedule_tick(&mut s, 2.0), Err(CiteError::State(_))));
        assert!(ScheduleState::new(0).is_err());
    }
}
