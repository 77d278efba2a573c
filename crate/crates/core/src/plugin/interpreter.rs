use thiserror::Error;

use super::script::{Bindings, SequenceScript};
use crate::wire::{Message, Session, WireError};

/// Step numbers are 1-based.
#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("step {step}: unexpected reply {got}: {reason}")]
    StepMismatch { step: usize, got: Message, reason: String },
    #[error("step {step}: no reply after {attempts} attempt(s)")]
    StepTimeout { step: usize, attempts: u32 },
    #[error("step {step}: placeholder ${{{name}}} has no value")]
    Unbound { step: usize, name: String },
    #[error("step {step}: {source}")]
    Wire { step: usize, source: WireError },
}

impl SequenceError {
    pub fn step(&self) -> usize {
        match self {
            SequenceError::StepMismatch { step, .. }
            | SequenceError::StepTimeout { step, .. }
            | SequenceError::Unbound { step, .. }
            | SequenceError::Wire { step, .. } => *step,
        }
    }

    pub fn is_mismatch(&self) -> bool {
        matches!(self, SequenceError::StepMismatch { .. })
    }
}

/// Executes `script` over `session`, one request per step.
///
/// Returns every placeholder value observed in replies (both new captures and
/// echoes of bound parameters) plus the step `capture` keys.
pub async fn run_sequence(
    session: &mut Session,
    script: &SequenceScript,
    params: &Bindings,
) -> Result<Bindings, SequenceError> {
    let mut captures = Bindings::new();
    for (idx, step) in script.steps.iter().enumerate() {
        let n = idx + 1;
        let msg = step
            .send
            .render(&[&captures, params])
            .map_err(|name| SequenceError::Unbound { step: n, name })?;

        let attempts = step.retries + 1;
        let mut reply = None;
        for _ in 0..attempts {
            match session.request(&msg, step.timeout).await {
                Ok(r) => {
                    reply = Some(r);
                    break;
                }
                Err(WireError::Timeout(_)) => continue,
                Err(source) => return Err(SequenceError::Wire { step: n, source }),
            }
        }
        let reply = reply.ok_or(SequenceError::StepTimeout { step: n, attempts })?;

        let mut known = params.clone();
        known.extend(captures.iter().map(|(k, v)| (k.clone(), v.clone())));
        let seen = step.expect.matches(&reply, &known).map_err(|m| SequenceError::StepMismatch {
            step: n,
            reason: m.to_string(),
            got: reply.clone(),
        })?;
        captures.extend(seen);
        for key in &step.capture {
            let value = reply.get(key).ok_or_else(|| SequenceError::StepMismatch {
                step: n,
                reason: format!("reply lacks captured key {key}"),
                got: reply.clone(),
            })?;
            captures.insert(key.clone(), value.to_string());
        }
    }
    Ok(captures)
}
