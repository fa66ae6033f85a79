//! Controlled variants of a sample: history length and evidence position.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{BenchSample, Session};
use super::BenchError;

/// Every session of `samples`, first occurrence of each id, in order.
pub fn session_pool(samples: &[BenchSample]) -> Vec<Session> {
    let mut seen = HashSet::new();
    samples
        .iter()
        .flat_map(|s| s.sessions.iter())
        .filter(|s| seen.insert(s.session_id.clone()))
        .cloned()
        .collect()
}

/// Shrink or grow the history to `ceil(factor * N)` sessions. Shrinking
/// keeps a seeded random subset of the non-evidence sessions plus every
/// evidence session, in original order. Growing appends seeded draws from
/// `pool` (without replacement, skipping ids already present).
pub fn build_scale_variant(
    sample: &BenchSample,
    factor: f64,
    pool: &[Session],
    seed: u64,
) -> Result<BenchSample, BenchError> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(BenchError::Variant(format!("scale factor {factor} must be positive")));
    }
    let n = sample.sessions.len();
    let target = (factor * n as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sample.clone();
    if target < n {
        let is_evidence = |s: &Session| sample.evidence_session_ids.contains(&s.session_id);
        let ev_count = sample.sessions.iter().filter(|s| is_evidence(s)).count();
        let mut others: Vec<usize> = (0..n).filter(|&i| !is_evidence(&sample.sessions[i])).collect();
        others.shuffle(&mut rng);
        let keep: HashSet<usize> = others.into_iter().take(target.saturating_sub(ev_count)).collect();
        out.sessions = sample
            .sessions
            .iter()
            .enumerate()
            .filter(|(i, s)| is_evidence(s) || keep.contains(i))
            .map(|(_, s)| s.clone())
            .collect();
    } else if target > n {
        let present: HashSet<&str> = sample.session_ids().into_iter().collect();
        let candidates: Vec<&Session> = pool.iter().filter(|s| !present.contains(s.session_id.as_str())).collect();
        let need = target - n;
        if candidates.len() < need {
            return Err(BenchError::Variant(format!(
                "session pool exhausted: need {need} extra sessions, {} available",
                candidates.len()
            )));
        }
        out.sessions.extend(candidates.choose_multiple(&mut rng, need).map(|s| (*s).clone()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Early,
    Middle,
    Late,
}

impl std::str::FromStr for Position {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "early" => Ok(Self::Early),
            "middle" => Ok(Self::Middle),
            "late" => Ok(Self::Late),
            other => Err(format!("unknown position `{other}` (early, middle, late)")),
        }
    }
}

impl Position {
    pub const ALL: [Position; 3] = [Position::Early, Position::Middle, Position::Late];

    /// Middle index of the target third of `n` sessions.
    pub fn index(self, n: usize) -> usize {
        match self {
            Position::Early => n / 6,
            Position::Middle => n / 2,
            Position::Late => 5 * n / 6,
        }
    }
}

/// Move the single evidence session to the middle of the chosen third.
/// Other sessions keep their relative order; no timestamp changes.
pub fn build_position_variant(sample: &BenchSample, position: Position) -> Result<BenchSample, BenchError> {
    if sample.evidence_session_ids.len() != 1 {
        return Err(BenchError::Variant(format!(
            "position variants need exactly one evidence session, `{}` has {}",
            sample.sample_id,
            sample.evidence_session_ids.len()
        )));
    }
    let n = sample.sessions.len();
    if n < 3 {
        return Err(BenchError::Variant(format!("position variants need at least 3 sessions, found {n}")));
    }
    let ev = sample.evidence_session_ids.iter().next().expect("one id");
    let mut out = sample.clone();
    let at = out.sessions.iter().position(|s| &s.session_id == ev).expect("validated evidence");
    let session = out.sessions.remove(at);
    out.sessions.insert(position.index(n), session);
    Ok(out)
}
