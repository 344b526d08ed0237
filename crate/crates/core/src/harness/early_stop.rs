//! Early stopping on validation history: stop once at least 60% of the five headline
//! measures fail to improve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// What the latest evaluation is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReference {
    /// The immediately preceding evaluation.
    #[default]
    Previous,
    /// The best value of each measure over all earlier evaluations.
    BestSoFar,
}

impl std::str::FromStr for StopReference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "previous" => Ok(Self::Previous),
            "best_so_far" | "best" => Ok(Self::BestSoFar),
            other => Err(Error::UnknownStrategy { kind: "stop reference", name: other.into() }),
        }
    }
}

pub const STOP_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalHistory {
    entries: Vec<(usize, MetricReport)>,
}

impl EvalHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, epoch: usize, report: MetricReport) -> Result<()> {
        if let Some((last, _)) = self.entries.last() {
            if epoch <= *last {
                return Err(Error::Config(format!("evaluation epochs must increase: {epoch} after {last}")));
            }
        }
        self.entries.push((epoch, report));
        Ok(())
    }

    pub fn entries(&self) -> &[(usize, MetricReport)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Epoch with the highest S-measure; the earliest wins ties.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (e, r) in &self.entries {
            if best.is_none_or(|(_, s)| r.s_measure > s) {
                best = Some((*e, r.s_measure));
            }
        }
        best.map(|(e, _)| e)
    }
}

/// Number of headline measures in `latest` that do not strictly improve on `reference`.
pub fn failures(latest: &MetricReport, reference: &[f64; 5]) -> usize {
    latest
        .scalars()
        .iter()
        .zip(reference)
        .zip(MetricReport::LOWER_IS_BETTER)
        .filter(|((v, r), lower)| if *lower { *v >= *r } else { *v <= *r })
        .count()
}

pub fn should_stop(history: &EvalHistory, reference: StopReference) -> Result<bool> {
    let n = history.len();
    if n < 2 {
        return Err(Error::InsufficientHistory(n));
    }
    let (_, latest) = &history.entries[n - 1];
    let earlier = &history.entries[..n - 1];
    let target = match reference {
        StopReference::Previous => earlier[n - 2].1.scalars(),
        StopReference::BestSoFar => {
            let mut best = earlier[0].1.scalars();
            for (_, r) in &earlier[1..] {
                for (k, (b, v)) in best.iter_mut().zip(r.scalars()).enumerate() {
                    *b = if MetricReport::LOWER_IS_BETTER[k] { b.min(v) } else { b.max(v) };
                }
            }
            best
        }
    };
    let failed = failures(latest, &target);
    Ok(failed as f64 >= STOP_FRACTION * 5.0 - 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(rows: &[(usize, [f64; 5])]) -> EvalHistory {
        let mut h = EvalHistory::new();
        for (e, s) in rows {
            h.push(*e, MetricReport::from_scalars(*s)).unwrap();
        }
        h
    }

    #[test]
    fn all_improving_continues() {
        let h = hist(&[(1, [0.5, 0.4, 0.1, 0.5, 0.6]), (4, [0.6, 0.5, 0.05, 0.6, 0.7])]);
        assert!(!should_stop(&h, StopReference::Previous).unwrap());
    }

    #[test]
    fn two_of_five_improving_stops() {
        let h = hist(&[(1, [0.5, 0.4, 0.1, 0.5, 0.6]), (4, [0.6, 0.3, 0.2, 0.4, 0.7])]);
        assert!(should_stop(&h, StopReference::Previous).unwrap());
    }

    #[test]
    fn needs_two_entries_and_increasing_epochs() {
        let h = hist(&[(1, [0.5; 5])]);
        assert!(matches!(should_stop(&h, StopReference::Previous), Err(Error::InsufficientHistory(1))));
        let mut h = hist(&[(4, [0.5; 5])]);
        assert!(h.push(4, MetricReport::from_scalars([0.5; 5])).is_err());
    }

    #[test]
    fn best_so_far_reference_differs_from_previous() {
        // dip at epoch 4 then partial recovery: adjacent comparison improves, best-so-far does not
        let h = hist(&[(1, [0.8, 0.7, 0.05, 0.8, 0.9]), (4, [0.6, 0.5, 0.2, 0.6, 0.7]), (7, [0.7, 0.6, 0.1, 0.7, 0.8])]);
        assert!(!should_stop(&h, StopReference::Previous).unwrap());
        assert!(should_stop(&h, StopReference::BestSoFar).unwrap());
        assert_eq!(h.best_epoch(), Some(1));
    }
}
