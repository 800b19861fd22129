use std::collections::BTreeMap;

use super::{MixtureError, MobilityModel};
use crate::timebase::{Grouped, ObservationRecord, DAYS};

/// Densities below this are clamped before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Anything that assigns a predictive density to a held-out record.
pub trait HeldoutDensity {
    fn density(&self, point: &ObservationRecord) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoglikSummary {
    pub mean: f64,
    /// 1.96 standard errors.
    pub half_width: f64,
    pub count: usize,
    pub clamped: usize,
}

pub fn heldout_loglik<D: HeldoutDensity + ?Sized>(
    model: &D,
    test: &[ObservationRecord],
) -> Result<LoglikSummary, MixtureError> {
    if test.is_empty() {
        return Err(MixtureError::EmptyTestSet);
    }
    let mut clamped = 0;
    let logs: Vec<f64> = test
        .iter()
        .map(|p| {
            let d = model.density(p);
            if d.is_nan() || d < DENSITY_FLOOR {
                clamped += 1;
                DENSITY_FLOOR.ln()
            } else {
                d.ln()
            }
        })
        .collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let half_width = if logs.len() > 1 {
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        0.0
    };
    Ok(LoglikSummary {
        mean,
        half_width,
        count: logs.len(),
        clamped,
    })
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Uniform tower and day with a broad normal over the hour of day.
#[derive(Debug, Clone, Copy)]
pub struct RandomBaseline {
    pub tower_count: u32,
}

impl RandomBaseline {
    pub const HOUR_MEAN: f64 = 12.0;
    pub const HOUR_SD: f64 = 6.0;

    pub fn temporal_density(hour: f64) -> f64 {
        normal_pdf(hour, Self::HOUR_MEAN, Self::HOUR_SD) / DAYS as f64
    }
}

impl HeldoutDensity for RandomBaseline {
    fn density(&self, point: &ObservationRecord) -> f64 {
        Self::temporal_density(point.week_point().hour) / f64::from(self.tower_count)
    }
}

#[derive(Debug, Clone, Default)]
struct TransitionCounts {
    /// Training towers in time order with their timestamps.
    sequence: Vec<ObservationRecord>,
    transitions: BTreeMap<(u32, u32), u32>,
    outgoing: BTreeMap<u32, u32>,
    visits: BTreeMap<u32, u32>,
}

/// Per-participant first-order Markov chain over towers with add-one
/// smoothing. Time of day is scored as in [`RandomBaseline`].
#[derive(Debug, Clone)]
pub struct MarkovBaseline {
    tower_count: u32,
    participants: BTreeMap<String, TransitionCounts>,
}

impl MarkovBaseline {
    pub fn fit(train: &Grouped, tower_count: u32) -> Self {
        let participants = train
            .iter()
            .map(|(id, records)| {
                let mut counts = TransitionCounts {
                    sequence: records.clone(),
                    ..Default::default()
                };
                counts.sequence.sort_by_key(|r| r.timestamp);
                for pair in counts.sequence.windows(2) {
                    *counts
                        .transitions
                        .entry((pair[0].tower, pair[1].tower))
                        .or_insert(0) += 1;
                    *counts.outgoing.entry(pair[0].tower).or_insert(0) += 1;
                }
                for r in &counts.sequence {
                    *counts.visits.entry(r.tower).or_insert(0) += 1;
                }
                (id.clone(), counts)
            })
            .collect();
        Self {
            tower_count,
            participants,
        }
    }

    /// Smoothed probability of the point's tower given the latest training
    /// observation strictly before it, or the smoothed marginal when none exists.
    pub fn tower_probability(&self, point: &ObservationRecord) -> f64 {
        let towers = f64::from(self.tower_count);
        let Some(counts) = self.participants.get(&point.participant) else {
            return 1.0 / towers;
        };
        let before = counts
            .sequence
            .partition_point(|r| r.timestamp < point.timestamp);
        match before.checked_sub(1).map(|i| counts.sequence[i].tower) {
            Some(prev) => {
                let c = counts
                    .transitions
                    .get(&(prev, point.tower))
                    .copied()
                    .unwrap_or(0);
                let out = counts.outgoing.get(&prev).copied().unwrap_or(0);
                (f64::from(c) + 1.0) / (f64::from(out) + towers)
            }
            None => {
                let c = counts.visits.get(&point.tower).copied().unwrap_or(0);
                (f64::from(c) + 1.0) / (counts.sequence.len() as f64 + towers)
            }
        }
    }
}

impl HeldoutDensity for MarkovBaseline {
    fn density(&self, point: &ObservationRecord) -> f64 {
        self.tower_probability(point) * RandomBaseline::temporal_density(point.week_point().hour)
    }
}

impl HeldoutDensity for BTreeMap<String, MobilityModel> {
    fn density(&self, point: &ObservationRecord) -> f64 {
        self.get(&point.participant).map_or(0.0, |m| {
            let wp = point.week_point();
            m.density(point.tower, wp.day, wp.hour)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentSummary {
    pub participants: usize,
    pub mean: f64,
    pub mode: usize,
    pub std: f64,
}

/// Summary of per-participant posterior-mean cluster counts. The mode is
/// taken over counts rounded to the nearest integer, smallest on ties.
pub fn component_count_summary(counts: &[f64]) -> Option<ComponentSummary> {
    if counts.is_empty() {
        return None;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let std = if counts.len() > 1 {
        (counts.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for k in counts {
        *histogram.entry(k.round() as usize).or_insert(0) += 1;
    }
    let mode = histogram
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(k, _)| *k)
        .unwrap_or(0);
    Some(ComponentSummary {
        participants: counts.len(),
        mean,
        mode,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{NaiveDate, NaiveDateTime};

    fn ts(day: u32, hour: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2012, 1, 2 + day)
            .unwrap()
            .and_hms_opt(hour, 0, 0)
            .unwrap()
    }

    fn rec(tower: u32, day: u32, hour: u32) -> ObservationRecord {
        ObservationRecord {
            participant: "p".into(),
            tower,
            timestamp: ts(day, hour),
        }
    }

    struct Fixed(f64);
    impl HeldoutDensity for Fixed {
        fn density(&self, _: &ObservationRecord) -> f64 {
            self.0
        }
    }

    #[test]
    fn single_point_summary() {
        let s = heldout_loglik(&Fixed((-2.0f64).exp()), &[rec(0, 0, 0)]).unwrap();
        assert!((s.mean + 2.0).abs() < 1e-12);
        assert_eq!((s.half_width, s.count, s.clamped), (0.0, 1, 0));
        assert!(matches!(
            heldout_loglik(&Fixed(1.0), &[]),
            Err(MixtureError::EmptyTestSet)
        ));
    }

    #[test]
    fn zero_density_is_clamped_and_counted() {
        let s = heldout_loglik(&Fixed(0.0), &[rec(0, 0, 0), rec(1, 0, 1)]).unwrap();
        assert_eq!(s.clamped, 2);
        assert_eq!(s.mean, DENSITY_FLOOR.ln());
    }

    #[test]
    fn random_baseline_closed_form() {
        let base = RandomBaseline { tower_count: 100 };
        let expected =
            -(100f64.ln()) - 7f64.ln() - (6.0 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let at_noon = rec(3, 2, 12);
        assert!((base.density(&at_noon).ln() - expected).abs() < 1e-12);
        // independent of tower and day
        assert_eq!(base.density(&at_noon), base.density(&rec(77, 5, 12)));
    }

    #[test]
    fn markov_counts_with_add_one_smoothing() {
        let train: Grouped = [(
            "p".to_string(),
            vec![rec(1, 0, 1), rec(2, 0, 2), rec(1, 0, 3), rec(2, 0, 4)],
        )]
        .into_iter()
        .collect();
        let towers = 10;
        let markov = MarkovBaseline::fit(&train, towers);
        // preceding training observation is the "1" at 03:00
        let p = markov.tower_probability(&rec(2, 0, 3) /* same time: not before */);
        let after_two = (0.0 + 1.0) / (1.0 + 10.0);
        assert!((p - after_two).abs() < 1e-15);
        let p = markov.tower_probability(&ObservationRecord {
            timestamp: ts(0, 3) + chrono::Duration::minutes(30),
            ..rec(2, 0, 3)
        });
        assert!((p - 3.0 / 12.0).abs() < 1e-15);
        // nothing earlier: marginal (2 + 1) / (4 + 10)
        let first = markov.tower_probability(&rec(1, 0, 0));
        assert!((first - 3.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn component_summary() {
        let s = component_count_summary(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.mode, s.std), (2.0, 2, 0.0));
        let s = component_count_summary(&[1.0, 2.2, 1.9, 6.0]).unwrap();
        assert_eq!(s.mode, 2);
        assert!((s.mean - 2.775).abs() < 1e-12);
        assert!(component_count_summary(&[]).is_none());
    }
}
