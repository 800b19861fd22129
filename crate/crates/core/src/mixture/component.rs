use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::Hyperparameters;
use crate::timebase::{ObservationRecord, DAYS};

/// A conjugate mixture component: sufficient statistics plus the collapsed
/// posterior predictive of one datum given those statistics.
pub trait ComponentModel {
    type Datum;
    type Stats: Clone;

    fn empty_stats(&self) -> Self::Stats;
    fn observe(&self, stats: &mut Self::Stats, datum: &Self::Datum);
    fn forget(&self, stats: &mut Self::Stats, datum: &Self::Datum);
    fn ln_predictive(&self, stats: &Self::Stats, datum: &Self::Datum) -> f64;
}

/// Location-scale Student-t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentT {
    pub dof: f64,
    pub loc: f64,
    pub scale: f64,
    ln_norm: f64,
}

impl StudentT {
    pub fn new(dof: f64, loc: f64, scale: f64) -> Self {
        let ln_norm = ln_gamma(0.5 * (dof + 1.0))
            - ln_gamma(0.5 * dof)
            - 0.5 * (dof * std::f64::consts::PI).ln()
            - scale.ln();
        Self {
            dof,
            loc,
            scale,
            ln_norm,
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.loc) / self.scale;
        self.ln_norm - 0.5 * (self.dof + 1.0) * (z * z / self.dof).ln_1p()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }
}

/// Normal-inverse-gamma prior on an hour mean and variance, parameterised as
/// a gamma prior on the precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NigPrior {
    pub mean: f64,
    pub kappa: f64,
    pub shape: f64,
    pub rate: f64,
}

impl NigPrior {
    /// `b = (kappa0, mu0)`, `c = (nu0, s0)`: the precision has shape `nu0 / 2`
    /// and a rate chosen so that its prior mean is `1 / s0`.
    pub fn from_hyper(hyper: &Hyperparameters) -> Self {
        let shape = 0.5 * hyper.nu0;
        Self {
            mean: hyper.mu0,
            kappa: hyper.kappa0,
            shape,
            rate: shape * hyper.s0,
        }
    }

    /// Posterior predictive of one more hour given `n` hours with the given
    /// sum and sum of squares.
    pub fn predictive(&self, n: u32, sum: f64, sum_sq: f64) -> StudentT {
        let (kappa, mean, shape, rate) = if n == 0 {
            (self.kappa, self.mean, self.shape, self.rate)
        } else {
            let n = f64::from(n);
            let xbar = sum / n;
            let centred = (sum_sq - sum * xbar).max(0.0);
            let kappa = self.kappa + n;
            let mean = (self.kappa * self.mean + sum) / kappa;
            let shape = self.shape + 0.5 * n;
            let dev = xbar - self.mean;
            let rate = self.rate + 0.5 * centred + 0.5 * self.kappa * n * dev * dev / kappa;
            (kappa, mean, shape, rate)
        };
        StudentT::new(
            2.0 * shape,
            mean,
            (rate * (kappa + 1.0) / (shape * kappa)).sqrt(),
        )
    }
}

/// One (tower, day, hour) observation in week coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityObs {
    pub tower: u32,
    pub day: u8,
    pub hour: f64,
}

impl From<&ObservationRecord> for MobilityObs {
    fn from(record: &ObservationRecord) -> Self {
        let wp = record.week_point();
        Self {
            tower: record.tower,
            day: wp.day,
            hour: wp.hour,
        }
    }
}

/// Counts backing the tower and day Dirichlet posteriors and the hour
/// normal-inverse-gamma posterior of one latent location.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MobilityStats {
    pub n: u32,
    pub towers: BTreeMap<u32, u32>,
    pub days: [u32; DAYS],
    pub hour_sum: f64,
    pub hour_sum_sq: f64,
    #[serde(skip)]
    hour: Option<StudentT>,
}

impl MobilityStats {
    fn empty() -> Self {
        Self {
            n: 0,
            towers: BTreeMap::new(),
            days: [0; DAYS],
            hour_sum: 0.0,
            hour_sum_sq: 0.0,
            hour: None,
        }
    }

    pub fn tower_count(&self, tower: u32) -> u32 {
        self.towers.get(&tower).copied().unwrap_or(0)
    }

    /// Equality of counts, with hour sums compared to a relative tolerance.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()));
        self.n == other.n
            && self.towers == other.towers
            && self.days == other.days
            && close(self.hour_sum, other.hour_sum)
            && close(self.hour_sum_sq, other.hour_sum_sq)
    }
}

/// The per-participant mobility likelihood: categorical tower, categorical
/// day and normal hour, all integrated against their conjugate priors.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityComponent {
    pub hyper: Hyperparameters,
    pub tower_count: u32,
    hour_prior: NigPrior,
}

impl MobilityComponent {
    pub fn new(hyper: Hyperparameters, tower_count: u32) -> Self {
        Self {
            hour_prior: NigPrior::from_hyper(&hyper),
            hyper,
            tower_count,
        }
    }

    pub fn hour_prior(&self) -> &NigPrior {
        &self.hour_prior
    }

    /// Recomputes the cached hour predictive, e.g. after deserialising.
    pub fn refresh(&self, stats: &mut MobilityStats) {
        stats.hour = Some(
            self.hour_prior
                .predictive(stats.n, stats.hour_sum, stats.hour_sum_sq),
        );
    }

    pub fn hour_predictive(&self, stats: &MobilityStats) -> StudentT {
        stats.hour.unwrap_or_else(|| {
            self.hour_prior
                .predictive(stats.n, stats.hour_sum, stats.hour_sum_sq)
        })
    }

    pub fn tower_predictive(&self, stats: &MobilityStats, tower: u32) -> f64 {
        let a = self.hyper.tower_conc;
        (f64::from(stats.tower_count(tower)) + a)
            / (f64::from(stats.n) + f64::from(self.tower_count) * a)
    }

    pub fn day_predictive(&self, stats: &MobilityStats, day: u8) -> f64 {
        let d = self.hyper.day_conc;
        (f64::from(stats.days[usize::from(day)]) + d) / (f64::from(stats.n) + DAYS as f64 * d)
    }

    pub fn recompute(&self, data: &[MobilityObs]) -> MobilityStats {
        let mut stats = self.empty_stats();
        for obs in data {
            self.observe(&mut stats, obs);
        }
        stats
    }
}

impl ComponentModel for MobilityComponent {
    type Datum = MobilityObs;
    type Stats = MobilityStats;

    fn empty_stats(&self) -> MobilityStats {
        let mut stats = MobilityStats::empty();
        self.refresh(&mut stats);
        stats
    }

    fn observe(&self, stats: &mut MobilityStats, obs: &MobilityObs) {
        stats.n += 1;
        *stats.towers.entry(obs.tower).or_insert(0) += 1;
        stats.days[usize::from(obs.day)] += 1;
        stats.hour_sum += obs.hour;
        stats.hour_sum_sq += obs.hour * obs.hour;
        self.refresh(stats);
    }

    fn forget(&self, stats: &mut MobilityStats, obs: &MobilityObs) {
        stats.n -= 1;
        if let Some(count) = stats.towers.get_mut(&obs.tower) {
            *count -= 1;
            if *count == 0 {
                stats.towers.remove(&obs.tower);
            }
        }
        stats.days[usize::from(obs.day)] -= 1;
        if stats.n == 0 {
            stats.hour_sum = 0.0;
            stats.hour_sum_sq = 0.0;
        } else {
            stats.hour_sum -= obs.hour;
            stats.hour_sum_sq -= obs.hour * obs.hour;
        }
        self.refresh(stats);
    }

    fn ln_predictive(&self, stats: &MobilityStats, obs: &MobilityObs) -> f64 {
        self.tower_predictive(stats, obs.tower).ln()
            + self.day_predictive(stats, obs.day).ln()
            + self.hour_predictive(stats).ln_pdf(obs.hour)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Continuous, StudentsT};

    #[test]
    fn student_t_matches_reference() {
        let t = StudentT::new(3.5, 12.0, 2.5);
        let reference = StudentsT::new(12.0, 2.5, 3.5).unwrap();
        for x in [-30.0, 0.0, 11.0, 12.0, 19.25, 40.0] {
            assert!((t.pdf(x) - reference.pdf(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn prior_precision_mean_is_inverse_s0() {
        let prior = NigPrior::from_hyper(&Hyperparameters::default());
        assert!((prior.shape / prior.rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(prior.shape, 0.005);
        let t = prior.predictive(0, 0.0, 0.0);
        assert_eq!(t.loc, 12.0);
        assert!((t.dof - 0.01).abs() < 1e-15);
    }

    #[test]
    fn hour_posterior_concentrates() {
        let prior = NigPrior::from_hyper(&Hyperparameters::default());
        let hours: Vec<f64> = (0..200).map(|i| 8.0 + (i % 5) as f64 * 0.5).collect();
        let sum: f64 = hours.iter().sum();
        let sq: f64 = hours.iter().map(|h| h * h).sum();
        let t = prior.predictive(200, sum, sq);
        assert!((t.loc - 9.0).abs() < 0.01);
        // sample sd is 0.7071
        assert!((t.scale - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01);
    }

    #[test]
    fn tower_predictive_counts() {
        let comp = MobilityComponent::new(
            Hyperparameters {
                tower_conc: 1.0,
                ..Hyperparameters::default()
            },
            2,
        );
        let stats = comp.recompute(&[
            MobilityObs {
                tower: 0,
                day: 0,
                hour: 9.0,
            },
            MobilityObs {
                tower: 0,
                day: 1,
                hour: 9.5,
            },
        ]);
        assert!((comp.tower_predictive(&stats, 0) - 0.75).abs() < 1e-15);
        assert!((comp.tower_predictive(&stats, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn observe_then_forget_restores() {
        let comp = MobilityComponent::new(Hyperparameters::default(), 10);
        let base = [
            MobilityObs {
                tower: 1,
                day: 2,
                hour: 7.25,
            },
            MobilityObs {
                tower: 4,
                day: 2,
                hour: 18.0,
            },
        ];
        let mut stats = comp.recompute(&base);
        let extra = MobilityObs {
            tower: 9,
            day: 6,
            hour: 23.5,
        };
        comp.observe(&mut stats, &extra);
        comp.forget(&mut stats, &extra);
        assert!(stats.approx_eq(&comp.recompute(&base), 1e-12));
        assert_eq!(stats.tower_count(9), 0);
    }
}
