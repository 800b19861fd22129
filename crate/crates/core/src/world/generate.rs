use std::collections::BTreeSet;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Geometric, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{WorldConfig, WorldError};
use crate::delay::PresenceProfile;
use crate::timebase::{Grouped, ObservationRecord, SlotIndex, DAYS, H};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub x: f64,
    pub y: f64,
    /// Urban cluster the tower was scattered around, if any.
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationRole {
    Home,
    Work,
    Other,
}

/// One place a participant frequents, seen through several towers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentLocation {
    pub role: LocationRole,
    pub weight: f64,
    pub center: u32,
    /// `(tower, probability)` pairs, probabilities summing to one.
    pub emission: Vec<(u32, f64)>,
    pub day_weights: [f64; DAYS],
    pub hour_mean: f64,
    pub hour_std: f64,
}

impl LatentLocation {
    /// Unnormalised weight of this location at a moment of the week.
    pub fn affinity(&self, day: usize, hour: f64) -> f64 {
        self.weight * self.day_weights[day] * wrapped_normal(hour, self.hour_mean, self.hour_std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantTruth {
    pub id: String,
    pub home: u32,
    pub locations: Vec<LatentLocation>,
}

impl ParticipantTruth {
    /// Posterior over latent locations at `(day, hour)`.
    pub fn location_weights(&self, day: usize, hour: f64) -> Vec<f64> {
        let mut w: Vec<f64> = self
            .locations
            .iter()
            .map(|l| l.affinity(day, hour))
            .collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|x| *x /= total);
        } else {
            let u = 1.0 / w.len() as f64;
            w.iter_mut().for_each(|x| *x = u);
        }
        w
    }

    pub fn support(&self) -> BTreeSet<u32> {
        self.locations
            .iter()
            .flat_map(|l| l.emission.iter().map(|(t, _)| *t))
            .collect()
    }

    /// Slot presence over all towers, averaging the location posterior over
    /// each slot's hours by the midpoint rule.
    pub fn presence(&self, tower_count: usize) -> PresenceProfile {
        let mut rows = vec![[0.0; H]; tower_count];
        for slot in SlotIndex::all() {
            let t = slot.zero_based();
            let day = usize::from(slot.day());
            let base = if slot.is_afternoon() { 12.0 } else { 0.0 };
            let mut mix = vec![0.0; self.locations.len()];
            for step in 0..PRESENCE_STEPS {
                let hour = base + 12.0 * (step as f64 + 0.5) / PRESENCE_STEPS as f64;
                for (m, w) in mix.iter_mut().zip(self.location_weights(day, hour)) {
                    *m += w / PRESENCE_STEPS as f64;
                }
            }
            for (loc, m) in self.locations.iter().zip(&mix) {
                for &(tower, e) in &loc.emission {
                    rows[tower as usize][t] += m * e;
                }
            }
        }
        for row in &mut rows {
            for p in row.iter_mut() {
                *p = p.clamp(0.0, 1.0);
            }
        }
        PresenceProfile::new(self.id.clone(), rows).expect("presence entries are clamped to [0, 1]")
    }
}

const PRESENCE_STEPS: usize = 48;

/// A generated ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub config: WorldConfig,
    pub seed: u64,
    pub towers: Vec<Tower>,
    pub participants: Vec<ParticipantTruth>,
}

impl WorldSpec {
    pub fn tower_count(&self) -> usize {
        self.towers.len()
    }

    /// Ground-truth presence of every participant, in participant order.
    pub fn presence_profiles(&self) -> Vec<PresenceProfile> {
        self.participants
            .par_iter()
            .map(|p| p.presence(self.towers.len()))
            .collect()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.towers[a], self.towers[b]);
        (p.x - q.x).hypot(p.y - q.y)
    }
}

fn wrapped_normal(hour: f64, mean: f64, std: f64) -> f64 {
    let norm = 1.0 / (std * (2.0 * std::f64::consts::PI).sqrt());
    (-2..=2)
        .map(|k| {
            let z = (hour - mean + 24.0 * f64::from(k)) / std;
            norm * (-0.5 * z * z).exp()
        })
        .sum()
}

fn normalized<R: Rng>(rng: &mut R, n: usize, shape: f64) -> Vec<f64> {
    let gamma = Gamma::new(shape, 1.0).expect("positive shape");
    let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(rng).max(1e-12)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

fn place_towers<R: Rng>(config: &WorldConfig, rng: &mut R) -> Vec<Tower> {
    let side = config.area_side;
    let rural = (config.tower_count as f64 * config.rural_fraction).round() as usize;
    let urban = config.tower_count - rural;
    let centers: Vec<(f64, f64)> = (0..config.urban_clusters)
        .map(|_| {
            (
                rng.random_range(0.2 * side..0.8 * side),
                rng.random_range(0.2 * side..0.8 * side),
            )
        })
        .collect();
    let spread = Normal::new(0.0, config.cluster_spread).expect("positive spread");
    let mut towers = Vec::with_capacity(config.tower_count);
    for i in 0..urban {
        let c = i % centers.len();
        let (cx, cy) = centers[c];
        towers.push(Tower {
            x: (cx + spread.sample(rng)).clamp(0.0, side),
            y: (cy + spread.sample(rng)).clamp(0.0, side),
            cluster: Some(c),
        });
    }
    for _ in 0..rural {
        towers.push(Tower {
            x: rng.random_range(0.0..side),
            y: rng.random_range(0.0..side),
            cluster: None,
        });
    }
    towers
}

/// Towers ordered by distance from each tower, itself first.
fn neighbour_lists(towers: &[Tower]) -> Vec<Vec<u32>> {
    (0..towers.len())
        .map(|a| {
            let mut order: Vec<u32> = (0..towers.len() as u32).collect();
            let d = |b: u32| {
                let (p, q) = (towers[a], towers[b as usize]);
                (p.x - q.x).hypot(p.y - q.y)
            };
            order.sort_by(|&b, &c| d(b).total_cmp(&d(c)).then(b.cmp(&c)));
            order
        })
        .collect()
}

fn sample_participant<R: Rng>(
    config: &WorldConfig,
    index: usize,
    towers: &[Tower],
    near: &[Vec<u32>],
    rng: &mut R,
) -> ParticipantTruth {
    let home_weights: Vec<f64> = towers
        .iter()
        .map(|t| {
            if t.cluster.is_some() {
                config.urban_home_weight
            } else {
                1.0
            }
        })
        .collect();
    let home = (0..towers.len() as u32)
        .collect::<Vec<_>>()
        .choose_weighted(rng, |&t| home_weights[t as usize])
        .copied()
        .expect("positive home weights");

    let extra = Geometric::new(config.location_count_p)
        .expect("p in (0, 1]")
        .sample(rng) as usize;
    let k = (config.min_locations + extra).min(config.max_locations);
    let raw_weights = normalized(rng, k, config.weight_shape);

    let locations = (0..k)
        .map(|j| {
            let role = match j {
                0 => LocationRole::Home,
                1 => LocationRole::Work,
                _ => LocationRole::Other,
            };
            let center = match role {
                LocationRole::Home => home,
                _ if rng.random_bool(config.travel_probability) => {
                    rng.random_range(0..towers.len() as u32)
                }
                _ => {
                    let hood = &near[home as usize][..config.neighbourhood.min(towers.len())];
                    *hood.choose(rng).expect("non-empty neighbourhood")
                }
            };
            let m = rng
                .random_range(config.emission_min..=config.emission_max)
                .min(towers.len());
            let probs = normalized(rng, m, 1.0);
            let emission = near[center as usize][..m]
                .iter()
                .copied()
                .zip(probs)
                .collect();
            let (hour_mean, hour_std, day_weights) = match role {
                LocationRole::Home => (
                    rng.random_range(19.0..23.0),
                    rng.random_range(2.5..4.0),
                    [1.0 / 7.0; DAYS],
                ),
                LocationRole::Work => {
                    let weekend = config.weekend_work_weight;
                    let total = 5.0 + 2.0 * weekend;
                    let mut d = [1.0 / total; DAYS];
                    d[5] = weekend / total;
                    d[6] = weekend / total;
                    (rng.random_range(10.0..15.0), rng.random_range(1.5..3.0), d)
                }
                LocationRole::Other => {
                    let d = normalized(rng, DAYS, 2.0);
                    (
                        rng.random_range(8.0..21.0),
                        rng.random_range(1.5..3.5),
                        std::array::from_fn(|i| d[i]),
                    )
                }
            };
            let boost = match role {
                LocationRole::Home => config.home_boost,
                _ => 1.0,
            };
            LatentLocation {
                role,
                weight: raw_weights[j] * boost,
                center,
                emission,
                day_weights,
                hour_mean,
                hour_std,
            }
        })
        .collect::<Vec<_>>();
    let total: f64 = locations.iter().map(|l| l.weight).sum();
    let locations = locations
        .into_iter()
        .map(|l| LatentLocation {
            weight: l.weight / total,
            ..l
        })
        .collect();
    ParticipantTruth {
        id: format!("p{index:05}"),
        home,
        locations,
    }
}

/// Draws towers and per-participant mobility habits; deterministic in `seed`.
pub fn sample_world(config: &WorldConfig, seed: u64) -> Result<WorldSpec, WorldError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let towers = place_towers(config, &mut rng);
    let near = neighbour_lists(&towers);
    let participants = (0..config.participant_count)
        .into_par_iter()
        .map(|i| {
            let mut prng = ChaCha8Rng::seed_from_u64(seed);
            prng.set_stream(i as u64 + 1);
            sample_participant(config, i, &towers, &near, &mut prng)
        })
        .collect();
    Ok(WorldSpec {
        config: config.clone(),
        seed,
        towers,
        participants,
    })
}

/// Observation times start on a Monday at midnight.
pub fn epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2012, 1, 2)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time")
}

fn participant_observations<R: Rng>(
    truth: &ParticipantTruth,
    rate: f64,
    duration_days: u32,
    rng: &mut R,
) -> Vec<ObservationRecord> {
    let mean = rate * f64::from(duration_days);
    if !(mean > 0.0) {
        return Vec::new();
    }
    let count = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    let horizon = i64::from(duration_days) * 86_400;
    let mut seconds: Vec<i64> = (0..count).map(|_| rng.random_range(0..horizon)).collect();
    seconds.sort_unstable();
    seconds
        .into_iter()
        .map(|s| {
            let day = ((s / 86_400) % DAYS as i64) as usize;
            let hour = (s % 86_400) as f64 / 3600.0;
            let weights = truth.location_weights(day, hour);
            let k = (0..weights.len())
                .collect::<Vec<_>>()
                .choose_weighted(rng, |&i| weights[i])
                .copied()
                .unwrap_or(0);
            let emission = &truth.locations[k].emission;
            let tower = emission
                .choose_weighted(rng, |e| e.1)
                .map(|e| e.0)
                .expect("non-empty emission");
            ObservationRecord {
                participant: truth.id.clone(),
                tower,
                timestamp: epoch() + Duration::seconds(s),
            }
        })
        .collect()
}

/// Sparse sightings over `duration_days`, as a Poisson process at the world's
/// rate. Participants with no sightings are absent from the result.
pub fn sample_observations(world: &WorldSpec, duration_days: u32, seed: u64) -> Grouped {
    world
        .participants
        .par_iter()
        .enumerate()
        .map(|(i, truth)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (
                truth.id.clone(),
                participant_observations(truth, world.config.rate_per_day, duration_days, &mut rng),
            )
        })
        .filter(|(_, records)| !records.is_empty())
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Per-tower urban/rural flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuralityLabel {
    pub rural: Vec<bool>,
}

impl RuralityLabel {
    pub fn rural_towers(&self) -> Vec<usize> {
        (0..self.rural.len()).filter(|&t| self.rural[t]).collect()
    }

    pub fn urban_towers(&self) -> Vec<usize> {
        (0..self.rural.len()).filter(|&t| !self.rural[t]).collect()
    }
}

/// A tower is rural when fewer than `threshold` other towers lie within `radius`.
pub fn label_rurality(
    world: &WorldSpec,
    radius: f64,
    threshold: usize,
) -> Result<RuralityLabel, WorldError> {
    if !(radius > 0.0) || threshold == 0 {
        return Err(WorldError::Config(format!(
            "rurality needs positive radius and threshold, got {radius} and {threshold}"
        )));
    }
    let n = world.tower_count();
    let rural = (0..n)
        .map(|a| {
            (0..n)
                .filter(|&b| b != a && world.distance(a, b) <= radius)
                .count()
                < threshold
        })
        .collect();
    Ok(RuralityLabel { rural })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            tower_count: 60,
            participant_count: 40,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn same_seed_same_world() {
        let a = sample_world(&small(), 3).unwrap();
        let b = sample_world(&small(), 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_world(&small(), 4).unwrap());
        assert_eq!(
            sample_observations(&a, 14, 1),
            sample_observations(&b, 14, 1)
        );
    }

    #[test]
    fn tables_are_normalized() {
        let world = sample_world(&small(), 5).unwrap();
        assert_eq!(world.towers.len(), 60);
        for p in &world.participants {
            assert!(!p.locations.is_empty());
            assert!((p.locations.iter().map(|l| l.weight).sum::<f64>() - 1.0).abs() < 1e-12);
            for l in &p.locations {
                assert!((2..=4).contains(&l.emission.len()));
                assert!((l.emission.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
                assert!((l.day_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let presence = p.presence(60);
            for t in SlotIndex::all() {
                let total: f64 = (0..60).map(|v| presence.presence(v, t)).sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn wrapped_normal_integrates_to_one() {
        let steps = 24_000;
        let total: f64 = (0..steps)
            .map(|i| {
                wrapped_normal(24.0 * (i as f64 + 0.5) / steps as f64, 22.5, 3.0) * 24.0
                    / steps as f64
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn observations_stay_on_emission_support() {
        let world = sample_world(&small(), 6).unwrap();
        let obs = sample_observations(&world, 14, 2);
        for p in &world.participants {
            let support = p.support();
            for r in obs.get(&p.id).into_iter().flatten() {
                assert!(support.contains(&r.tower));
                assert!(r.timestamp >= epoch() && r.timestamp < epoch() + Duration::days(14));
            }
        }
    }

    #[test]
    fn zero_rate_gives_no_records() {
        let mut world = sample_world(&small(), 1).unwrap();
        world.config.rate_per_day = 0.0;
        assert!(sample_observations(&world, 14, 1).is_empty());
    }

    #[test]
    fn rurality_partitions_towers() {
        let mut world = sample_world(&small(), 7).unwrap();
        world.towers[0] = Tower {
            x: -500.0,
            y: -500.0,
            cluster: None,
        };
        let labels = label_rurality(&world, 8.0, 3).unwrap();
        assert!(labels.rural[0]);
        assert_eq!(
            labels.rural_towers().len() + labels.urban_towers().len(),
            60
        );
        // a tower with many close neighbours
        let dense = (0..60)
            .max_by_key(|&a| (0..60).filter(|&b| world.distance(a, b) <= 8.0).count())
            .unwrap();
        assert!(!labels.rural[dense]);
        assert!(label_rurality(&world, 0.0, 3).is_err());
    }
}
