//! Periodic presence probabilities turned into waiting-time laws.
//!
//! A carrier is at location `v` in slot `t` with probability `pr(v | t)`,
//! independently across slots. Starting from slot `s`, the wait until the
//! first presence is a sequence of Bernoulli trials at `s + 1, s + 2, ...`.
//! Because `pr` repeats every [`H`] slots the wait decomposes into a residue
//! in `1..=H` plus a geometric number of whole missed periods.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixture::MobilityModel;
use crate::timebase::{SlotIndex, H};

/// A miss probability above `1 - UNREACHABLE_EPS` marks a location as
/// never reached by that carrier.
pub const UNREACHABLE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DelayError {
    #[error("presence probability {value} at location {location}, slot {slot} outside [0, 1]")]
    Probability {
        location: usize,
        slot: usize,
        value: f64,
    },
    #[error("pickup and drop-off are both location {0}")]
    SameLocation(usize),
    #[error("location {0} is never visited by this carrier")]
    Unreachable(usize),
    #[error("location {location} outside profile with {count} locations")]
    UnknownLocation { location: usize, count: usize },
}

/// Per-slot presence probabilities of one participant at every location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceProfile {
    pub participant: String,
    probs: Vec<[f64; H]>,
}

impl PresenceProfile {
    /// `probs[v][t]` is the presence probability at location `v` during the
    /// zero-based slot `t`.
    pub fn new(participant: impl Into<String>, probs: Vec<[f64; H]>) -> Result<Self, DelayError> {
        for (location, row) in probs.iter().enumerate() {
            for (slot, &value) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(DelayError::Probability {
                        location,
                        slot: slot + 1,
                        value,
                    });
                }
            }
        }
        Ok(Self {
            participant: participant.into(),
            probs,
        })
    }

    pub fn location_count(&self) -> usize {
        self.probs.len()
    }

    pub fn presence(&self, location: usize, slot: SlotIndex) -> f64 {
        self.probs[location][slot.zero_based()]
    }

    pub fn row(&self, location: usize) -> &[f64; H] {
        &self.probs[location]
    }

    fn check(&self, location: usize) -> Result<(), DelayError> {
        if location < self.probs.len() {
            Ok(())
        } else {
            Err(DelayError::UnknownLocation {
                location,
                count: self.probs.len(),
            })
        }
    }
}

/// Presence taken from a fitted mobility model: for each slot, the model's
/// distribution over towers.
pub fn presence_from_model(model: &MobilityModel) -> PresenceProfile {
    let towers = model.tower_count() as usize;
    let mut probs = vec![[0.0; H]; towers];
    for slot in SlotIndex::all() {
        for (row, p) in probs.iter_mut().zip(model.tower_given_slot(slot)) {
            row[slot.zero_based()] = p.clamp(0.0, 1.0);
        }
    }
    PresenceProfile {
        participant: model.participant.clone(),
        probs,
    }
}

/// Waiting-time law from a given start slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayLaw {
    /// `first[d - 1]`: probability that the first presence is `d` slots after
    /// the start, for `d` in `1..=H`.
    pub first: [f64; H],
    /// Probability of no presence during a whole period.
    pub miss: f64,
}

impl DelayLaw {
    pub fn from_row(row: &[f64; H], start: SlotIndex) -> Self {
        let mut first = [0.0; H];
        let mut survive = 1.0;
        for (d, q) in first.iter_mut().enumerate() {
            let p = row[start.advance(d + 1).zero_based()];
            *q = p * survive;
            survive *= 1.0 - p;
        }
        Self {
            first,
            miss: survive,
        }
    }

    pub fn is_unreachable(&self) -> bool {
        self.miss > 1.0 - UNREACHABLE_EPS
    }

    /// Law of the delay modulo `H` (in `1..=H`), conditioned on eventual success.
    pub fn residues(&self) -> Option<[f64; H]> {
        if self.is_unreachable() {
            return None;
        }
        let hit = 1.0 - self.miss;
        Some(self.first.map(|q| q / hit))
    }
}

pub fn delay_law(profile: &PresenceProfile, location: usize, start: SlotIndex) -> DelayLaw {
    DelayLaw::from_row(profile.row(location), start)
}

/// Expected waiting time in slots, or unreachable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LegCost {
    Expected(f64),
    Unreachable,
}

impl LegCost {
    pub fn slots(self) -> Option<f64> {
        match self {
            LegCost::Expected(e) => Some(e),
            LegCost::Unreachable => None,
        }
    }

    pub fn is_reachable(self) -> bool {
        matches!(self, LegCost::Expected(_))
    }
}

/// Mean of the full (unfolded) delay: residue mean plus `H` slots per
/// expected missed period, `H W / (1 - W)`.
pub fn expected_delay(law: &DelayLaw) -> LegCost {
    if law.is_unreachable() {
        return LegCost::Unreachable;
    }
    let hit = 1.0 - law.miss;
    let residue_mean: f64 = law
        .first
        .iter()
        .enumerate()
        .map(|(d, q)| (d + 1) as f64 * q)
        .sum::<f64>()
        / hit;
    LegCost::Expected(residue_mean + H as f64 * law.miss / hit)
}

/// The `H` delay laws of one carrier at one location, indexed by start slot.
#[derive(Debug, Clone)]
pub struct LocationLaws {
    laws: [DelayLaw; H],
    mean: [f64; H],
    reachable: bool,
}

impl LocationLaws {
    pub fn new(row: &[f64; H]) -> Self {
        let laws: [DelayLaw; H] =
            std::array::from_fn(|t| DelayLaw::from_row(row, SlotIndex::from_zero_based(t)));
        let reachable = !laws[0].is_unreachable();
        let mean = laws.map(|law| expected_delay(&law).slots().unwrap_or(f64::INFINITY));
        Self {
            laws,
            mean,
            reachable,
        }
    }

    pub fn is_reachable(&self) -> bool {
        self.reachable
    }

    pub fn law(&self, start: SlotIndex) -> &DelayLaw {
        &self.laws[start.zero_based()]
    }

    pub fn mean(&self, start: SlotIndex) -> f64 {
        self.mean[start.zero_based()]
    }
}

/// Cost and arrival-slot law of one pickup-then-drop-off leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub expected_slots: f64,
    /// `arrival[t]`: probability the package is dropped off in zero-based slot `t`.
    pub arrival: [f64; H],
}

/// Combines a carrier's pickup and drop-off laws for a leg starting at `start`.
/// Returns `None` when either endpoint is unreachable.
pub fn combine_leg(pickup: &LocationLaws, dropoff: &LocationLaws, start: SlotIndex) -> Option<Leg> {
    if !pickup.is_reachable() || !dropoff.is_reachable() {
        return None;
    }
    let pick = pickup.law(start);
    let pick_residues = pick.residues()?;
    let mut expected = pickup.mean(start);
    let mut arrival = [0.0; H];
    for (dv, &rv) in pick_residues.iter().enumerate() {
        if rv == 0.0 {
            continue;
        }
        let pickup_slot = start.advance(dv + 1);
        expected += rv * dropoff.mean(pickup_slot);
        let drop_residues = dropoff.law(pickup_slot).residues()?;
        for (dw, &rw) in drop_residues.iter().enumerate() {
            arrival[pickup_slot.advance(dw + 1).zero_based()] += rv * rw;
        }
    }
    Some(Leg {
        expected_slots: expected,
        arrival,
    })
}

fn endpoint_laws(
    profile: &PresenceProfile,
    v: usize,
    w: usize,
) -> Result<(LocationLaws, LocationLaws), DelayError> {
    profile.check(v)?;
    profile.check(w)?;
    if v == w {
        return Err(DelayError::SameLocation(v));
    }
    Ok((
        LocationLaws::new(profile.row(v)),
        LocationLaws::new(profile.row(w)),
    ))
}

/// Expected slots for the carrier to pick up at `v` and then drop off at `w`,
/// marginalising the drop-off law over the pickup residue.
pub fn leg_cost(
    profile: &PresenceProfile,
    v: usize,
    w: usize,
    start: SlotIndex,
) -> Result<LegCost, DelayError> {
    let (pickup, dropoff) = endpoint_laws(profile, v, w)?;
    Ok(
        combine_leg(&pickup, &dropoff, start).map_or(LegCost::Unreachable, |leg| {
            LegCost::Expected(leg.expected_slots)
        }),
    )
}

/// Distribution of the drop-off slot at `w`, indexed by zero-based slot.
pub fn leg_transition(
    profile: &PresenceProfile,
    v: usize,
    w: usize,
    start: SlotIndex,
) -> Result<[f64; H], DelayError> {
    let (pickup, dropoff) = endpoint_laws(profile, v, w)?;
    if !pickup.is_reachable() {
        return Err(DelayError::Unreachable(v));
    }
    combine_leg(&pickup, &dropoff, start)
        .map(|leg| leg.arrival)
        .ok_or(DelayError::Unreachable(w))
}
