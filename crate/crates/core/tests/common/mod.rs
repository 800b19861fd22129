//! Exact partition posteriors of small mixtures, for checking the sampler.

use std::collections::BTreeMap;

use statrs::function::gamma::ln_gamma;

use crowdship::mixture::{Hyperparameters, MixtureState, MobilityObs, MobilityStats};

/// Every set partition of `0..n` as a label vector numbered by first appearance.
pub fn partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    fn grow(i: usize, max: usize, labels: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == labels.len() {
            out.push(labels.clone());
            return;
        }
        for k in 0..=max + 1 {
            labels[i] = k;
            grow(i + 1, max.max(k), labels, out);
        }
    }
    if n > 0 {
        grow(1, 0, &mut labels, &mut out);
    }
    out
}

pub fn ln_dirichlet_multinomial(counts: &[u32], categories: usize, conc: f64) -> f64 {
    let n: u32 = counts.iter().sum();
    let k = categories as f64;
    ln_gamma(k * conc) - ln_gamma(k * conc + f64::from(n))
        + counts
            .iter()
            .map(|&c| ln_gamma(conc + f64::from(c)) - ln_gamma(conc))
            .sum::<f64>()
}

/// Marginal likelihood of hours under a normal with unknown mean and precision.
pub fn ln_nig_marginal(hours: &[f64], hyper: &Hyperparameters) -> f64 {
    let n = hours.len() as f64;
    let (k0, m0) = (hyper.kappa0, hyper.mu0);
    let a0 = hyper.nu0 / 2.0;
    let b0 = a0 * hyper.s0;
    let mean = hours.iter().sum::<f64>() / n;
    let ss: f64 = hours.iter().map(|h| (h - mean).powi(2)).sum();
    let kn = k0 + n;
    let an = a0 + n / 2.0;
    let bn = b0 + 0.5 * ss + k0 * n * (mean - m0).powi(2) / (2.0 * kn);
    ln_gamma(an) - ln_gamma(a0) + a0 * b0.ln() - an * bn.ln() + 0.5 * (k0 / kn).ln()
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

pub fn ln_partition_weight(
    labels: &[usize],
    data: &[MobilityObs],
    hyper: &Hyperparameters,
    towers: usize,
) -> f64 {
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&MobilityObs> = labels
            .iter()
            .zip(data)
            .filter(|(&l, _)| l == c)
            .map(|(_, d)| d)
            .collect();
        let mut tower_counts = vec![0u32; towers];
        let mut day_counts = vec![0u32; 7];
        for d in &members {
            tower_counts[d.tower as usize] += 1;
            day_counts[d.day as usize] += 1;
        }
        let hours: Vec<f64> = members.iter().map(|d| d.hour).collect();
        total += hyper.alpha.ln()
            + ln_gamma(members.len() as f64)
            + ln_dirichlet_multinomial(&tower_counts, towers, hyper.tower_conc)
            + ln_dirichlet_multinomial(&day_counts, 7, hyper.day_conc)
            + ln_nig_marginal(&hours, hyper);
    }
    total
}

/// Posterior probability of every partition of `data`.
pub fn exact_posterior(
    data: &[MobilityObs],
    hyper: &Hyperparameters,
    towers: usize,
) -> BTreeMap<Vec<usize>, f64> {
    let all = partitions(data.len());
    let ln_w: Vec<f64> = all
        .iter()
        .map(|p| ln_partition_weight(p, data, hyper, towers))
        .collect();
    let top = ln_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = ln_w.iter().map(|l| (l - top).exp()).sum();
    all.into_iter()
        .zip(&ln_w)
        .map(|(p, l)| (p, (l - top).exp() / z))
        .collect()
}

/// Total variation between `exact` and the empirical partition law of `states`.
pub fn partition_tv<'a>(
    exact: &BTreeMap<Vec<usize>, f64>,
    states: impl Iterator<Item = &'a MixtureState<MobilityStats>>,
) -> f64 {
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut n = 0usize;
    for s in states {
        *counts.entry(s.canonical_labels()).or_insert(0) += 1;
        n += 1;
    }
    exact
        .iter()
        .map(|(p, q)| (q - *counts.get(p).unwrap_or(&0) as f64 / n as f64).abs())
        .sum::<f64>()
        / 2.0
}

pub fn observations(rows: &[(u32, u8, f64)]) -> Vec<MobilityObs> {
    rows.iter()
        .map(|&(tower, day, hour)| MobilityObs { tower, day, hour })
        .collect()
}
