//! Monte Carlo studies of the inclusion events and of the mean-shift
//! condition on consecutive predictions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{self, Vec2};
use crate::planner::Variant;
use crate::predictor::{predict, simulate_step, OvState};
use crate::safety::{inclusion_holds, legacy_condition_satisfied, HalfspaceConstraint, MarginTable};

use super::{run_batch, trial_seed, Scenario, TrialConfig};

/// Empirical frequency of the one-step inclusion event for one `(t, tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFrequency {
    pub t: usize,
    pub tau: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionReport {
    pub n_samples: usize,
    pub gamma_bar: f64,
    pub pairs: Vec<PairFrequency>,
    /// Fraction of sampled obstacle paths on which every pair held.
    pub joint_frequency: f64,
}

/// Samples obstacle paths from the scenario's start and, at every planning
/// step `tau` and timestep `t >= tau + 2`, checks whether the realized
/// next-step level stays below the current level plus `c(t, tau)` from
/// `table`. Passing a scaled copy of the scenario table probes other
/// margins.
pub fn inclusion_probe(scenario: &Scenario, table: &MarginTable, n_samples: usize, seed: u64) -> Result<InclusionReport> {
    let horizon = scenario.horizon();
    if n_samples == 0 {
        return Err(Error::InvalidParameter("inclusion probe needs samples".into()));
    }
    if table.horizon() != horizon {
        return Err(Error::DimensionMismatch(format!("table horizon {} for scenario horizon {horizon}", table.horizon())));
    }
    let pairs: Vec<(usize, usize)> =
        (0..horizon).flat_map(|tau| ((tau + 2)..=horizon).map(move |t| (t, tau))).collect();
    let model = scenario.ov_model();
    let alloc = scenario.alloc();
    let r = scenario.config().safe_radius;
    let start = OvState::new(Vec2::from(scenario.config().obstacle.init), 0);

    let outcomes: Vec<Vec<bool>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<bool>> {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, i));
            let mut path = vec![start];
            for _ in 0..horizon {
                let next = simulate_step(model, path.last().expect("path starts non-empty"), &mut rng);
                path.push(next);
            }
            let mut held = Vec::with_capacity(pairs.len());
            for tau in 0..horizon {
                if tau + 2 > horizon {
                    break;
                }
                let joint = predict(model, &path[tau], horizon)?;
                let observed = path[tau + 1].position;
                for t in (tau + 2)..=horizon {
                    let h = HalfspaceConstraint {
                        t,
                        m: table.direction(t),
                        r,
                        gamma_t: alloc.gamma_t(),
                        mu: joint.mean(t),
                        sigma: joint.cov(t),
                        margin: 0.0,
                    };
                    let next = gauss::condition(&joint, t, 1, observed)?;
                    held.push(inclusion_holds(&h, next.mean2(), &next.cov2(), table.c(t, tau)));
                }
            }
            Ok(held)
        })
        .collect::<Result<_>>()?;

    let n = n_samples as f64;
    let pairs = pairs
        .iter()
        .enumerate()
        .map(|(k, &(t, tau))| PairFrequency {
            t,
            tau,
            frequency: outcomes.iter().filter(|o| o[k]).count() as f64 / n,
        })
        .collect();
    let joint_frequency = outcomes.iter().filter(|o| o.iter().all(|&b| b)).count() as f64 / n;
    Ok(InclusionReport { n_samples, gamma_bar: alloc.gamma_bar(), pairs, joint_frequency })
}

/// One horizon of the mean-shift study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegacyRow {
    pub horizon: usize,
    pub n_trials: usize,
    /// Fraction of obstacle paths on which the mean-shift bound held for
    /// every `(t, tau)`.
    pub satisfaction_rate: f64,
    pub nominal_rf_rate: f64,
    pub prf_rf_rate: f64,
}

/// Whether the mean-shift bound holds along one obstacle path for every
/// `2 <= t <= T` and `0 <= tau <= t - 1`. The prediction made at `t` for
/// step `t` is the observation itself, with zero covariance.
pub(crate) fn legacy_holds_on_path(scenario: &Scenario, path: &[OvState]) -> Result<bool> {
    let horizon = path.len() - 1;
    let gamma_t = scenario.alloc().gamma_t();
    let model = scenario.ov_model();
    let predictions = (0..horizon).map(|tau| predict(model, &path[tau], horizon)).collect::<Result<Vec<_>>>()?;
    for tau in 0..horizon {
        for t in (tau + 1).max(2)..=horizon {
            let (mu_a, sigma_a) = (predictions[tau].mean(t), predictions[tau].cov(t));
            let (mu_b, sigma_b) = if tau + 1 == t {
                (path[t].position, gauss::Mat2::zeros())
            } else {
                (predictions[tau + 1].mean(t), predictions[tau + 1].cov(t))
            };
            if !legacy_condition_satisfied(mu_a, mu_b, &sigma_a, &sigma_b, gamma_t) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// For each horizon, the rate at which the mean-shift bound holds on all
/// pairs of a sampled obstacle path, together with the recursive-feasibility
/// rates of both planners on the same scenario truncated to that horizon.
pub fn legacy_condition_study(
    config: &TrialConfig,
    horizons: &[usize],
    n_trials: usize,
    threads: usize,
) -> Result<Vec<LegacyRow>> {
    if n_trials == 0 {
        return Err(Error::InvalidParameter("study needs at least one trial".into()));
    }
    horizons
        .iter()
        .map(|&horizon| {
            if !(2..=config.horizon.max(2)).contains(&horizon) {
                return Err(Error::InvalidParameter(format!(
                    "horizon {horizon} outside 2..={}",
                    config.horizon
                )));
            }
            let scenario = Scenario::new(&config.with_horizon(horizon))?;
            let start = OvState::new(Vec2::from(config.obstacle.init), 0);
            let satisfied = (0..n_trials as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, i));
                    let mut path = vec![start];
                    for _ in 0..horizon {
                        let next = simulate_step(scenario.ov_model(), path.last().expect("non-empty"), &mut rng);
                        path.push(next);
                    }
                    legacy_holds_on_path(&scenario, &path)
                })
                .collect::<Result<Vec<bool>>>()?
                .into_iter()
                .filter(|&b| b)
                .count();
            let nominal = run_batch(&scenario, n_trials, Variant::Nominal, threads)?;
            let prf = run_batch(&scenario, n_trials, Variant::Prf, threads)?;
            Ok(LegacyRow {
                horizon,
                n_trials,
                satisfaction_rate: satisfied as f64 / n_trials as f64,
                nominal_rf_rate: nominal.metrics.rf_rate,
                prf_rf_rate: prf.metrics.rf_rate,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::tests::benign_config;

    fn noisy() -> Scenario {
        let mut cfg = benign_config();
        cfg.obstacle.init = [-8.0, 3.5];
        cfg.obstacle.velocity_cov = [[1.0, 0.0], [0.0, 0.25]];
        Scenario::new(&cfg).unwrap()
    }

    #[test]
    fn inclusion_frequencies_meet_the_pair_budget() {
        let s = noisy();
        let report = inclusion_probe(&s, s.table(), 20_000, 11).unwrap();
        assert_eq!(report.pairs.len(), 36);
        let sd = (report.gamma_bar * (1.0 - report.gamma_bar) / 20_000.0).sqrt();
        for p in &report.pairs {
            assert!(p.frequency >= 1.0 - report.gamma_bar - 4.0 * sd, "{p:?}");
        }
        assert!(report.joint_frequency >= 0.9);
    }

    #[test]
    fn doubled_margins_never_lower_frequencies() {
        let s = noisy();
        let base = inclusion_probe(&s, s.table(), 5_000, 5).unwrap();
        let doubled = inclusion_probe(&s, &s.table().scaled(2.0), 5_000, 5).unwrap();
        for (a, b) in base.pairs.iter().zip(&doubled.pairs) {
            assert!(b.frequency >= a.frequency);
        }
        assert!(doubled.joint_frequency >= base.joint_frequency);
        let none = inclusion_probe(&s, &s.table().scaled(0.0), 5_000, 5).unwrap();
        assert!(none.joint_frequency < base.joint_frequency);
    }

    #[test]
    fn noiseless_path_satisfies_the_mean_shift_bound() {
        let s = Scenario::new(&benign_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut path = vec![OvState::new(Vec2::new(-60.0, 12.0), 0)];
        for _ in 0..9 {
            let next = simulate_step(s.ov_model(), path.last().unwrap(), &mut rng);
            path.push(next);
        }
        assert!(legacy_holds_on_path(&s, &path).unwrap());
    }

    #[test]
    fn horizons_outside_the_scenario_are_rejected() {
        let cfg = benign_config();
        assert!(legacy_condition_study(&cfg, &[1], 10, 1).is_err());
        assert!(legacy_condition_study(&cfg, &[10], 10, 1).is_err());
    }
}
