//! Random fleet generation for the sweep experiments.
//!
//! Each agent draws its best achievable precision uniformly from
//! `[0.0001, 0.01]` and its maximum cost from the Gaussian mixture
//! `0.5 N(50, 100) + 0.5 N(100, 100)`, then quantizes into `eta_max` equal
//! measurement steps: one step adds `1/eta_max` of the best precision at
//! `1/eta_max` of the maximum cost. Mixture draws below the floor are clipped
//! (the floor keeps costs positive; draws that low are vanishingly rare).
//!
//! Agent `k`'s parameters depend only on `(seed, k)`, so growing a fleet
//! keeps the existing agents' parameters fixed, and paired comparisons
//! across fleet sizes share their common agents.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::effort::EffortCostModel;
use crate::rng;

const TAG_POPULATION: u64 = 0x706f_7075;

#[derive(Debug, Clone)]
pub struct GeneratedPopulation {
    pub models: Vec<EffortCostModel>,
    /// How many max-cost draws were clipped at the floor.
    pub clipped: u64,
}

pub fn generate_population(
    n: usize,
    eta_max: u32,
    cost_floor: f64,
    seed: u64,
) -> GeneratedPopulation {
    let mut models = Vec::with_capacity(n);
    let mut clipped = 0;
    for agent in 0..n {
        let mut r = rng::substream(seed, &[TAG_POPULATION, agent as u64]);
        let best_precision: f64 = r.random_range(0.0001..0.01);
        let mean = if r.random_range(0.0..1.0) < 0.5 {
            50.0
        } else {
            100.0
        };
        let mut max_cost: f64 = Normal::new(mean, 10.0).unwrap().sample(&mut r);
        if max_cost < cost_floor {
            max_cost = cost_floor;
            clipped += 1;
        }
        // eta_max steps reaching (best_precision, max_cost).
        let unit_variance = eta_max as f64 / best_precision;
        let unit_cost = max_cost / eta_max as f64;
        models.push(
            EffortCostModel::discrete_linear(unit_variance, unit_cost, eta_max)
                .expect("generated parameters are in range"),
        );
    }
    GeneratedPopulation { models, clipped }
}
