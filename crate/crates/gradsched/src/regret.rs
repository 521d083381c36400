//! Offline stationary optimum, empirical regret, and the analytic regret
//! bound.
//!
//! The benchmark for regret is the best *fixed* allocation chosen in
//! hindsight for a whole arrival trajectory. Because the slot rewards share
//! one decision variable, the full-horizon objective collapses to a single
//! weighted slot reward whose port weights are the arrival totals; the
//! optimum is then found by projected gradient ascent on that concave
//! function. A brute-force grid search doubles as the solver's referee on
//! problems small enough to enumerate.

use thiserror::Error;

use crate::model::{Allocation, BipartiteGraph};
use crate::projection::{project, ProjectionError};
use crate::reward::{weighted_gradient, weighted_reward, ArrivalVector, RewardModel};

#[derive(Debug, Error)]
pub enum RegretError {
    #[error("per-slot rewards cover {rewards} slots, trajectory has {slots}")]
    LengthMismatch { rewards: usize, slots: usize },
    #[error("grid search limited to {limit} coordinates, problem has {got}")]
    TooManyCoordinates { got: usize, limit: usize },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

/// Largest distance between two feasible allocations, bounded through the
/// box and capacity constraints: `sqrt(2 * sum_k a_bar^k * sum_r c_r^k)`.
pub fn diameter_bound(graph: &BipartiteGraph) -> f64 {
    let k_count = graph.resource_count();
    let mut total = 0.0;
    for k in 0..k_count {
        let a_bar = graph
            .ports()
            .iter()
            .map(|p| p.requirements[k])
            .fold(0.0f64, f64::max);
        let cap_sum: f64 = graph.instances().iter().map(|i| i.capacities[k]).sum();
        total += a_bar * cap_sum;
    }
    (2.0 * total).sqrt()
}

/// Scale inputs of the analytic regret bound.
#[derive(Debug, Clone)]
pub struct RegretBoundInputs {
    /// Per resource: largest requirement over ports.
    pub a_bar: Vec<f64>,
    /// Largest overhead coefficient.
    pub beta_star: f64,
    /// Per instance: steepest utility slope over resources.
    pub varpi_star: Vec<f64>,
    /// Per instance capacity vectors.
    pub capacities: Vec<Vec<f64>>,
    /// Instance endpoint of every channel.
    pub channel_instances: Vec<usize>,
    pub resource_count: usize,
    pub horizon: usize,
}

impl RegretBoundInputs {
    pub fn from_scenario(graph: &BipartiteGraph, model: &RewardModel, horizon: usize) -> Self {
        let k_count = graph.resource_count();
        let a_bar = (0..k_count)
            .map(|k| {
                graph
                    .ports()
                    .iter()
                    .map(|p| p.requirements[k])
                    .fold(0.0f64, f64::max)
            })
            .collect();
        let beta_star = model.betas().iter().cloned().fold(0.0f64, f64::max);
        let varpi_star = (0..graph.num_instances())
            .map(|r| model.max_grad_at_zero(r))
            .collect();
        Self {
            a_bar,
            beta_star,
            varpi_star,
            capacities: graph.instances().iter().map(|i| i.capacities.clone()).collect(),
            channel_instances: graph.channels().iter().map(|&(_, r)| r).collect(),
            resource_count: k_count,
            horizon,
        }
    }
}

/// The analytic bound and its pieces.
#[derive(Debug, Clone, Copy)]
pub struct RegretBound {
    /// Full bound: `sqrt(2 T sum_k sum_r a_bar c) * gradient_bound`.
    pub total: f64,
    /// Graph-scale factor: the bound divided by `sqrt(T)`.
    pub h_g: f64,
    /// Diameter bound on the feasible set.
    pub diam_bound: f64,
    /// Bound on the gradient norm of the slot reward.
    pub grad_bound: f64,
}

pub fn regret_upper_bound(inputs: &RegretBoundInputs) -> RegretBound {
    let mut cap_mass = 0.0;
    for caps in &inputs.capacities {
        for (&a_bar, &cap) in inputs.a_bar.iter().zip(caps) {
            cap_mass += a_bar * cap;
        }
    }
    let diam_bound = (2.0 * cap_mass).sqrt();
    let k = inputs.resource_count as f64;
    let grad_sq: f64 = inputs
        .channel_instances
        .iter()
        .map(|&r| {
            inputs.beta_star * inputs.beta_star
                + k * inputs.varpi_star[r] * inputs.varpi_star[r]
        })
        .sum();
    let grad_bound = grad_sq.sqrt();
    let h_g = diam_bound * grad_bound;
    RegretBound {
        total: h_g * (inputs.horizon as f64).sqrt(),
        h_g,
        diam_bound,
        grad_bound,
    }
}

/// Per-port arrival totals over a trajectory; the weights of the collapsed
/// full-horizon objective.
pub fn arrival_totals(trajectory: &[ArrivalVector]) -> Vec<f64> {
    let n = trajectory.first().map_or(0, |x| x.counts.len());
    let mut totals = vec![0.0; n];
    for x in trajectory {
        for (w, &c) in totals.iter_mut().zip(&x.counts) {
            *w += c as f64;
        }
    }
    totals
}

/// Result of the offline solver.
#[derive(Debug, Clone)]
pub struct OfflineSolution {
    pub allocation: Allocation,
    /// Cumulative reward of the stationary allocation over the trajectory.
    pub objective: f64,
    /// False when the iteration budget ran out before the movement tolerance
    /// was reached; the allocation is still the best iterate found.
    pub converged: bool,
    pub iterations: usize,
    /// Objective value after every accepted iterate; non-decreasing.
    pub objective_trace: Vec<f64>,
}

/// Best stationary allocation in hindsight for a trajectory.
pub fn offline_optimum(
    trajectory: &[ArrivalVector],
    model: &RewardModel,
    graph: &BipartiteGraph,
    budget: usize,
    tol: f64,
) -> Result<OfflineSolution, RegretError> {
    offline_optimum_weighted(&arrival_totals(trajectory), model, graph, budget, tol)
}

/// Projected gradient ascent on the weighted slot reward. Step sizes follow
/// `1 / (L sqrt(iter))` with halving whenever a step would not improve the
/// objective, which keeps the objective trace monotone.
pub fn offline_optimum_weighted(
    weights: &[f64],
    model: &RewardModel,
    graph: &BipartiteGraph,
    budget: usize,
    tol: f64,
) -> Result<OfflineSolution, RegretError> {
    let mut y = Allocation::zeros(graph);
    let mut objective = weighted_reward(model, graph, weights, &y).total;
    let mut trace = vec![objective];

    let grad_scale = weighted_gradient(model, graph, weights, &y).norm().max(1e-12);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=budget {
        iterations = it;
        let grad = weighted_gradient(model, graph, weights, &y);
        let mut step = 1.0 / (grad_scale * (it as f64).sqrt());
        let mut accepted = None;
        for _ in 0..60 {
            let cand_values: Vec<f64> = y
                .values()
                .iter()
                .zip(grad.values())
                .map(|(v, g)| v + step * g)
                .collect();
            let cand = project(graph, &Allocation::from_values(graph, cand_values).unwrap())?;
            let cand_obj = weighted_reward(model, graph, weights, &cand).total;
            if cand_obj >= objective {
                accepted = Some((cand, cand_obj));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cand_obj)) = accepted else {
            // No improving step exists at any scale: stationary point.
            converged = true;
            break;
        };
        let movement = y
            .values()
            .iter()
            .zip(cand.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        y = cand;
        objective = cand_obj;
        trace.push(objective);
        if movement < tol {
            converged = true;
            break;
        }
    }
    Ok(OfflineSolution {
        allocation: y,
        objective,
        converged,
        iterations,
        objective_trace: trace,
    })
}

/// Hindsight-relative regret: optimal cumulative reward minus the policy's.
pub fn empirical_regret(
    trajectory: &[ArrivalVector],
    per_slot_rewards: &[f64],
    q_star: f64,
) -> Result<f64, RegretError> {
    if trajectory.len() != per_slot_rewards.len() {
        return Err(RegretError::LengthMismatch {
            rewards: per_slot_rewards.len(),
            slots: trajectory.len(),
        });
    }
    Ok(q_star - per_slot_rewards.iter().sum::<f64>())
}

/// Coordinate budget of the exhaustive grid search.
pub const GRID_MAX_COORDS: usize = 4;

/// Exhaustive reference for the offline optimum: enumerate the feasible set
/// coordinate-wise at the given resolution (box endpoints included) and
/// return the best grid point. Exponential in the coordinate count.
pub fn grid_search_optimum(
    weights: &[f64],
    model: &RewardModel,
    graph: &BipartiteGraph,
    resolution: f64,
) -> Result<(Allocation, f64), RegretError> {
    let coords = graph.num_channels() * graph.resource_count();
    if coords > GRID_MAX_COORDS {
        return Err(RegretError::TooManyCoordinates { got: coords, limit: GRID_MAX_COORDS });
    }
    // Per-coordinate grids: 0, res, 2 res, ..., cap.
    let mut grids: Vec<Vec<f64>> = Vec::with_capacity(coords);
    for c in 0..graph.num_channels() {
        let (l, _) = graph.channel(c);
        for k in 0..graph.resource_count() {
            let cap = graph.port(l).requirements[k];
            let mut axis: Vec<f64> = (0..)
                .map(|i| i as f64 * resolution)
                .take_while(|&v| v < cap)
                .collect();
            axis.push(cap);
            grids.push(axis);
        }
    }

    let mut best_values = vec![0.0; coords];
    let mut best_obj = f64::NEG_INFINITY;
    let mut cursor = vec![0usize; coords];
    let mut values = vec![0.0; coords];
    loop {
        for (i, &ci) in cursor.iter().enumerate() {
            values[i] = grids[i][ci];
        }
        let y = Allocation::from_values(graph, values.clone()).unwrap();
        if crate::model::is_feasible(graph, &y, 1e-12).unwrap() {
            let obj = weighted_reward(model, graph, weights, &y).total;
            if obj > best_obj {
                best_obj = obj;
                best_values.copy_from_slice(&values);
            }
        }
        // Odometer.
        let mut pos = 0;
        loop {
            if pos == coords {
                let alloc = Allocation::from_values(graph, best_values).unwrap();
                return Ok((alloc, best_obj));
            }
            cursor[pos] += 1;
            if cursor[pos] < grids[pos].len() {
                break;
            }
            cursor[pos] = 0;
            pos += 1;
        }
    }
}
