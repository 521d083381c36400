//! Scheduling policies: the online gradient-ascent policy and four
//! per-slot heuristics (dominant-resource fairness, proportional fairness,
//! bin-packing, spreading), all behind one `Policy` trait.
//!
//! The gradient policy is the only stateful one: it carries its allocation
//! forward and refines it from observed arrivals. The heuristics allocate
//! from scratch each slot; jobs occupy resources only for the slot in which
//! they arrive.

use thiserror::Error;

use crate::model::{Allocation, BipartiteGraph};
use crate::projection::{project, ProjectionError};
use crate::regret::diameter_bound;
use crate::reward::{weighted_gradient, ArrivalVector, RewardModel};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("gradient contains non-finite entries")]
    NonFiniteGradient,
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("unknown policy {0:?} (expected oga|drf|fairness|binpacking|spreading)")]
    UnknownPolicy(String),
}

/// How the gradient policy's step size evolves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRateSchedule {
    /// Multiplicative decay per slot, starting at `eta0`.
    Geometric { eta0: f64, decay: f64 },
    /// Worst-case rate: feasible-set diameter over gradient norm times
    /// the square root of the horizon.
    Theoretical { horizon: usize },
}

const GRAD_NORM_FLOOR: f64 = 1e-12;

/// Step size for the upcoming slot.
pub fn next_learning_rate(
    schedule: &LearningRateSchedule,
    eta_t: f64,
    grad_norm: f64,
    diam_y: f64,
) -> f64 {
    match *schedule {
        LearningRateSchedule::Geometric { decay, .. } => decay * eta_t,
        LearningRateSchedule::Theoretical { horizon } => {
            diam_y / (grad_norm.max(GRAD_NORM_FLOOR) * (horizon as f64).sqrt())
        }
    }
}

/// A decision-maker mapping each slot's arrivals to a feasible allocation.
///
/// `decide` is called once per slot and must return the allocation used for
/// that slot's reward.
pub trait Policy {
    fn name(&self) -> &'static str;
    fn decide(
        &mut self,
        model: &RewardModel,
        graph: &BipartiteGraph,
        x: &ArrivalVector,
    ) -> Result<Allocation, PolicyError>;
}

/// Online gradient ascent: keep a running allocation, step along the reward
/// gradient of the observed arrivals, project back onto the feasible set.
///
/// The decision for slot `t` is the allocation carried in from slot `t - 1`;
/// arrivals at `t` only influence later slots, as required by the online
/// protocol.
pub struct OgaPolicy {
    current: Allocation,
    eta: f64,
    schedule: LearningRateSchedule,
    diam_y: f64,
    step_count: usize,
}

impl OgaPolicy {
    /// Start from the all-zero allocation (feasible and unbiased).
    pub fn new(graph: &BipartiteGraph, schedule: LearningRateSchedule) -> Self {
        let eta = match schedule {
            LearningRateSchedule::Geometric { eta0, .. } => eta0,
            LearningRateSchedule::Theoretical { .. } => 0.0,
        };
        Self {
            current: Allocation::zeros(graph),
            eta,
            schedule,
            diam_y: diameter_bound(graph),
            step_count: 0,
        }
    }

    pub fn current(&self) -> &Allocation {
        &self.current
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Advance the carried allocation by one gradient step and projection,
    /// then update the step size per the schedule. Returns the new
    /// allocation.
    pub fn step(
        &mut self,
        model: &RewardModel,
        graph: &BipartiteGraph,
        x: &ArrivalVector,
    ) -> Result<&Allocation, PolicyError> {
        let weights: Vec<f64> = x.counts.iter().map(|&c| c as f64).collect();
        let grad = weighted_gradient(model, graph, &weights, &self.current);
        if grad.values().iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteGradient);
        }
        let grad_norm = grad.norm();
        let eta = match self.schedule {
            LearningRateSchedule::Geometric { .. } => self.eta,
            LearningRateSchedule::Theoretical { .. } => {
                next_learning_rate(&self.schedule, self.eta, grad_norm, self.diam_y)
            }
        };
        let stepped = Allocation::from_values(
            graph,
            self.current
                .values()
                .iter()
                .zip(grad.values())
                .map(|(y, g)| y + eta * g)
                .collect(),
        )
        .expect("gradient shares the allocation layout");
        self.current = project(graph, &stepped)?;
        self.eta = match self.schedule {
            LearningRateSchedule::Geometric { .. } => {
                next_learning_rate(&self.schedule, eta, grad_norm, self.diam_y)
            }
            LearningRateSchedule::Theoretical { .. } => eta,
        };
        self.step_count += 1;
        Ok(&self.current)
    }
}

impl Policy for OgaPolicy {
    fn name(&self) -> &'static str {
        "oga"
    }

    fn decide(
        &mut self,
        model: &RewardModel,
        graph: &BipartiteGraph,
        x: &ArrivalVector,
    ) -> Result<Allocation, PolicyError> {
        let decision = self.current.clone();
        self.step(model, graph, x)?;
        Ok(decision)
    }
}

fn arrived_ports(x: &ArrivalVector) -> impl Iterator<Item = usize> + '_ {
    x.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(l, _)| l)
}

/// Remaining capacity per `(instance, resource)`, updated as greedy
/// allocators hand quantities out.
struct CapacityLedger {
    remaining: Vec<Vec<f64>>,
}

impl CapacityLedger {
    fn new(graph: &BipartiteGraph) -> Self {
        Self {
            remaining: graph.instances().iter().map(|i| i.capacities.clone()).collect(),
        }
    }

    /// Grant up to `want` of resource `k` on instance `r`.
    fn take(&mut self, r: usize, k: usize, want: f64) -> f64 {
        let granted = want.min(self.remaining[r][k]).max(0.0);
        self.remaining[r][k] -= granted;
        granted
    }

    fn total_remaining(&self, r: usize) -> f64 {
        self.remaining[r].iter().sum()
    }
}

/// Give one port its requirements greedily from `instances`, in the order
/// given, respecting remaining capacities.
fn greedy_fill(
    graph: &BipartiteGraph,
    ledger: &mut CapacityLedger,
    y: &mut Allocation,
    l: usize,
    instance_order: &[(usize, usize)], // (channel index, instance pos)
) {
    let mut want = graph.port(l).requirements.clone();
    for &(c, r) in instance_order {
        let mut satisfied = true;
        for (k, rest) in want.iter_mut().enumerate() {
            if *rest > 0.0 {
                let got = ledger.take(r, k, *rest);
                if got > 0.0 {
                    y.add(c, k, got);
                    *rest -= got;
                }
            }
            if *rest > 0.0 {
                satisfied = false;
            }
        }
        if satisfied {
            break;
        }
    }
}

/// Dominant-resource-fairness allocation: arrived ports are served in
/// ascending order of their dominant share `max_k a_l^k / sum_{r} c_r^k`,
/// each grabbing greedily from its neighbors with the most remaining
/// capacity.
pub fn drf_allocate(graph: &BipartiteGraph, x: &ArrivalVector) -> Allocation {
    let k_count = graph.resource_count();
    let mut shares: Vec<(f64, usize)> = arrived_ports(x)
        .map(|l| {
            let mut share = 0.0f64;
            for k in 0..k_count {
                let a = graph.port(l).requirements[k];
                if a == 0.0 {
                    continue;
                }
                let pool: f64 =
                    graph.instances_of_port(l).map(|r| graph.instance(r).capacities[k]).sum();
                share = share.max(if pool > 0.0 { a / pool } else { f64::INFINITY });
            }
            (share, l)
        })
        .collect();
    shares.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut ledger = CapacityLedger::new(graph);
    let mut y = Allocation::zeros(graph);
    for (_, l) in shares {
        let mut order: Vec<(usize, usize)> = graph
            .channels_of_port(l)
            .iter()
            .map(|&c| (c, graph.channel(c).1))
            .collect();
        // Most remaining capacity first, ties by instance position.
        order.sort_by(|&(_, ra), &(_, rb)| {
            ledger
                .total_remaining(rb)
                .partial_cmp(&ledger.total_remaining(ra))
                .unwrap()
                .then(ra.cmp(&rb))
        });
        greedy_fill(graph, &mut ledger, &mut y, l, &order);
    }
    y
}

/// Proportional-share allocation: per `(instance, resource)`, every arrived
/// neighbor port receives capacity in proportion to its requirement, capped
/// by that requirement. Ports that yielded no job get nothing.
pub fn fairness_allocate(graph: &BipartiteGraph, x: &ArrivalVector) -> Allocation {
    let k_count = graph.resource_count();
    let mut y = Allocation::zeros(graph);
    for r in 0..graph.num_instances() {
        for k in 0..k_count {
            let denom: f64 = graph
                .channels_of_instance(r)
                .iter()
                .filter(|&&c| x.counts[graph.channel(c).0] > 0)
                .map(|&c| graph.port(graph.channel(c).0).requirements[k])
                .sum();
            if denom <= 0.0 {
                continue;
            }
            let cap = graph.instance(r).capacities[k];
            for &c in graph.channels_of_instance(r) {
                let l = graph.channel(c).0;
                if x.counts[l] == 0 {
                    continue;
                }
                let a = graph.port(l).requirements[k];
                y.set(c, k, a.min(cap * a / denom));
            }
        }
    }
    y
}

/// Mean utilization of an instance under the slot's partial assignment.
/// Resources with zero capacity are skipped.
fn utilization(graph: &BipartiteGraph, ledger: &CapacityLedger, r: usize) -> f64 {
    let caps = &graph.instance(r).capacities;
    let mut total = 0.0;
    let mut counted = 0;
    for (k, &c) in caps.iter().enumerate() {
        if c > 0.0 {
            total += (c - ledger.remaining[r][k]) / c;
            counted += 1;
        }
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

fn scored_greedy(graph: &BipartiteGraph, x: &ArrivalVector, prefer_packed: bool) -> Allocation {
    let mut ledger = CapacityLedger::new(graph);
    let mut y = Allocation::zeros(graph);
    for l in arrived_ports(x) {
        let mut order: Vec<(usize, usize)> = graph
            .channels_of_port(l)
            .iter()
            .map(|&c| (c, graph.channel(c).1))
            .collect();
        order.sort_by(|&(_, ra), &(_, rb)| {
            let ua = utilization(graph, &ledger, ra);
            let ub = utilization(graph, &ledger, rb);
            let primary = if prefer_packed {
                ub.partial_cmp(&ua).unwrap()
            } else {
                ua.partial_cmp(&ub).unwrap()
            };
            primary.then(ra.cmp(&rb))
        });
        greedy_fill(graph, &mut ledger, &mut y, l, &order);
    }
    y
}

/// Bin-packing heuristic: steer arrivals toward the most utilized instances.
pub fn binpacking_allocate(graph: &BipartiteGraph, x: &ArrivalVector) -> Allocation {
    scored_greedy(graph, x, true)
}

/// Spreading heuristic: steer arrivals toward the least utilized instances.
pub fn spreading_allocate(graph: &BipartiteGraph, x: &ArrivalVector) -> Allocation {
    scored_greedy(graph, x, false)
}

macro_rules! stateless_policy {
    ($name:ident, $label:literal, $func:path) => {
        pub struct $name;

        impl Policy for $name {
            fn name(&self) -> &'static str {
                $label
            }

            fn decide(
                &mut self,
                _model: &RewardModel,
                graph: &BipartiteGraph,
                x: &ArrivalVector,
            ) -> Result<Allocation, PolicyError> {
                Ok($func(graph, x))
            }
        }
    };
}

stateless_policy!(DrfPolicy, "drf", drf_allocate);
stateless_policy!(FairnessPolicy, "fairness", fairness_allocate);
stateless_policy!(BinPackingPolicy, "binpacking", binpacking_allocate);
stateless_policy!(SpreadingPolicy, "spreading", spreading_allocate);

pub const POLICY_NAMES: [&str; 5] = ["oga", "drf", "fairness", "binpacking", "spreading"];

/// Construct a policy by its CLI name.
pub fn build_policy(
    name: &str,
    graph: &BipartiteGraph,
    schedule: LearningRateSchedule,
) -> Result<Box<dyn Policy>, PolicyError> {
    match name {
        "oga" => Ok(Box::new(OgaPolicy::new(graph, schedule))),
        "drf" => Ok(Box::new(DrfPolicy)),
        "fairness" => Ok(Box::new(FairnessPolicy)),
        "binpacking" => Ok(Box::new(BinPackingPolicy)),
        "spreading" => Ok(Box::new(SpreadingPolicy)),
        other => Err(PolicyError::UnknownPolicy(other.to_string())),
    }
}
