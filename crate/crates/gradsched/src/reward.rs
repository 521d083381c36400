//! Reward evaluation: concave per-channel computation gains minus the
//! dominant weighted communication overhead, summed over ports.
//!
//! The gain side is linearly separable: each `(instance, resource)` pair has
//! its own zero-startup concave utility applied to the quantity flowing
//! through the channel. The overhead side picks, per port, the resource type
//! with the largest weighted total allocation and charges it as a penalty.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Allocation, BipartiteGraph};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("utility evaluated at negative input {0}")]
    NegativeInput(f64),
    #[error("utility coefficient must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("overhead coefficient out of [0, 1]: {0}")]
    BetaOutOfRange(f64),
    #[error("port {0} has no channels")]
    PortWithoutChannels(usize),
    #[error("model covers {got} instances, graph has {expected}")]
    ModelArity { got: usize, expected: usize },
    #[error("arrival count {count} for port {port} exceeds replica bound {bound}")]
    TooManyArrivals { port: usize, count: u32, bound: usize },
}

/// Shape family of a utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtilityKind {
    Linear,
    Log,
    Reciprocal,
    Poly,
}

impl UtilityKind {
    pub const ALL: [UtilityKind; 4] =
        [UtilityKind::Linear, UtilityKind::Log, UtilityKind::Reciprocal, UtilityKind::Poly];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(UtilityKind::Linear),
            "log" => Some(UtilityKind::Log),
            "reciprocal" => Some(UtilityKind::Reciprocal),
            "poly" => Some(UtilityKind::Poly),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UtilityKind::Linear => "linear",
            UtilityKind::Log => "log",
            UtilityKind::Reciprocal => "reciprocal",
            UtilityKind::Poly => "poly",
        }
    }
}

/// One zero-startup concave utility `f(y)` with coefficient `alpha`.
///
/// All four kinds satisfy `f(0) = 0` and have a finite derivative at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    pub alpha: f64,
}

impl UtilitySpec {
    pub fn new(kind: UtilityKind, alpha: f64) -> Result<Self, RewardError> {
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(RewardError::NonPositiveAlpha(alpha));
        }
        Ok(Self { kind, alpha })
    }

    pub fn value(&self, y: f64) -> Result<f64, RewardError> {
        if y < 0.0 {
            return Err(RewardError::NegativeInput(y));
        }
        Ok(self.value_unchecked(y))
    }

    pub fn grad(&self, y: f64) -> Result<f64, RewardError> {
        if y < 0.0 {
            return Err(RewardError::NegativeInput(y));
        }
        Ok(self.grad_unchecked(y))
    }

    /// Derivative at zero, the steepest slope the utility ever attains.
    pub fn grad_at_zero(&self) -> f64 {
        self.grad_unchecked(0.0)
    }

    #[inline]
    fn value_unchecked(&self, y: f64) -> f64 {
        let a = self.alpha;
        match self.kind {
            UtilityKind::Linear => a * y,
            UtilityKind::Log => a * (y + 1.0).ln(),
            UtilityKind::Reciprocal => 1.0 / a - 1.0 / (y + a),
            UtilityKind::Poly => a * (y + 1.0).sqrt() - a,
        }
    }

    #[inline]
    fn grad_unchecked(&self, y: f64) -> f64 {
        let a = self.alpha;
        match self.kind {
            UtilityKind::Linear => a,
            UtilityKind::Log => a / (y + 1.0),
            UtilityKind::Reciprocal => 1.0 / ((y + a) * (y + a)),
            UtilityKind::Poly => a / (2.0 * (y + 1.0).sqrt()),
        }
    }

    /// Evaluate with small negative inputs (projection round-off) clamped to
    /// zero. Used on allocations already known feasible within tolerance.
    #[inline]
    fn value_clamped(&self, y: f64) -> f64 {
        self.value_unchecked(y.max(0.0))
    }

    #[inline]
    fn grad_clamped(&self, y: f64) -> f64 {
        self.grad_unchecked(y.max(0.0))
    }
}

/// Per-`(instance, resource)` utilities plus the overhead coefficients.
#[derive(Debug, Clone)]
pub struct RewardModel {
    /// Dense, indexed `instance * K + resource`.
    utilities: Vec<UtilitySpec>,
    betas: Vec<f64>,
    resources: usize,
}

impl RewardModel {
    pub fn new(
        graph: &BipartiteGraph,
        utilities: Vec<UtilitySpec>,
        betas: Vec<f64>,
    ) -> Result<Self, RewardError> {
        let k = graph.resource_count();
        let expected = graph.num_instances() * k;
        if utilities.len() != expected {
            return Err(RewardError::ModelArity { got: utilities.len(), expected });
        }
        if betas.len() != k {
            return Err(RewardError::ModelArity { got: betas.len(), expected: k });
        }
        for &b in &betas {
            if !(0.0..=1.0).contains(&b) {
                return Err(RewardError::BetaOutOfRange(b));
            }
        }
        Ok(Self { utilities, betas, resources: k })
    }

    /// Same utility everywhere; handy in tests.
    pub fn uniform(
        graph: &BipartiteGraph,
        spec: UtilitySpec,
        betas: Vec<f64>,
    ) -> Result<Self, RewardError> {
        let n = graph.num_instances() * graph.resource_count();
        Self::new(graph, vec![spec; n], betas)
    }

    #[inline]
    pub fn utility(&self, instance: usize, resource: usize) -> &UtilitySpec {
        &self.utilities[instance * self.resources + resource]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn beta(&self, resource: usize) -> f64 {
        self.betas[resource]
    }

    /// Steepest slope over resources for one instance.
    pub fn max_grad_at_zero(&self, instance: usize) -> f64 {
        (0..self.resources)
            .map(|k| self.utility(instance, k).grad_at_zero())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Job arrivals for one slot, one count per port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrivalVector {
    pub counts: Vec<u32>,
}

impl ArrivalVector {
    pub fn zeros(n: usize) -> Self {
        Self { counts: vec![0; n] }
    }

    pub fn is_binary(&self) -> bool {
        self.counts.iter().all(|&c| c <= 1)
    }
}

/// Reward of one slot split into its two sides. `total = gain - penalty`
/// holds exactly by construction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub total: f64,
    pub gain: f64,
    pub penalty: f64,
}

/// Weighted per-resource allocation mass of port `l`: `beta_k * sum_r y`.
fn weighted_mass(model: &RewardModel, graph: &BipartiteGraph, y: &Allocation, l: usize, k: usize) -> f64 {
    let sum: f64 = graph.channels_of_port(l).iter().map(|&c| y.get(c, k).max(0.0)).sum();
    model.beta(k) * sum
}

/// Resource whose weighted allocation mass dominates for port `l`.
/// Ties break toward the smallest index so the gradient stays deterministic.
pub fn dominant_overhead_index(
    model: &RewardModel,
    graph: &BipartiteGraph,
    y: &Allocation,
    l: usize,
) -> Result<usize, RewardError> {
    if graph.channels_of_port(l).is_empty() {
        return Err(RewardError::PortWithoutChannels(l));
    }
    let mut best = 0;
    let mut best_val = weighted_mass(model, graph, y, l, 0);
    for k in 1..graph.resource_count() {
        let v = weighted_mass(model, graph, y, l, k);
        if v > best_val {
            best = k;
            best_val = v;
        }
    }
    Ok(best)
}

/// Gain and penalty of port `l` for a unit arrival (the bracketed term of the
/// per-port reward).
fn unit_port_terms(
    model: &RewardModel,
    graph: &BipartiteGraph,
    y: &Allocation,
    l: usize,
) -> (f64, f64) {
    let k_count = graph.resource_count();
    let mut gain = 0.0;
    let mut penalty = f64::NEG_INFINITY;
    for k in 0..k_count {
        let mut mass = 0.0;
        for &c in graph.channels_of_port(l) {
            let (_, r) = graph.channel(c);
            let v = y.get(c, k);
            gain += model.utility(r, k).value_clamped(v);
            mass += v.max(0.0);
        }
        penalty = penalty.max(model.beta(k) * mass);
    }
    (gain, penalty.max(0.0))
}

/// Reward of port `l` given its arrival count.
pub fn port_reward(
    model: &RewardModel,
    graph: &BipartiteGraph,
    x_l: u32,
    y: &Allocation,
    l: usize,
) -> f64 {
    if x_l == 0 {
        return 0.0;
    }
    let (gain, penalty) = unit_port_terms(model, graph, y, l);
    x_l as f64 * (gain - penalty)
}

/// Slot reward summed over ports, with real-valued port weights. Arrival
/// vectors are the weight-1 case; the offline optimum uses arrival totals.
pub fn weighted_reward(
    model: &RewardModel,
    graph: &BipartiteGraph,
    weights: &[f64],
    y: &Allocation,
) -> RewardBreakdown {
    debug_assert_eq!(weights.len(), graph.num_ports());
    let mut gain = 0.0;
    let mut penalty = 0.0;
    for (l, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (g, p) = unit_port_terms(model, graph, y, l);
        gain += w * g;
        penalty += w * p;
    }
    RewardBreakdown { total: gain - penalty, gain, penalty }
}

/// Slot reward for an arrival vector, with its gain/penalty decomposition.
pub fn total_reward(
    model: &RewardModel,
    graph: &BipartiteGraph,
    x: &ArrivalVector,
    y: &Allocation,
) -> RewardBreakdown {
    let weights: Vec<f64> = x.counts.iter().map(|&c| c as f64).collect();
    weighted_reward(model, graph, &weights, y)
}

/// Analytic reward gradient with real-valued port weights.
///
/// Per channel `(l, r)` and resource `k` the entry is
/// `w_l * (f'(y) - beta_k when k is the dominant index of l)`.
pub fn weighted_gradient(
    model: &RewardModel,
    graph: &BipartiteGraph,
    weights: &[f64],
    y: &Allocation,
) -> Allocation {
    debug_assert_eq!(weights.len(), graph.num_ports());
    let mut grad = Allocation::zeros(graph);
    for (l, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let k_star = dominant_overhead_index(model, graph, y, l)
            .expect("validated graphs have no isolated ports");
        for &c in graph.channels_of_port(l) {
            let (_, r) = graph.channel(c);
            for k in 0..graph.resource_count() {
                let mut g = model.utility(r, k).grad_clamped(y.get(c, k));
                if k == k_star {
                    g -= model.beta(k);
                }
                grad.set(c, k, w * g);
            }
        }
    }
    grad
}

/// Analytic gradient of the slot reward at `(x, y)`.
pub fn reward_gradient(
    model: &RewardModel,
    graph: &BipartiteGraph,
    x: &ArrivalVector,
    y: &Allocation,
) -> Allocation {
    let weights: Vec<f64> = x.counts.iter().map(|&c| c as f64).collect();
    weighted_gradient(model, graph, &weights, y)
}

/// Port reward when up to `J_l = y_multi.len()` jobs can arrive per slot.
/// Replica `j` (0-based) contributes only while `j < x_l`.
pub fn port_reward_multi(
    model: &RewardModel,
    graph: &BipartiteGraph,
    x_l: u32,
    y_multi: &[Allocation],
    l: usize,
) -> Result<f64, RewardError> {
    if x_l as usize > y_multi.len() {
        return Err(RewardError::TooManyArrivals {
            port: l,
            count: x_l,
            bound: y_multi.len(),
        });
    }
    let mut total = 0.0;
    for y in y_multi.iter().take(x_l as usize) {
        let (gain, penalty) = unit_port_terms(model, graph, y, l);
        total += gain - penalty;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        complete_channels, BipartiteGraph, GraphSpec, InstanceSpec, PortSpec, ResourceCatalog,
    };

    fn linear_spec(alpha: f64) -> UtilitySpec {
        UtilitySpec::new(UtilityKind::Linear, alpha).unwrap()
    }

    /// 1 port, 1 instance, K = 2.
    fn one_channel_graph() -> BipartiteGraph {
        BipartiteGraph::from_spec(GraphSpec {
            catalog: ResourceCatalog::with_count(2),
            ports: vec![PortSpec { id: 0, requirements: vec![5.0, 5.0] }],
            instances: vec![InstanceSpec { id: 0, capacities: vec![5.0, 5.0] }],
            channels: vec![(0, 0)],
        })
        .unwrap()
    }

    fn two_port_graph() -> BipartiteGraph {
        let ports = vec![
            PortSpec { id: 0, requirements: vec![2.0, 2.0] },
            PortSpec { id: 1, requirements: vec![2.0, 2.0] },
        ];
        let instances = vec![
            InstanceSpec { id: 0, capacities: vec![4.0, 4.0] },
            InstanceSpec { id: 1, capacities: vec![4.0, 4.0] },
        ];
        let channels = complete_channels(&ports, &instances);
        BipartiteGraph::from_spec(GraphSpec {
            catalog: ResourceCatalog::with_count(2),
            ports,
            instances,
            channels,
        })
        .unwrap()
    }

    #[test]
    fn utility_values_match_closed_forms() {
        let log1 = UtilitySpec::new(UtilityKind::Log, 1.0).unwrap();
        assert_eq!(log1.value(0.0).unwrap(), 0.0);
        let lin = linear_spec(1.5);
        assert_eq!(lin.value(2.0).unwrap(), 3.0);
        let rec = UtilitySpec::new(UtilityKind::Reciprocal, 2.0).unwrap();
        assert!((rec.value(2.0).unwrap() - 0.25).abs() < 1e-15);
        // Zero-startup holds for every kind.
        for kind in UtilityKind::ALL {
            let u = UtilitySpec::new(kind, 1.3).unwrap();
            assert_eq!(u.value(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn utility_grads_match_closed_forms() {
        let lin = linear_spec(1.2);
        assert_eq!(lin.grad(7.0).unwrap(), 1.2);
        let log1 = UtilitySpec::new(UtilityKind::Log, 1.0).unwrap();
        assert_eq!(log1.grad(0.0).unwrap(), 1.0);
        let poly1 = UtilitySpec::new(UtilityKind::Poly, 1.0).unwrap();
        assert!((poly1.grad(3.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn utility_grad_matches_finite_differences() {
        let h = 1e-6;
        let key = crate::rng::DrawKey::new(4, crate::rng::Stream::Alpha);
        for (i, kind) in UtilityKind::ALL.into_iter().enumerate() {
            for case in 0..50u64 {
                let alpha = key.range(0.5, 2.5, case, i as u64);
                let y = key.range(0.1, 4.0, case, 100 + i as u64);
                let u = UtilitySpec::new(kind, alpha).unwrap();
                let fd = (u.value(y + h).unwrap() - u.value(y - h).unwrap()) / (2.0 * h);
                let an = u.grad(y).unwrap();
                assert!(
                    (fd - an).abs() <= 1e-5 * an.abs().max(1.0),
                    "{kind:?} alpha={alpha} y={y}: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn negative_input_is_rejected() {
        let u = linear_spec(1.0);
        assert!(matches!(u.value(-0.5), Err(RewardError::NegativeInput(_))));
        assert!(matches!(u.grad(-0.5), Err(RewardError::NegativeInput(_))));
    }

    #[test]
    fn dominant_index_breaks_ties_low() {
        let g = one_channel_graph();
        let model = RewardModel::uniform(&g, linear_spec(1.0), vec![0.5, 0.5]).unwrap();
        let y = Allocation::from_values(&g, vec![2.0, 2.0]).unwrap();
        assert_eq!(dominant_overhead_index(&model, &g, &y, 0).unwrap(), 0);
        // All-zero allocation: every product is zero, tie rule again.
        let zero = Allocation::zeros(&g);
        assert_eq!(dominant_overhead_index(&model, &g, &zero, 0).unwrap(), 0);
    }

    #[test]
    fn dominant_index_weighs_mass_by_beta() {
        let g = one_channel_graph();
        let model = RewardModel::uniform(&g, linear_spec(1.0), vec![0.3, 0.5]).unwrap();
        let y = Allocation::from_values(&g, vec![10.0, 1.0]).unwrap();
        // 0.3 * 10 = 3.0 beats 0.5 * 1 = 0.5.
        assert_eq!(dominant_overhead_index(&model, &g, &y, 0).unwrap(), 0);
    }

    #[test]
    fn dominant_index_invariant_under_beta_rescaling() {
        let g = two_port_graph();
        let key = crate::rng::DrawKey::new(11, crate::rng::Stream::Beta);
        for case in 0..100u64 {
            let betas = vec![key.range(0.1, 1.0, case, 0), key.range(0.1, 1.0, case, 1)];
            let scale = key.range(0.1, 1.0, case, 2);
            let scaled: Vec<f64> = betas.iter().map(|b| b * scale).collect();
            let m1 = RewardModel::uniform(&g, linear_spec(1.0), betas).unwrap();
            let m2 = RewardModel::uniform(&g, linear_spec(1.0), scaled).unwrap();
            let mut y = Allocation::zeros(&g);
            for c in 0..g.num_channels() {
                for k in 0..2 {
                    y.set(c, k, key.range(0.0, 2.0, case, 10 + (c * 2 + k) as u64));
                }
            }
            for l in 0..g.num_ports() {
                assert_eq!(
                    dominant_overhead_index(&m1, &g, &y, l).unwrap(),
                    dominant_overhead_index(&m2, &g, &y, l).unwrap()
                );
            }
        }
    }

    #[test]
    fn port_reward_hand_example() {
        // 1 channel, K = 2, linear alpha = (1, 1), beta = (0.5, 0.2), y = (2, 1):
        // gain 3, penalty max(1.0, 0.2) = 1.0, reward 2.0.
        let g = one_channel_graph();
        let model = RewardModel::uniform(&g, linear_spec(1.0), vec![0.5, 0.2]).unwrap();
        let y = Allocation::from_values(&g, vec![2.0, 1.0]).unwrap();
        assert_eq!(port_reward(&model, &g, 1, &y, 0), 2.0);
        assert_eq!(port_reward(&model, &g, 0, &y, 0), 0.0);
        let zero = Allocation::zeros(&g);
        assert_eq!(port_reward(&model, &g, 1, &zero, 0), 0.0);
    }

    #[test]
    fn total_reward_sums_ports_and_decomposes() {
        let g = two_port_graph();
        let model = RewardModel::uniform(&g, linear_spec(1.0), vec![0.4, 0.3]).unwrap();
        let mut y = Allocation::zeros(&g);
        for c in 0..g.num_channels() {
            y.set(c, 0, 0.5 + 0.1 * c as f64);
            y.set(c, 1, 0.3);
        }
        let x = ArrivalVector { counts: vec![1, 1] };
        let both = total_reward(&model, &g, &x, &y);
        let only0 = total_reward(&model, &g, &ArrivalVector { counts: vec![1, 0] }, &y);
        let only1 = total_reward(&model, &g, &ArrivalVector { counts: vec![0, 1] }, &y);
        assert!((both.total - (only0.total + only1.total)).abs() < 1e-12);
        assert_eq!(both.total, both.gain - both.penalty);
        // Independent scalar evaluation of port 0.
        assert!((only0.total - port_reward(&model, &g, 1, &y, 0)).abs() < 1e-12);

        let zero_x = ArrivalVector::zeros(2);
        assert_eq!(total_reward(&model, &g, &zero_x, &y).total, 0.0);
        let zero_y = Allocation::zeros(&g);
        assert_eq!(total_reward(&model, &g, &x, &zero_y).total, 0.0);
    }

    #[test]
    fn raising_dominant_beta_never_helps() {
        let g = two_port_graph();
        let key = crate::rng::DrawKey::new(21, crate::rng::Stream::Beta);
        for case in 0..100u64 {
            let betas = vec![key.range(0.1, 0.9, case, 0), key.range(0.1, 0.9, case, 1)];
            let mut y = Allocation::zeros(&g);
            for c in 0..g.num_channels() {
                for k in 0..2 {
                    y.set(c, k, key.range(0.0, 2.0, case, 10 + (c * 2 + k) as u64));
                }
            }
            let x = ArrivalVector { counts: vec![1, 1] };
            let m1 = RewardModel::uniform(&g, linear_spec(1.0), betas.clone()).unwrap();
            let k_star = dominant_overhead_index(&m1, &g, &y, 0).unwrap();
            let mut raised = betas.clone();
            raised[k_star] = (raised[k_star] + 0.05).min(1.0);
            let m2 = RewardModel::uniform(&g, linear_spec(1.0), raised).unwrap();
            let r1 = total_reward(&m1, &g, &x, &y).total;
            let r2 = total_reward(&m2, &g, &x, &y).total;
            assert!(r2 <= r1 + 1e-12, "case {case}: {r2} > {r1}");
        }
    }

    #[test]
    fn gradient_zero_for_absent_ports_and_linear_closed_form() {
        let g = one_channel_graph();
        let model = RewardModel::uniform(&g, linear_spec(1.0), vec![0.5, 0.2]).unwrap();
        let y = Allocation::from_values(&g, vec![2.0, 1.0]).unwrap();
        let grad0 = reward_gradient(&model, &g, &ArrivalVector::zeros(1), &y);
        assert!(grad0.values().iter().all(|&v| v == 0.0));

        let grad = reward_gradient(&model, &g, &ArrivalVector { counts: vec![1] }, &y);
        // k* = 0 (0.5 * 2 > 0.2 * 1): entries alpha - beta_0 and alpha.
        assert!((grad.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((grad.get(0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences_at_smooth_points() {
        let g = two_port_graph();
        let key = crate::rng::DrawKey::new(31, crate::rng::Stream::Alpha);
        let h = 1e-6;
        let mut checked = 0;
        for case in 0..200u64 {
            let kind = UtilityKind::ALL[(case % 4) as usize];
            let spec = UtilitySpec::new(kind, key.range(1.0, 1.5, case, 0)).unwrap();
            let betas = vec![key.range(0.2, 0.6, case, 1), key.range(0.2, 0.6, case, 2)];
            let model = RewardModel::uniform(&g, spec, betas).unwrap();
            let mut y = Allocation::zeros(&g);
            for c in 0..g.num_channels() {
                for k in 0..2 {
                    y.set(c, k, key.range(0.1, 1.0, case, 10 + (c * 2 + k) as u64));
                }
            }
            // Only test points where each port's dominant index wins by a margin.
            let mut smooth = true;
            for l in 0..g.num_ports() {
                let m0 = weighted_mass(&model, &g, &y, l, 0);
                let m1 = weighted_mass(&model, &g, &y, l, 1);
                if (m0 - m1).abs() < 1e-3 {
                    smooth = false;
                }
            }
            if !smooth {
                continue;
            }
            checked += 1;
            let x = ArrivalVector { counts: vec![1, 1] };
            let grad = reward_gradient(&model, &g, &x, &y);
            for c in 0..g.num_channels() {
                for k in 0..2 {
                    let mut hi = y.clone();
                    hi.set(c, k, y.get(c, k) + h);
                    let mut lo = y.clone();
                    lo.set(c, k, y.get(c, k) - h);
                    let fd = (total_reward(&model, &g, &x, &hi).total
                        - total_reward(&model, &g, &x, &lo).total)
                        / (2.0 * h);
                    let an = grad.get(c, k);
                    assert!(
                        (fd - an).abs() <= 1e-5 * an.abs().max(1.0),
                        "case {case} ({kind:?}) channel {c} res {k}: fd={fd} analytic={an}"
                    );
                }
            }
        }
        assert!(checked > 100, "too few smooth cases: {checked}");
    }

    #[test]
    fn multi_arrival_reward_uses_indicator() {
        let g = one_channel_graph();
        let model = RewardModel::uniform(&g, linear_spec(1.0), vec![0.5, 0.2]).unwrap();
        let y0 = Allocation::from_values(&g, vec![2.0, 1.0]).unwrap();
        let y1 = Allocation::from_values(&g, vec![1.0, 1.0]).unwrap();
        let replicas = vec![y0.clone(), y1];

        // x = 0 contributes nothing; J = 1 reduces to the base reward.
        assert_eq!(port_reward_multi(&model, &g, 0, &replicas, 0).unwrap(), 0.0);
        assert_eq!(
            port_reward_multi(&model, &g, 1, &replicas[..1], 0).unwrap(),
            port_reward(&model, &g, 1, &y0, 0)
        );
        // Second replica allocated but x = 1: it contributes 0.
        assert_eq!(
            port_reward_multi(&model, &g, 1, &replicas, 0).unwrap(),
            port_reward(&model, &g, 1, &y0, 0)
        );
        // Over-subscribed arrivals are an error.
        assert!(matches!(
            port_reward_multi(&model, &g, 3, &replicas, 0),
            Err(RewardError::TooManyArrivals { .. })
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn kinds() -> impl Strategy<Value = UtilityKind> {
            prop::sample::select(UtilityKind::ALL.to_vec())
        }

        proptest! {
            #[test]
            fn utilities_start_at_zero_and_stay_concave(
                kind in kinds(),
                alpha in 0.1..5.0f64,
                a in 0.0..20.0f64,
                b in 0.0..20.0f64,
                lam in 0.0..1.0f64,
            ) {
                let u = UtilitySpec::new(kind, alpha).unwrap();
                prop_assert_eq!(u.value(0.0).unwrap(), 0.0);
                let mid = lam * a + (1.0 - lam) * b;
                let lhs = u.value(mid).unwrap();
                let rhs = lam * u.value(a).unwrap() + (1.0 - lam) * u.value(b).unwrap();
                prop_assert!(lhs >= rhs - 1e-12);
                // Derivative is non-increasing and bounded by the slope at 0.
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(u.grad(lo).unwrap() >= u.grad(hi).unwrap() - 1e-12);
                prop_assert!(u.grad(lo).unwrap() <= u.grad_at_zero() + 1e-12);
            }
        }
    }

    #[test]
    fn midpoint_concavity_holds() {
        let g = two_port_graph();
        let key = crate::rng::DrawKey::new(41, crate::rng::Stream::Alpha);
        for case in 0..300u64 {
            let kind = UtilityKind::ALL[(case % 4) as usize];
            let spec = UtilitySpec::new(kind, key.range(1.0, 1.5, case, 0)).unwrap();
            let model =
                RewardModel::uniform(&g, spec, vec![key.range(0.0, 1.0, case, 1), 0.3]).unwrap();
            let x = ArrivalVector { counts: vec![1, 1] };
            let mut a = Allocation::zeros(&g);
            let mut b = Allocation::zeros(&g);
            for c in 0..g.num_channels() {
                for k in 0..2 {
                    a.set(c, k, key.range(0.0, 2.0, case, 10 + (c * 2 + k) as u64));
                    b.set(c, k, key.range(0.0, 2.0, case, 50 + (c * 2 + k) as u64));
                }
            }
            let lam = key.unit(case, 99);
            let mid = Allocation::from_values(
                &g,
                a.values()
                    .iter()
                    .zip(b.values())
                    .map(|(p, q)| lam * p + (1.0 - lam) * q)
                    .collect(),
            )
            .unwrap();
            let qa = total_reward(&model, &g, &x, &a).total;
            let qb = total_reward(&model, &g, &x, &b).total;
            let qm = total_reward(&model, &g, &x, &mid).total;
            assert!(
                qm >= lam * qa + (1.0 - lam) * qb - 1e-9,
                "case {case}: {qm} < {}",
                lam * qa + (1.0 - lam) * qb
            );
        }
    }
}
