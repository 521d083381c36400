//! Time-slotted simulation: draw arrivals, ask a policy for the slot's
//! allocation, audit feasibility, record reward metrics, repeat.
//!
//! Arrivals come from either independent per-port Bernoulli draws or a
//! replayed trace table. Every random quantity is keyed by `(seed, stream,
//! slot, unit)`, so the arrival trajectory of a given seed is identical no
//! matter which or how many policies run against it.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    complete_channels, is_feasible, Allocation, BipartiteGraph, GraphSpec, InstanceSpec,
    ModelError, PortSpec, ResourceCatalog,
};
use crate::policies::{build_policy, LearningRateSchedule, Policy, PolicyError};
use crate::reward::{
    total_reward, ArrivalVector, RewardError, RewardModel, UtilityKind, UtilitySpec,
};
use crate::rng::{DrawKey, Stream};

/// Feasibility audit tolerance applied to every logged allocation.
pub const AUDIT_TOL: f64 = 1e-9;

/// Ratios below this slot index are considered warm-up noise.
pub const WARMUP_SLOTS: usize = 50;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("policy {policy} produced an infeasible allocation at slot {slot}")]
    InfeasibleAllocation { policy: String, slot: usize },
    #[error("trace provides {have} slots, horizon needs {need}")]
    TraceExhausted { have: usize, need: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Utility-kind assignment for synthesized reward models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UtilityAssignment {
    /// One kind everywhere.
    Uniform(UtilityKind),
    /// One kind per resource type (length K).
    PerResource(Vec<UtilityKind>),
}

impl UtilityAssignment {
    fn kind_for(&self, resource: usize) -> UtilityKind {
        match self {
            UtilityAssignment::Uniform(k) => *k,
            UtilityAssignment::PerResource(ks) => ks[resource],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalsMode {
    Bernoulli,
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearningRateMode {
    Geometric,
    Theoretical,
}

/// Full run description. Defaults reproduce the reference parameter table:
/// 10 job types on 128 instances with 6 resource types, horizon 2000,
/// arrival probability 0.7, contention level 10, alpha in [1, 1.5], beta in
/// [0.3, 0.5], initial learning rate 25 with decay 0.9999.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub horizon: usize,
    pub arrival_prob: f64,
    pub contention_level: f64,
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    pub eta0: f64,
    pub decay: f64,
    pub seed: u64,
    pub utility: UtilityAssignment,
    pub arrivals_mode: ArrivalsMode,
    pub lr_mode: LearningRateMode,
    pub policies: Vec<String>,
    pub num_ports: usize,
    pub num_instances: usize,
    pub num_resources: usize,
    pub requirement_range: (f64, f64),
    pub capacity_range: (f64, f64),
    /// Probability of keeping each port-instance channel; 1 means the
    /// complete bipartite graph. Lower values thin the graph toward a target
    /// density (ports and instances are never left isolated).
    pub edge_prob: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 2000,
            arrival_prob: 0.7,
            contention_level: 10.0,
            alpha_range: (1.0, 1.5),
            beta_range: (0.3, 0.5),
            eta0: 25.0,
            decay: 0.9999,
            seed: 1,
            utility: UtilityAssignment::Uniform(UtilityKind::Log),
            arrivals_mode: ArrivalsMode::Bernoulli,
            lr_mode: LearningRateMode::Geometric,
            policies: crate::policies::POLICY_NAMES.iter().map(|s| s.to_string()).collect(),
            num_ports: 10,
            num_instances: 128,
            num_resources: 6,
            requirement_range: (1.5, 3.0),
            capacity_range: (150.0, 300.0),
            edge_prob: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.horizon == 0 {
            return err("horizon must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.arrival_prob) {
            return err(format!("arrival_prob {} outside [0, 1]", self.arrival_prob));
        }
        if self.contention_level <= 0.0 {
            return err("contention_level must be positive".into());
        }
        for (name, (lo, hi)) in [
            ("alpha_range", self.alpha_range),
            ("beta_range", self.beta_range),
            ("requirement_range", self.requirement_range),
            ("capacity_range", self.capacity_range),
        ] {
            if lo > hi || !lo.is_finite() || !hi.is_finite() {
                return err(format!("{name} [{lo}, {hi}] is not a valid interval"));
            }
        }
        if self.alpha_range.0 <= 0.0 {
            return err("alpha_range must be positive".into());
        }
        if self.beta_range.0 < 0.0 || self.beta_range.1 > 1.0 {
            return err(format!(
                "beta_range [{}, {}] outside [0, 1]",
                self.beta_range.0, self.beta_range.1
            ));
        }
        if self.requirement_range.0 < 0.0 || self.capacity_range.0 < 0.0 {
            return err("requirement and capacity ranges must be non-negative".into());
        }
        if self.eta0 <= 0.0 || self.decay <= 0.0 {
            return err("eta0 and decay must be positive".into());
        }
        if self.num_ports == 0 || self.num_instances == 0 || self.num_resources == 0 {
            return err("graph dimensions must be at least 1".into());
        }
        if !(0.0 < self.edge_prob && self.edge_prob <= 1.0) {
            return err(format!("edge_prob {} outside (0, 1]", self.edge_prob));
        }
        if let UtilityAssignment::PerResource(ks) = &self.utility {
            if ks.len() != self.num_resources {
                return err(format!(
                    "utility list covers {} resources, expected {}",
                    ks.len(),
                    self.num_resources
                ));
            }
        }
        for p in &self.policies {
            if !crate::policies::POLICY_NAMES.contains(&p.as_str()) {
                return Err(PolicyError::UnknownPolicy(p.clone()).into());
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> LearningRateSchedule {
        match self.lr_mode {
            LearningRateMode::Geometric => LearningRateSchedule::Geometric {
                eta0: self.eta0,
                decay: self.decay,
            },
            LearningRateMode::Theoretical => LearningRateSchedule::Theoretical {
                horizon: self.horizon,
            },
        }
    }
}

const RESOURCE_NAMES: [&str; 6] = ["cpu", "mem", "gpu", "npu", "tpu", "fpga"];

fn resource_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| {
            RESOURCE_NAMES
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("res{i}"))
        })
        .collect()
}

/// Draw a synthetic scenario from the config: capacities and requirements
/// from their ranges (requirements scaled by the contention level before
/// anything else sees them), channels kept with `edge_prob`, utilities and
/// overhead coefficients from their ranges.
pub fn synthesize_scenario(config: &SimConfig) -> Result<(BipartiteGraph, RewardModel), SimError> {
    config.validate()?;
    let k_count = config.num_resources;
    let catalog = ResourceCatalog::new(resource_names(k_count));

    let req_key = DrawKey::new(config.seed, Stream::Requirements);
    let ports: Vec<PortSpec> = (0..config.num_ports)
        .map(|l| PortSpec {
            id: l as u32,
            requirements: (0..k_count)
                .map(|k| {
                    config.contention_level
                        * req_key.range(
                            config.requirement_range.0,
                            config.requirement_range.1,
                            l as u64,
                            k as u64,
                        )
                })
                .collect(),
        })
        .collect();

    let cap_key = DrawKey::new(config.seed, Stream::Capacities);
    let instances: Vec<InstanceSpec> = (0..config.num_instances)
        .map(|r| InstanceSpec {
            id: r as u32,
            capacities: (0..k_count)
                .map(|k| {
                    cap_key.range(
                        config.capacity_range.0,
                        config.capacity_range.1,
                        r as u64,
                        k as u64,
                    )
                })
                .collect(),
        })
        .collect();

    let channels = if config.edge_prob >= 1.0 {
        complete_channels(&ports, &instances)
    } else {
        let edge_key = DrawKey::new(config.seed, Stream::Edges);
        let mut channels = Vec::new();
        for l in 0..config.num_ports {
            for r in 0..config.num_instances {
                if edge_key.bernoulli(config.edge_prob, l as u64, r as u64) {
                    channels.push((l as u32, r as u32));
                }
            }
        }
        let mut port_degree = vec![0usize; config.num_ports];
        let mut instance_degree = vec![0usize; config.num_instances];
        for &(l, r) in &channels {
            port_degree[l as usize] += 1;
            instance_degree[r as usize] += 1;
        }
        // No isolated vertices: wire each one to a fixed partner.
        for (l, &degree) in port_degree.iter().enumerate() {
            if degree == 0 {
                let r = l % config.num_instances;
                channels.push((l as u32, r as u32));
                instance_degree[r] += 1;
            }
        }
        for (r, &degree) in instance_degree.iter().enumerate() {
            if degree == 0 {
                let l = r % config.num_ports;
                if !channels.contains(&(l as u32, r as u32)) {
                    channels.push((l as u32, r as u32));
                }
            }
        }
        channels
    };

    let graph = BipartiteGraph::from_spec(GraphSpec { catalog, ports, instances, channels })?;
    let model = synthesize_model(config, &graph)?;
    Ok((graph, model))
}

/// Draw utilities and overhead coefficients for an existing graph (used
/// directly when the graph comes from a trace). Utility kinds may be listed
/// per resource; the list length must then match the graph's catalog.
pub fn synthesize_model(
    config: &SimConfig,
    graph: &BipartiteGraph,
) -> Result<RewardModel, SimError> {
    let k_count = graph.resource_count();
    if let UtilityAssignment::PerResource(ks) = &config.utility {
        if ks.len() != k_count {
            return Err(SimError::InvalidConfig(format!(
                "utility list covers {} resources, graph has {k_count}",
                ks.len()
            )));
        }
    }
    let alpha_key = DrawKey::new(config.seed, Stream::Alpha);
    let mut utilities = Vec::with_capacity(graph.num_instances() * k_count);
    for r in 0..graph.num_instances() {
        for k in 0..k_count {
            let alpha =
                alpha_key.range(config.alpha_range.0, config.alpha_range.1, r as u64, k as u64);
            utilities.push(UtilitySpec::new(config.utility.kind_for(k), alpha)?);
        }
    }
    let beta_key = DrawKey::new(config.seed, Stream::Beta);
    let betas: Vec<f64> = (0..k_count)
        .map(|k| beta_key.range(config.beta_range.0, config.beta_range.1, 0, k as u64))
        .collect();
    Ok(RewardModel::new(graph, utilities, betas)?)
}

/// Where a run's arrivals come from.
pub enum ArrivalSource {
    Bernoulli { key: DrawKey, prob: f64 },
    Trace { table: Vec<ArrivalVector> },
}

impl ArrivalSource {
    pub fn bernoulli(seed: u64, prob: f64) -> Self {
        ArrivalSource::Bernoulli { key: DrawKey::new(seed, Stream::Arrivals), prob }
    }

    pub fn from_config(config: &SimConfig) -> Self {
        ArrivalSource::bernoulli(config.seed, config.arrival_prob)
    }

    /// Arrivals for one slot (0-based).
    pub fn arrivals(&self, slot: usize, num_ports: usize) -> Result<ArrivalVector, SimError> {
        match self {
            ArrivalSource::Bernoulli { key, prob } => Ok(ArrivalVector {
                counts: (0..num_ports)
                    .map(|l| u32::from(key.bernoulli(*prob, slot as u64, l as u64)))
                    .collect(),
            }),
            ArrivalSource::Trace { table } => table.get(slot).cloned().ok_or(
                SimError::TraceExhausted { have: table.len(), need: slot + 1 },
            ),
        }
    }

    /// Materialize the whole trajectory so several policies can replay it.
    pub fn trajectory(
        &self,
        horizon: usize,
        num_ports: usize,
    ) -> Result<Vec<ArrivalVector>, SimError> {
        if let ArrivalSource::Trace { table } = self {
            if table.len() < horizon {
                return Err(SimError::TraceExhausted { have: table.len(), need: horizon });
            }
        }
        (0..horizon).map(|t| self.arrivals(t, num_ports)).collect()
    }
}

/// Metrics of one slot. `slot` is 1-based in reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotMetrics {
    pub slot: usize,
    pub reward: f64,
    pub gain: f64,
    pub penalty: f64,
    pub cumulative: f64,
    pub average: f64,
}

/// Complete per-policy record of one run.
#[derive(Debug, Clone)]
pub struct MetricsLog {
    pub policy: String,
    pub slots: Vec<SlotMetrics>,
    pub wall_seconds: f64,
    pub final_allocation: Allocation,
}

impl MetricsLog {
    pub fn cumulative_reward(&self) -> f64 {
        self.slots.last().map_or(0.0, |s| s.cumulative)
    }

    pub fn average_reward(&self) -> f64 {
        self.slots.last().map_or(0.0, |s| s.average)
    }

    pub fn per_slot_rewards(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.reward).collect()
    }
}

/// Render logs as the metrics CSV: one row per slot per policy. This is the
/// exact byte stream the CLI writes, so determinism checks can compare it
/// directly.
pub fn metrics_csv(logs: &[MetricsLog]) -> String {
    let mut csv = String::from("t,policy,reward,gain,penalty,cumulative,average\n");
    for log in logs {
        for s in &log.slots {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.slot, log.policy, s.reward, s.gain, s.penalty, s.cumulative, s.average
            ));
        }
    }
    csv
}

/// Drive one policy over a fixed trajectory. Every emitted allocation is
/// audited against the constraints; an infeasible one aborts the run.
pub fn run_simulation(
    graph: &BipartiteGraph,
    model: &RewardModel,
    policy: &mut dyn Policy,
    trajectory: &[ArrivalVector],
) -> Result<MetricsLog, SimError> {
    let started = Instant::now();
    let mut slots = Vec::with_capacity(trajectory.len());
    let mut cumulative = 0.0;
    let mut last_allocation = Allocation::zeros(graph);
    for (t, x) in trajectory.iter().enumerate() {
        let y = policy.decide(model, graph, x)?;
        if !is_feasible(graph, &y, AUDIT_TOL)? {
            return Err(SimError::InfeasibleAllocation {
                policy: policy.name().to_string(),
                slot: t + 1,
            });
        }
        let breakdown = total_reward(model, graph, x, &y);
        cumulative += breakdown.total;
        slots.push(SlotMetrics {
            slot: t + 1,
            reward: breakdown.total,
            gain: breakdown.gain,
            penalty: breakdown.penalty,
            cumulative,
            average: cumulative / (t + 1) as f64,
        });
        last_allocation = y;
    }
    Ok(MetricsLog {
        policy: policy.name().to_string(),
        slots,
        wall_seconds: started.elapsed().as_secs_f64(),
        final_allocation: last_allocation,
    })
}

/// Average-reward ratio series of the gradient policy against one baseline.
#[derive(Debug, Clone, Serialize)]
pub struct RatioSeries {
    pub baseline: String,
    /// Per-slot ratio; `None` marks slots where the baseline's cumulative
    /// reward is zero and the ratio is undefined.
    pub ratios: Vec<Option<f64>>,
    pub final_ratio: Option<f64>,
}

/// All policies replayed over one shared trajectory.
#[derive(Debug)]
pub struct Comparison {
    pub logs: Vec<MetricsLog>,
    pub ratios: Vec<RatioSeries>,
    /// Ratio entries before this slot are warm-up noise.
    pub warmup_slots: usize,
}

/// Run every named policy over the same trajectory and derive the ratio
/// series against `oga` (when present).
pub fn compare_policies(
    config: &SimConfig,
    graph: &BipartiteGraph,
    model: &RewardModel,
    names: &[String],
    trajectory: &[ArrivalVector],
) -> Result<Comparison, SimError> {
    let mut logs = Vec::with_capacity(names.len());
    for name in names {
        let mut policy = build_policy(name, graph, config.schedule())?;
        logs.push(run_simulation(graph, model, policy.as_mut(), trajectory)?);
    }
    let ratios = match logs.iter().position(|l| l.policy == "oga") {
        Some(oga_idx) => {
            let oga = &logs[oga_idx];
            logs.iter()
                .enumerate()
                .filter(|&(i, _)| i != oga_idx)
                .map(|(_, base)| {
                    let ratios: Vec<Option<f64>> = oga
                        .slots
                        .iter()
                        .zip(&base.slots)
                        .map(|(a, b)| {
                            (b.cumulative != 0.0).then(|| a.average / b.average)
                        })
                        .collect();
                    RatioSeries {
                        baseline: base.policy.clone(),
                        final_ratio: ratios.last().cloned().flatten(),
                        ratios,
                    }
                })
                .collect()
        }
        None => Vec::new(),
    };
    Ok(Comparison { logs, ratios, warmup_slots: WARMUP_SLOTS })
}

/// Rewrite a trajectory with multi-job slots into the replicated-port form:
/// port `l` with up to `J_l` simultaneous jobs becomes `J_l` replica ports
/// sharing its requirements and channels, and a slot with `x_l` arrivals
/// activates the first `x_l` replicas. Returns the expanded graph, the
/// rewritten binary trajectory, and each replica's original port.
pub fn expand_for_multi_arrivals(
    graph: &BipartiteGraph,
    trajectory: &[ArrivalVector],
) -> Result<Option<(BipartiteGraph, Vec<ArrivalVector>, Vec<usize>)>, SimError> {
    if trajectory.iter().all(|x| x.is_binary()) {
        return Ok(None);
    }
    let num_ports = graph.num_ports();
    let mut max_arrivals = vec![1u32; num_ports];
    for x in trajectory {
        for (m, &c) in max_arrivals.iter_mut().zip(&x.counts) {
            *m = (*m).max(c);
        }
    }
    let mut ports = Vec::new();
    let mut origin = Vec::new();
    let mut channels = Vec::new();
    for (l, &replicas) in max_arrivals.iter().enumerate() {
        for _ in 0..replicas {
            let replica_id = ports.len() as u32;
            ports.push(PortSpec {
                id: replica_id,
                requirements: graph.port(l).requirements.clone(),
            });
            origin.push(l);
            for r in graph.instances_of_port(l) {
                channels.push((replica_id, graph.instance(r).id));
            }
        }
    }
    let expanded = BipartiteGraph::from_spec(GraphSpec {
        catalog: graph.catalog().clone(),
        ports,
        instances: graph.instances().to_vec(),
        channels,
    })?;
    let rewritten: Vec<ArrivalVector> = trajectory
        .iter()
        .map(|x| ArrivalVector {
            counts: origin
                .iter()
                .scan(vec![0u32; num_ports], |seen, &l| {
                    let j = seen[l];
                    seen[l] += 1;
                    Some(u32::from(j < x.counts[l]))
                })
                .collect(),
        })
        .collect();
    Ok(Some((expanded, rewritten, origin)))
}
