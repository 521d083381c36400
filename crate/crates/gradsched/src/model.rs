//! Bipartite cluster model: job types (ports) on the left, computing
//! instances on the right, channels where an instance may serve a job type.
//!
//! A scheduling decision assigns, per channel and per resource type, a
//! fractional quantity bounded above by the job type's per-channel
//! requirement, while every instance's outflow stays within its capacity.
//! `BipartiteGraph` is the validated, index-ready form; `GraphSpec` is the
//! raw form produced by config synthesis or trace ingestion.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("graph failed validation:\n{0}")]
    InvalidGraph(ValidationReport),
    #[error("allocation shape mismatch: expected {expected} channel-resource entries, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("graph has no instances")]
    NoInstances,
}

/// The set of resource types managed by the cluster (CPU, GPU, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceCatalog {
    names: Vec<String>,
}

impl ResourceCatalog {
    pub fn new(names: Vec<String>) -> Self {
        Self { names }
    }

    /// Catalog with placeholder names `r0..r{k-1}`.
    pub fn with_count(k: usize) -> Self {
        Self {
            names: (0..k).map(|i| format!("r{i}")).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A job type. `requirements[k]` is the largest amount of resource `k` the
/// job may receive through any single channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortSpec {
    pub id: u32,
    pub requirements: Vec<f64>,
}

/// A computing instance. `capacities[k]` is the total amount of resource `k`
/// it can hand out per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub id: u32,
    pub capacities: Vec<f64>,
}

/// Unvalidated graph description, as read from traces or synthesized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSpec {
    pub catalog: ResourceCatalog,
    pub ports: Vec<PortSpec>,
    pub instances: Vec<InstanceSpec>,
    /// Channel list as `(port id, instance id)` pairs.
    pub channels: Vec<(u32, u32)>,
}

/// One structural defect found during validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyCatalog,
    DuplicateResourceName(String),
    EmptyResourceName,
    DuplicatePortId(u32),
    DuplicateInstanceId(u32),
    /// Requirement or capacity vector whose length differs from K.
    RequirementArity { port: u32, got: usize, expected: usize },
    CapacityArity { instance: u32, got: usize, expected: usize },
    NegativeRequirement { port: u32, resource: usize },
    NegativeCapacity { instance: u32, resource: usize },
    /// Requirement vector that is identically zero.
    ZeroRequirements { port: u32 },
    DanglingPort { port: u32 },
    DanglingInstance { instance: u32 },
    DuplicateChannel { port: u32, instance: u32 },
    /// A port with no channels can never be served; we reject it.
    IsolatedPort { port: u32 },
    IsolatedInstance { instance: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyCatalog => write!(f, "resource catalog is empty"),
            Violation::DuplicateResourceName(n) => write!(f, "duplicate resource name {n:?}"),
            Violation::EmptyResourceName => write!(f, "empty resource name"),
            Violation::DuplicatePortId(p) => write!(f, "duplicate port id {p}"),
            Violation::DuplicateInstanceId(r) => write!(f, "duplicate instance id {r}"),
            Violation::RequirementArity { port, got, expected } => {
                write!(f, "port {port}: requirement arity {got}, expected {expected}")
            }
            Violation::CapacityArity { instance, got, expected } => {
                write!(f, "instance {instance}: capacity arity {got}, expected {expected}")
            }
            Violation::NegativeRequirement { port, resource } => {
                write!(f, "port {port}: negative requirement for resource {resource}")
            }
            Violation::NegativeCapacity { instance, resource } => {
                write!(f, "instance {instance}: negative capacity for resource {resource}")
            }
            Violation::ZeroRequirements { port } => {
                write!(f, "port {port}: all requirements are zero")
            }
            Violation::DanglingPort { port } => write!(f, "channel references unknown port {port}"),
            Violation::DanglingInstance { instance } => {
                write!(f, "channel references unknown instance {instance}")
            }
            Violation::DuplicateChannel { port, instance } => {
                write!(f, "duplicate channel ({port}, {instance})")
            }
            Violation::IsolatedPort { port } => write!(f, "port {port} has no channels"),
            Violation::IsolatedInstance { instance } => {
                write!(f, "instance {instance} has no channels")
            }
        }
    }
}

/// Outcome of `validate_graph`. Empty violation list means the spec is sound.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Check a raw graph spec for structural defects. Report-style: collects every
/// violation rather than stopping at the first.
pub fn validate_graph(spec: &GraphSpec) -> ValidationReport {
    let mut out = ValidationReport::default();
    let k = spec.catalog.count();
    if k == 0 {
        out.violations.push(Violation::EmptyCatalog);
    }
    let mut seen_names = HashMap::new();
    for name in spec.catalog.names() {
        if name.is_empty() {
            out.violations.push(Violation::EmptyResourceName);
        }
        if seen_names.insert(name.clone(), ()).is_some() {
            out.violations.push(Violation::DuplicateResourceName(name.clone()));
        }
    }

    let mut port_ids = HashMap::new();
    for p in &spec.ports {
        if port_ids.insert(p.id, ()).is_some() {
            out.violations.push(Violation::DuplicatePortId(p.id));
        }
        if p.requirements.len() != k {
            out.violations.push(Violation::RequirementArity {
                port: p.id,
                got: p.requirements.len(),
                expected: k,
            });
            continue;
        }
        for (res, &a) in p.requirements.iter().enumerate() {
            if a < 0.0 || !a.is_finite() {
                out.violations.push(Violation::NegativeRequirement { port: p.id, resource: res });
            }
        }
        if p.requirements.iter().all(|&a| a == 0.0) {
            out.violations.push(Violation::ZeroRequirements { port: p.id });
        }
    }

    let mut instance_ids = HashMap::new();
    for i in &spec.instances {
        if instance_ids.insert(i.id, ()).is_some() {
            out.violations.push(Violation::DuplicateInstanceId(i.id));
        }
        if i.capacities.len() != k {
            out.violations.push(Violation::CapacityArity {
                instance: i.id,
                got: i.capacities.len(),
                expected: k,
            });
            continue;
        }
        for (res, &c) in i.capacities.iter().enumerate() {
            if c < 0.0 || !c.is_finite() {
                out.violations.push(Violation::NegativeCapacity { instance: i.id, resource: res });
            }
        }
    }

    let mut seen_channels = HashMap::new();
    let mut port_degree: HashMap<u32, usize> = HashMap::new();
    let mut instance_degree: HashMap<u32, usize> = HashMap::new();
    for &(l, r) in &spec.channels {
        if !port_ids.contains_key(&l) {
            out.violations.push(Violation::DanglingPort { port: l });
            continue;
        }
        if !instance_ids.contains_key(&r) {
            out.violations.push(Violation::DanglingInstance { instance: r });
            continue;
        }
        if seen_channels.insert((l, r), ()).is_some() {
            out.violations.push(Violation::DuplicateChannel { port: l, instance: r });
            continue;
        }
        *port_degree.entry(l).or_default() += 1;
        *instance_degree.entry(r).or_default() += 1;
    }
    for p in &spec.ports {
        if port_degree.get(&p.id).copied().unwrap_or(0) == 0 {
            out.violations.push(Violation::IsolatedPort { port: p.id });
        }
    }
    for i in &spec.instances {
        if instance_degree.get(&i.id).copied().unwrap_or(0) == 0 {
            out.violations.push(Violation::IsolatedInstance { instance: i.id });
        }
    }
    out
}

/// Validated bipartite graph with dense index structures.
///
/// Ports and instances are addressed by position (`usize`) everywhere past
/// this point; external ids survive only for reporting and trace round-trips.
/// Channels are kept sorted by `(port position, instance position)` and that
/// order fixes the layout of every allocation tensor.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    catalog: ResourceCatalog,
    ports: Vec<PortSpec>,
    instances: Vec<InstanceSpec>,
    /// Sorted `(port pos, instance pos)` pairs.
    channels: Vec<(usize, usize)>,
    /// Per port position: channel indices, ascending instance position.
    port_channels: Vec<Vec<usize>>,
    /// Per instance position: channel indices, ascending port position.
    instance_channels: Vec<Vec<usize>>,
}

impl BipartiteGraph {
    /// Validate a raw spec and build the indexed graph.
    pub fn from_spec(spec: GraphSpec) -> Result<Self, ModelError> {
        let report = validate_graph(&spec);
        if !report.is_ok() {
            return Err(ModelError::InvalidGraph(report));
        }
        let port_pos: HashMap<u32, usize> =
            spec.ports.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
        let instance_pos: HashMap<u32, usize> =
            spec.instances.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let mut channels: Vec<(usize, usize)> = spec
            .channels
            .iter()
            .map(|&(l, r)| (port_pos[&l], instance_pos[&r]))
            .collect();
        channels.sort_unstable();

        let mut port_channels = vec![Vec::new(); spec.ports.len()];
        let mut instance_channels = vec![Vec::new(); spec.instances.len()];
        for (idx, &(l, r)) in channels.iter().enumerate() {
            port_channels[l].push(idx);
            instance_channels[r].push(idx);
        }
        Ok(Self {
            catalog: spec.catalog,
            ports: spec.ports,
            instances: spec.instances,
            channels,
            port_channels,
            instance_channels,
        })
    }

    pub fn catalog(&self) -> &ResourceCatalog {
        &self.catalog
    }

    pub fn resource_count(&self) -> usize {
        self.catalog.count()
    }

    pub fn num_ports(&self) -> usize {
        self.ports.len()
    }

    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn port(&self, l: usize) -> &PortSpec {
        &self.ports[l]
    }

    pub fn instance(&self, r: usize) -> &InstanceSpec {
        &self.instances[r]
    }

    pub fn ports(&self) -> &[PortSpec] {
        &self.ports
    }

    pub fn instances(&self) -> &[InstanceSpec] {
        &self.instances
    }

    /// Channel endpoints `(port pos, instance pos)` for a channel index.
    pub fn channel(&self, idx: usize) -> (usize, usize) {
        self.channels[idx]
    }

    pub fn channels(&self) -> &[(usize, usize)] {
        &self.channels
    }

    /// Channel indices through which port `l` can be served, ascending
    /// instance position.
    pub fn channels_of_port(&self, l: usize) -> &[usize] {
        &self.port_channels[l]
    }

    /// Channel indices ending at instance `r`, ascending port position.
    pub fn channels_of_instance(&self, r: usize) -> &[usize] {
        &self.instance_channels[r]
    }

    /// Instance positions adjacent to port `l`.
    pub fn instances_of_port(&self, l: usize) -> impl Iterator<Item = usize> + '_ {
        self.port_channels[l].iter().map(move |&c| self.channels[c].1)
    }

    /// Port positions adjacent to instance `r`.
    pub fn ports_of_instance(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.instance_channels[r].iter().map(move |&c| self.channels[c].0)
    }

    /// Reconstruct the raw spec (inverse of `from_spec` up to channel order).
    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            catalog: self.catalog.clone(),
            ports: self.ports.clone(),
            instances: self.instances.clone(),
            channels: self
                .channels
                .iter()
                .map(|&(l, r)| (self.ports[l].id, self.instances[r].id))
                .collect(),
        }
    }

    /// True iff every instance has exactly `d` neighboring ports.
    pub fn is_right_d_regular(&self, d: usize) -> bool {
        self.instance_channels.iter().all(|chs| chs.len() == d)
    }

    /// Average number of neighboring ports per instance.
    pub fn density(&self) -> Result<f64, ModelError> {
        if self.instances.is_empty() {
            return Err(ModelError::NoInstances);
        }
        Ok(self.channels.len() as f64 / self.instances.len() as f64)
    }
}

/// Dense decision tensor over `(channel, resource)`.
///
/// Also reused for gradients, which share the same layout. Feasibility is a
/// property of the values (checked by `is_feasible`), not of the type.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    values: Vec<f64>,
    channels: usize,
    resources: usize,
}

impl Allocation {
    pub fn zeros(graph: &BipartiteGraph) -> Self {
        Self {
            values: vec![0.0; graph.num_channels() * graph.resource_count()],
            channels: graph.num_channels(),
            resources: graph.resource_count(),
        }
    }

    pub fn from_values(graph: &BipartiteGraph, values: Vec<f64>) -> Result<Self, ModelError> {
        let expected = graph.num_channels() * graph.resource_count();
        if values.len() != expected {
            return Err(ModelError::ShapeMismatch { expected, got: values.len() });
        }
        Ok(Self {
            values,
            channels: graph.num_channels(),
            resources: graph.resource_count(),
        })
    }

    pub fn matches(&self, graph: &BipartiteGraph) -> bool {
        self.channels == graph.num_channels() && self.resources == graph.resource_count()
    }

    #[inline]
    pub fn get(&self, channel: usize, resource: usize) -> f64 {
        self.values[channel * self.resources + resource]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, resource: usize, value: f64) {
        self.values[channel * self.resources + resource] = value;
    }

    #[inline]
    pub fn add(&mut self, channel: usize, resource: usize, delta: f64) {
        self.values[channel * self.resources + resource] += delta;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_resources(&self) -> usize {
        self.resources
    }

    /// Euclidean norm of the tensor viewed as a flat vector.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Allocation) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Check box and capacity constraints within `tol`.
pub fn is_feasible(graph: &BipartiteGraph, y: &Allocation, tol: f64) -> Result<bool, ModelError> {
    if !y.matches(graph) {
        return Err(ModelError::ShapeMismatch {
            expected: graph.num_channels() * graph.resource_count(),
            got: y.values.len(),
        });
    }
    for (idx, &(l, _)) in graph.channels().iter().enumerate() {
        for (res, &req) in graph.port(l).requirements.iter().enumerate() {
            let v = y.get(idx, res);
            if v < -tol || v > req + tol {
                return Ok(false);
            }
        }
    }
    for r in 0..graph.num_instances() {
        for (res, &cap) in graph.instance(r).capacities.iter().enumerate() {
            let total: f64 = graph.channels_of_instance(r).iter().map(|&c| y.get(c, res)).sum();
            if total > cap + tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Complete bipartite channel list over the given port/instance ids.
pub fn complete_channels(ports: &[PortSpec], instances: &[InstanceSpec]) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(ports.len() * instances.len());
    for p in ports {
        for i in instances {
            out.push((p.id, i.id));
        }
    }
    out
}
