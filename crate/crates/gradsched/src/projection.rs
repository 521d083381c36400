//! Euclidean projection onto the feasible allocation set.
//!
//! The constraint set factors over `(instance, resource)` pairs: each pair
//! contributes an independent subproblem
//!
//! ```text
//!     minimize   || yhat - z ||^2
//!     subject to 0 <= yhat_l <= caps_l,   sum_l yhat_l <= capacity
//! ```
//!
//! over the ports adjacent to the instance. `project_subproblem` solves one
//! such box-plus-budget problem by an active-set iteration on the KKT system:
//! ports are split into an at-cap set, an at-zero set and an interior set, the
//! budget multiplier is recovered in closed form from the interior set, and
//! memberships are repaired until the system is consistent. `project_oracle`
//! is an exhaustive reference solver used to verify the iteration.

use thiserror::Error;

use crate::model::{Allocation, BipartiteGraph, ModelError};

/// Largest subproblem size the exhaustive oracle accepts.
pub const ORACLE_MAX_PORTS: usize = 12;

/// Default comparison tolerance for set-membership decisions.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("subproblem arity mismatch: {z} pre-projection values, {caps} caps")]
    ArityMismatch { z: usize, caps: usize },
    #[error("non-finite value in subproblem input")]
    NonFinite,
    #[error("negative cap or capacity in subproblem")]
    NegativeBound,
    #[error("oracle limited to {ORACLE_MAX_PORTS} ports, got {0}")]
    DimensionTooLarge(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One `(instance, resource)` slice of a projection: pre-projection values
/// over the adjacent ports, per-port caps, and the instance's capacity.
#[derive(Debug, Clone)]
pub struct Subproblem {
    z: Vec<f64>,
    caps: Vec<f64>,
    capacity: f64,
}

impl Subproblem {
    pub fn new(z: Vec<f64>, caps: Vec<f64>, capacity: f64) -> Result<Self, ProjectionError> {
        if z.len() != caps.len() {
            return Err(ProjectionError::ArityMismatch { z: z.len(), caps: caps.len() });
        }
        if z.iter().any(|v| !v.is_finite()) || !capacity.is_finite() {
            return Err(ProjectionError::NonFinite);
        }
        if caps.iter().any(|&c| c < 0.0 || !c.is_finite()) || capacity < 0.0 {
            return Err(ProjectionError::NegativeBound);
        }
        Ok(Self { z, caps, capacity })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn caps(&self) -> &[f64] {
        &self.caps
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Result of one subproblem projection. `rho` is the budget multiplier
/// (zero whenever the plain box clamp already fits).
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub y: Vec<f64>,
    pub rho: f64,
    pub outer_iterations: usize,
    /// Largest number of inner repeat-loop executions in any outer iteration.
    pub max_inner_iterations: usize,
}

/// Membership state for the active-set iteration over one subproblem.
///
/// `at_cap`, `at_zero` and `interior` partition the ports; `pending_illegal`
/// is the run of sorted interior ports found below zero in the current inner
/// pass; `rho` is recovered from the interior set each pass.
#[derive(Debug)]
pub struct ProjectionWorkspace {
    /// Port indices sorted by descending `z`, ties by index.
    order: Vec<usize>,
    at_cap: Vec<bool>,
    /// Interior candidates in descending-`z` order (at-zero ports are the
    /// ones dropped from this list during the inner loop).
    interior: Vec<usize>,
    rho: f64,
}

impl ProjectionWorkspace {
    fn new(sub: &Subproblem) -> Self {
        let mut order: Vec<usize> = (0..sub.len()).collect();
        order.sort_by(|&a, &b| {
            sub.z[b].partial_cmp(&sub.z[a]).unwrap().then(a.cmp(&b))
        });
        Self {
            order,
            at_cap: vec![false; sub.len()],
            interior: Vec::with_capacity(sub.len()),
            rho: 0.0,
        }
    }
}

/// Project one subproblem.
///
/// `tol` is the comparison tolerance for membership decisions; coordinates of
/// the result may overshoot their bounds by at most `tol`.
///
/// The iteration differs from the equal-caps shortcut of checking only the
/// largest sorted element: after the inner loop settles the at-zero set, every
/// interior port above its own cap is frozen at that cap, and the inner loop
/// reruns against the reduced budget. Freezing only ever lowers the recovered
/// multiplier, so previously frozen ports stay consistent and the loop ends
/// after at most one freeze per port.
pub fn project_subproblem(sub: &Subproblem, tol: f64) -> SubproblemSolution {
    let mut y: Vec<f64> = sub.z.iter().zip(&sub.caps).map(|(&z, &c)| z.clamp(0.0, c)).collect();
    let clamp_sum: f64 = y.iter().sum();
    if clamp_sum <= sub.capacity {
        return SubproblemSolution { y, rho: 0.0, outer_iterations: 0, max_inner_iterations: 0 };
    }

    let mut ws = ProjectionWorkspace::new(sub);
    let mut caps_frozen = 0.0; // sum of caps over the at-cap set
    let mut outer_iterations = 0;
    let mut max_inner = 0;

    loop {
        outer_iterations += 1;
        // Reset the at-zero/interior split; the at-cap set persists.
        ws.interior.clear();
        ws.interior.extend(ws.order.iter().copied().filter(|&l| !ws.at_cap[l]));
        let mut z_sum: f64 = ws.interior.iter().map(|&l| sub.z[l]).sum();

        let mut inner_iterations = 0;
        loop {
            inner_iterations += 1;
            if ws.interior.is_empty() {
                // Unreachable in exact arithmetic: freezing a port always
                // leaves strictly positive residual budget. Kept as a
                // numerical safety net.
                return water_fill_fallback(sub, tol);
            }
            ws.rho = 2.0 * (z_sum - sub.capacity + caps_frozen) / ws.interior.len() as f64;
            let level = ws.rho / 2.0;
            // Interior ports are sorted by descending z, so the ports pushed
            // below zero form a suffix.
            let cut = ws.interior.partition_point(|&l| sub.z[l] - level >= -tol);
            if cut == ws.interior.len() {
                break;
            }
            for &l in &ws.interior[cut..] {
                z_sum -= sub.z[l];
            }
            ws.interior.truncate(cut);
        }
        max_inner = max_inner.max(inner_iterations);

        let level = ws.rho / 2.0;
        let mut any_frozen = false;
        ws.interior.retain(|&l| {
            if sub.z[l] - level > sub.caps[l] + tol {
                ws.at_cap[l] = true;
                caps_frozen += sub.caps[l];
                any_frozen = true;
                false
            } else {
                true
            }
        });
        if !any_frozen {
            break;
        }
    }

    let level = ws.rho / 2.0;
    for (l, v) in y.iter_mut().enumerate() {
        *v = if ws.at_cap[l] { sub.caps[l] } else { 0.0 };
    }
    for &l in &ws.interior {
        y[l] = sub.z[l] - level;
    }
    SubproblemSolution {
        y,
        rho: ws.rho.max(0.0),
        outer_iterations,
        max_inner_iterations: max_inner,
    }
}

/// Monotone bisection on the water level; exact for this problem class but
/// slower than the active-set path. Only used if the iteration degenerates.
fn water_fill_fallback(sub: &Subproblem, tol: f64) -> SubproblemSolution {
    let fill = |level: f64| -> f64 {
        sub.z.iter().zip(&sub.caps).map(|(&z, &c)| (z - level).clamp(0.0, c)).sum()
    };
    let mut lo = 0.0;
    let mut hi = sub.z.iter().cloned().fold(0.0f64, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fill(mid) > sub.capacity {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let level = 0.5 * (lo + hi);
    let y: Vec<f64> =
        sub.z.iter().zip(&sub.caps).map(|(&z, &c)| (z - level).clamp(0.0, c)).collect();
    let _ = tol;
    SubproblemSolution { y, rho: 2.0 * level, outer_iterations: 0, max_inner_iterations: 0 }
}

/// Euclidean projection of a full tensor onto the feasible set, assembled
/// from the per-`(instance, resource)` subproblems. Subproblems are disjoint,
/// so assembly order does not affect the result.
pub fn project(graph: &BipartiteGraph, z: &Allocation) -> Result<Allocation, ProjectionError> {
    if !z.matches(graph) {
        return Err(ProjectionError::Model(ModelError::ShapeMismatch {
            expected: graph.num_channels() * graph.resource_count(),
            got: z.values().len(),
        }));
    }
    let mut out = Allocation::zeros(graph);
    let mut zs = Vec::new();
    let mut caps = Vec::new();
    for r in 0..graph.num_instances() {
        let channels = graph.channels_of_instance(r);
        for k in 0..graph.resource_count() {
            zs.clear();
            caps.clear();
            for &c in channels {
                let (l, _) = graph.channel(c);
                zs.push(z.get(c, k));
                caps.push(graph.port(l).requirements[k]);
            }
            let sub = Subproblem::new(zs.clone(), caps.clone(), graph.instance(r).capacities[k])?;
            let sol = project_subproblem(&sub, DEFAULT_TOL);
            for (&c, &v) in channels.iter().zip(&sol.y) {
                out.set(c, k, v);
            }
        }
    }
    Ok(out)
}

/// Exhaustive reference solver: enumerate every assignment of ports to
/// {at-zero, at-cap, interior} with the budget tight (the interior level
/// comes from the budget equality in closed form), plus the plain box clamp
/// as the only slack-budget candidate that can be optimal, and keep the
/// feasible candidate closest to `z`. Exponential in the port count, hence
/// the size limit.
pub fn project_oracle(sub: &Subproblem) -> Result<Vec<f64>, ProjectionError> {
    let n = sub.len();
    if n > ORACLE_MAX_PORTS {
        return Err(ProjectionError::DimensionTooLarge(n));
    }
    const EPS: f64 = 1e-12;
    let mut best: Option<(f64, Vec<f64>)> = None;

    // Slack budget forces zero multipliers, so the interior coordinates sit
    // exactly at z: the candidate is the box clamp.
    let clamp: Vec<f64> = sub.z.iter().zip(&sub.caps).map(|(&z, &c)| z.clamp(0.0, c)).collect();
    if clamp.iter().sum::<f64>() <= sub.capacity + EPS {
        let dist = clamp.iter().zip(&sub.z).map(|(y, z)| (y - z) * (y - z)).sum();
        best = Some((dist, clamp));
    }

    // Base-3 odometer over {at-zero, at-cap, interior} with running sums.
    let mut digits = vec![0u8; n];
    let mut interior = 0usize;
    let mut z_interior = 0.0;
    let mut fixed_sum = 0.0; // caps over the at-cap set
    let mut zero_sq = sub.z.iter().map(|z| z * z).sum::<f64>();
    let mut cap_sq = 0.0;
    let mut candidate = vec![0.0; n];
    loop {
        let accepted = if interior == 0 {
            // All coordinates pinned at bounds; tight budget demands the
            // pinned total to hit the capacity exactly.
            ((fixed_sum - sub.capacity).abs() <= EPS).then_some(zero_sq + cap_sq)
        } else {
            let level = (z_interior + fixed_sum - sub.capacity) / interior as f64;
            let ok = (0..n).all(|l| {
                digits[l] != 2 || {
                    let v = sub.z[l] - level;
                    (-EPS..=sub.caps[l] + EPS).contains(&v)
                }
            });
            ok.then_some(zero_sq + cap_sq + interior as f64 * level * level)
        };
        // The running sums drift a little over the sweep, so they only gate;
        // a candidate is admitted on its freshly computed distance.
        if let Some(dist_estimate) = accepted {
            if best.as_ref().is_none_or(|(d, _)| dist_estimate < *d + 1e-9) {
                let level = if interior == 0 {
                    0.0
                } else {
                    (z_interior + fixed_sum - sub.capacity) / interior as f64
                };
                for l in 0..n {
                    candidate[l] = match digits[l] {
                        0 => 0.0,
                        1 => sub.caps[l],
                        _ => sub.z[l] - level,
                    };
                }
                let dist: f64 =
                    candidate.iter().zip(&sub.z).map(|(y, z)| (y - z) * (y - z)).sum();
                if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                    best = Some((dist, candidate.clone()));
                }
            }
        }

        // Advance the odometer, keeping the running sums in step.
        let mut pos = 0;
        loop {
            if pos == n {
                // The all-at-zero candidate is feasible only when capacity
                // is zero, but the clamp candidate covers every slack case,
                // and capacity zero makes the all-zero assignment tight; a
                // winner always exists.
                return Ok(best.expect("some candidate is always feasible").1);
            }
            let z = sub.z[pos];
            let cap = sub.caps[pos];
            match digits[pos] {
                0 => {
                    digits[pos] = 1;
                    zero_sq -= z * z;
                    fixed_sum += cap;
                    cap_sq += (cap - z) * (cap - z);
                    break;
                }
                1 => {
                    digits[pos] = 2;
                    fixed_sum -= cap;
                    cap_sq -= (cap - z) * (cap - z);
                    interior += 1;
                    z_interior += z;
                    break;
                }
                _ => {
                    digits[pos] = 0;
                    interior -= 1;
                    z_interior -= z;
                    zero_sq += z * z;
                    pos += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GraphSpec, InstanceSpec, PortSpec, ResourceCatalog};
    use crate::rng::{DrawKey, Stream};

    fn sub(z: &[f64], caps: &[f64], capacity: f64) -> Subproblem {
        Subproblem::new(z.to_vec(), caps.to_vec(), capacity).unwrap()
    }

    fn random_subproblem(key: &DrawKey, case: u64, max_ports: usize) -> Subproblem {
        let n = 1 + (key.unit(case, 0) * max_ports as f64) as usize;
        let z: Vec<f64> = (0..n).map(|l| key.range(-5.0, 5.0, case, 10 + l as u64)).collect();
        let caps: Vec<f64> = (0..n).map(|l| key.range(0.0, 5.0, case, 200 + l as u64)).collect();
        let capacity = key.range(0.0, 5.0, case, 999);
        Subproblem::new(z, caps, capacity).unwrap()
    }

    #[test]
    fn feasible_point_is_untouched() {
        let s = sub(&[0.2, 0.3], &[1.0, 1.0], 1.0);
        let sol = project_subproblem(&s, DEFAULT_TOL);
        assert_eq!(sol.y, vec![0.2, 0.3]);
        assert_eq!(sol.rho, 0.0);
    }

    #[test]
    fn single_port_clamps_to_tightest_bound() {
        let s = sub(&[3.0], &[2.0], 1.0);
        let sol = project_subproblem(&s, DEFAULT_TOL);
        assert_eq!(sol.y, vec![1.0]);
    }

    #[test]
    fn hand_solved_kkt_case() {
        // z = (0.9, 0.3), caps 1, capacity 1: multiplier 0.2, result (0.8, 0.2).
        let s = sub(&[0.9, 0.3], &[1.0, 1.0], 1.0);
        let sol = project_subproblem(&s, DEFAULT_TOL);
        assert!((sol.rho - 0.2).abs() < 1e-12, "rho = {}", sol.rho);
        assert!((sol.y[0] - 0.8).abs() < 1e-12);
        assert!((sol.y[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn symmetric_overflow_splits_evenly() {
        let s = sub(&[0.8, 0.8], &[1.0, 1.0], 1.0);
        let sol = project_subproblem(&s, DEFAULT_TOL);
        assert!((sol.y[0] - 0.5).abs() < 1e-12);
        assert!((sol.y[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn heterogeneous_caps_release_budget_to_later_ports() {
        // The largest z saturates its small cap; the remainder goes to the
        // other port instead of being zeroed.
        let s = sub(&[10.0, 0.6], &[1.0, 10.0], 1.5);
        let sol = project_subproblem(&s, DEFAULT_TOL);
        assert!((sol.y[0] - 1.0).abs() < 1e-12);
        assert!((sol.y[1] - 0.5).abs() < 1e-12);
        assert!((sol.rho - 0.2).abs() < 1e-12);
    }

    #[test]
    fn oracle_trivial_cases() {
        let s = sub(&[-1.0, -1.0], &[1.0, 1.0], 1.0);
        assert_eq!(project_oracle(&s).unwrap(), vec![0.0, 0.0]);
        let s = sub(&[0.7, 0.9], &[1.0, 1.0], 0.0);
        assert_eq!(project_oracle(&s).unwrap(), vec![0.0, 0.0]);
        let s = sub(&[0.0; 13], &[1.0; 13], 1.0);
        assert!(matches!(project_oracle(&s), Err(ProjectionError::DimensionTooLarge(13))));
    }

    #[test]
    fn iteration_matches_oracle_on_random_subproblems() {
        let key = DrawKey::new(1001, Stream::Edges);
        for case in 0..2000u64 {
            let s = random_subproblem(&key, case, 7);
            let fast = project_subproblem(&s, DEFAULT_TOL);
            let exact = project_oracle(&s).unwrap();
            for l in 0..s.len() {
                assert!(
                    (fast.y[l] - exact[l]).abs() <= 1e-6,
                    "case {case} port {l}: fast={} exact={} sub={s:?}",
                    fast.y[l],
                    exact[l]
                );
            }
        }
    }

    #[test]
    fn inner_loop_bounded_by_port_count_plus_one() {
        let key = DrawKey::new(77, Stream::Edges);
        for case in 0..500u64 {
            let s = random_subproblem(&key, case, 12);
            let sol = project_subproblem(&s, DEFAULT_TOL);
            assert!(
                sol.max_inner_iterations <= s.len() + 1,
                "case {case}: {} inner iterations for {} ports",
                sol.max_inner_iterations,
                s.len()
            );
        }
    }

    #[test]
    fn projection_is_idempotent_and_nonexpansive_per_subproblem() {
        let key = DrawKey::new(55, Stream::Edges);
        for case in 0..500u64 {
            let s = random_subproblem(&key, case, 8);
            let first = project_subproblem(&s, DEFAULT_TOL);
            let again = project_subproblem(
                &Subproblem::new(first.y.clone(), s.caps().to_vec(), s.capacity()).unwrap(),
                DEFAULT_TOL,
            );
            for l in 0..s.len() {
                assert!((first.y[l] - again.y[l]).abs() <= 1e-9);
            }

            let other = random_subproblem(&key, case + 1_000_000, s.len());
            if other.len() != s.len() {
                continue;
            }
            let other = Subproblem::new(other.z().to_vec(), s.caps().to_vec(), s.capacity())
                .unwrap();
            let po = project_subproblem(&other, DEFAULT_TOL);
            let dist_in: f64 = s
                .z()
                .iter()
                .zip(other.z())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let dist_out: f64 = first
                .y
                .iter()
                .zip(&po.y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(dist_out <= dist_in + 1e-9, "case {case}: {dist_out} > {dist_in}");
        }
    }

    #[test]
    fn permuting_ports_permutes_the_projection() {
        let key = DrawKey::new(66, Stream::Edges);
        for case in 0..300u64 {
            let s = random_subproblem(&key, case, 8);
            let n = s.len();
            // Deterministic pseudo-shuffle: sort indices by a keyed draw.
            let mut perm: Vec<usize> = (0..n).collect();
            perm.sort_by(|&a, &b| {
                key.unit(case, 5000 + a as u64)
                    .partial_cmp(&key.unit(case, 5000 + b as u64))
                    .unwrap()
            });
            let zp: Vec<f64> = perm.iter().map(|&l| s.z()[l]).collect();
            let cp: Vec<f64> = perm.iter().map(|&l| s.caps()[l]).collect();
            let orig = project_subproblem(&s, DEFAULT_TOL);
            let permuted = project_subproblem(
                &Subproblem::new(zp, cp, s.capacity()).unwrap(),
                DEFAULT_TOL,
            );
            for (i, &l) in perm.iter().enumerate() {
                assert!(
                    (permuted.y[i] - orig.y[l]).abs() <= 1e-9,
                    "case {case}: permutation changed the solution"
                );
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn output_is_feasible_idempotent_and_oracle_exact(
                entries in prop::collection::vec(
                    ((-5.0..5.0f64), (0.0..5.0f64)),
                    1..=7
                ),
                capacity in 0.0..5.0f64,
            ) {
                let (z, caps): (Vec<f64>, Vec<f64>) = entries.into_iter().unzip();
                let s = Subproblem::new(z, caps, capacity).unwrap();
                let sol = project_subproblem(&s, DEFAULT_TOL);
                let mut total = 0.0;
                for l in 0..s.len() {
                    prop_assert!(sol.y[l] >= -1e-9);
                    prop_assert!(sol.y[l] <= s.caps()[l] + 1e-9);
                    total += sol.y[l];
                }
                prop_assert!(total <= s.capacity() + 1e-9);

                let again = project_subproblem(
                    &Subproblem::new(sol.y.clone(), s.caps().to_vec(), s.capacity()).unwrap(),
                    DEFAULT_TOL,
                );
                for l in 0..s.len() {
                    prop_assert!((sol.y[l] - again.y[l]).abs() <= 1e-9);
                }

                let exact = project_oracle(&s).unwrap();
                for l in 0..s.len() {
                    prop_assert!((sol.y[l] - exact[l]).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn full_projection_only_touches_violated_slices() {
        // 2 ports, 1 instance, K = 2; overload resource 0 only.
        let g = crate::model::BipartiteGraph::from_spec(GraphSpec {
            catalog: ResourceCatalog::with_count(2),
            ports: vec![
                PortSpec { id: 0, requirements: vec![2.0, 2.0] },
                PortSpec { id: 1, requirements: vec![2.0, 2.0] },
            ],
            instances: vec![InstanceSpec { id: 0, capacities: vec![1.0, 10.0] }],
            channels: vec![(0, 0), (1, 0)],
        })
        .unwrap();
        let z = Allocation::from_values(&g, vec![1.0, 0.5, 0.8, 0.25]).unwrap();
        let proj = project(&g, &z).unwrap();
        // Resource-1 slice is untouched.
        assert_eq!(proj.get(0, 1), 0.5);
        assert_eq!(proj.get(1, 1), 0.25);
        // Resource-0 slice respects the capacity of 1.
        let total = proj.get(0, 0) + proj.get(1, 0);
        assert!((total - 1.0).abs() <= 1e-9);
        assert!(crate::model::is_feasible(&g, &proj, 1e-9).unwrap());

        // Idempotence on the already-feasible output.
        let again = project(&g, &proj).unwrap();
        for (a, b) in proj.values().iter().zip(again.values()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}
