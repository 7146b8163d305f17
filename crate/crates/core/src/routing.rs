//! Local routing policies and sampling-based checks of their defining properties.
//!
//! A policy sees only the densities of a node's own outgoing links and the
//! node's total inflow. It must conserve the inflow unless every outgoing link
//! is jammed, and must never route onto a jammed link.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fundamental::{LinkPhysics, NetworkPhysics, PHI_FLOOR};
use crate::network::{FlowNetwork, LinkId, NodeId, NodeKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoutingError {
    #[error("every outgoing link is jammed")]
    AllLinksJammed,
}

/// Local view of one outgoing link.
#[derive(Debug, Clone, Copy)]
pub struct LocalLink<'a> {
    pub physics: &'a LinkPhysics,
    pub density: f64,
}

pub trait RoutingPolicy: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;

    /// Splits `inflow` over `outgoing`, writing one amount per link into `routed`.
    fn route(
        &self,
        outgoing: &[LocalLink<'_>],
        inflow: f64,
        routed: &mut [f64],
    ) -> Result<(), RoutingError>;
}

/// Routes in proportion to each link's maximum sustainable inflow.
#[derive(Debug, Clone, Copy, Default)]
pub struct Proportional;

impl RoutingPolicy for Proportional {
    fn name(&self) -> &str {
        "proportional"
    }

    fn route(
        &self,
        outgoing: &[LocalLink<'_>],
        inflow: f64,
        routed: &mut [f64],
    ) -> Result<(), RoutingError> {
        let mut total = 0.0;
        for (slot, l) in routed.iter_mut().zip(outgoing) {
            let phi = l.physics.phi_at(l.density);
            *slot = if phi < PHI_FLOOR { 0.0 } else { phi };
            total += *slot;
        }
        if total <= 0.0 || !total.is_finite() {
            routed.iter_mut().for_each(|r| *r = 0.0);
            return Err(RoutingError::AllLinksJammed);
        }
        let scale = inflow / total;
        routed.iter_mut().for_each(|r| *r *= scale);
        Ok(())
    }
}

/// Splits the inflow equally over the links that are not jammed, ignoring
/// congestion. A valid local policy that is not congestion aware.
#[derive(Debug, Clone, Copy, Default)]
pub struct EqualSplit;

impl RoutingPolicy for EqualSplit {
    fn name(&self) -> &str {
        "broken_equal_split"
    }

    fn route(
        &self,
        outgoing: &[LocalLink<'_>],
        inflow: f64,
        routed: &mut [f64],
    ) -> Result<(), RoutingError> {
        let open = outgoing
            .iter()
            .filter(|l| !l.physics.is_jammed(l.density))
            .count();
        for (slot, l) in routed.iter_mut().zip(outgoing) {
            *slot = 0.0;
            if open > 0 && !l.physics.is_jammed(l.density) {
                *slot = inflow / open as f64;
            }
        }
        if open == 0 {
            return Err(RoutingError::AllLinksJammed);
        }
        Ok(())
    }
}

/// Proportional split for explicit link parameters; see [`Proportional`].
pub fn proportional_route(
    physics: &[&LinkPhysics],
    densities: &[f64],
    inflow: f64,
) -> Result<Vec<f64>, RoutingError> {
    let local: Vec<LocalLink<'_>> = physics
        .iter()
        .zip(densities)
        .map(|(p, &density)| LocalLink {
            physics: p,
            density,
        })
        .collect();
    let mut routed = vec![0.0; local.len()];
    Proportional.route(&local, inflow, &mut routed)?;
    Ok(routed)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckError {
    #[error("at least one sample is required")]
    NoSamples,
    #[error("node {0} is not a routing node of this network")]
    NotRoutingNode(NodeId),
    #[error("reference profile has {got} entries, expected {expected}")]
    ProfileLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConservationViolation {
    /// Routed total differs from the inflow although some link is open.
    Conservation {
        node: NodeId,
        densities: Vec<f64>,
        inflow: f64,
        residual: f64,
    },
    /// Positive flow routed onto a jammed link.
    JammedLinkLoaded {
        node: NodeId,
        link: LinkId,
        densities: Vec<f64>,
        inflow: f64,
        routed: f64,
    },
    Negative {
        node: NodeId,
        link: LinkId,
        routed: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConservationReport {
    pub samples: usize,
    /// Total violations found; `violations` keeps at most the first thousand.
    pub violation_count: usize,
    pub violations: Vec<ConservationViolation>,
}

impl ConservationReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AwarenessViolation {
    pub node: NodeId,
    pub densities: Vec<f64>,
    pub inflow: f64,
    pub link: LinkId,
    pub routed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AwarenessReport {
    pub checked_profile: Vec<f64>,
    /// Number of (profile, inflow) pairs evaluated.
    pub samples: usize,
    /// Total violations found; `violations` keeps at most the first thousand.
    pub violation_count: usize,
    pub violations: Vec<AwarenessViolation>,
}

impl AwarenessReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }
}

/// Caps stored counterexamples.
const MAX_RECORDED: usize = 1000;

fn node_links<'a>(
    network: &FlowNetwork,
    physics: &'a NetworkPhysics,
    node: NodeId,
) -> Result<(Vec<LinkId>, Vec<&'a LinkPhysics>), CheckError> {
    match network.kind(node) {
        Some(NodeKind::Origin | NodeKind::Intermediate) => {}
        _ => return Err(CheckError::NotRoutingNode(node)),
    }
    let out = network.outgoing(node).unwrap_or(&[]).to_vec();
    let phys = out.iter().map(|&l| physics.link(l)).collect();
    Ok((out, phys))
}

fn local<'a>(phys: &[&'a LinkPhysics], densities: &[f64]) -> Vec<LocalLink<'a>> {
    phys.iter()
        .zip(densities)
        .map(|(p, &density)| LocalLink {
            physics: p,
            density,
        })
        .collect()
}

/// Samples densities and inflows at `node` and checks flow conservation and
/// jam exclusion. Boundary profiles (all empty, one link jammed, all but one
/// jammed) are always included.
pub fn check_conservation(
    policy: &dyn RoutingPolicy,
    network: &FlowNetwork,
    physics: &NetworkPhysics,
    node: NodeId,
    samples: usize,
    seed: u64,
) -> Result<ConservationReport, CheckError> {
    if samples == 0 {
        return Err(CheckError::NoSamples);
    }
    let (links, phys) = node_links(network, physics, node)?;
    let n = links.len();
    let jam: Vec<f64> = phys.iter().map(|p| p.jam_density).collect();
    let total_capacity: f64 = phys.iter().map(|p| p.capacity).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut profiles: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for j in 0..n {
        let mut one = vec![0.0; n];
        one[j] = jam[j];
        profiles.push(one);
        let mut all_but_one = jam.clone();
        all_but_one[j] = 0.0;
        profiles.push(all_but_one);
    }

    let mut report = ConservationReport::default();
    let mut routed = vec![0.0; n];
    let mut k = 0;
    while report.samples < samples {
        let densities = if k < profiles.len() {
            profiles[k].clone()
        } else {
            jam.iter()
                .map(|&j| {
                    if rng.random_bool(0.1) {
                        j
                    } else {
                        rng.random_range(0.0..=j)
                    }
                })
                .collect()
        };
        let inflow = if k == 0 {
            0.0
        } else {
            rng.random_range(0.0..=2.0 * total_capacity)
        };
        k += 1;

        let view = local(&phys, &densities);
        let all_jammed = view.iter().all(|l| l.density >= l.physics.jam_density);
        if all_jammed {
            continue;
        }
        report.samples += 1;
        let sum = match policy.route(&view, inflow, &mut routed) {
            Ok(()) => routed.iter().sum::<f64>(),
            Err(RoutingError::AllLinksJammed) => 0.0,
        };
        let mut record = |v: ConservationViolation| {
            report.violation_count += 1;
            if report.violations.len() < MAX_RECORDED {
                report.violations.push(v);
            }
        };
        if (sum - inflow).abs() > 1e-9 * inflow + 1e-15 {
            record(ConservationViolation::Conservation {
                node,
                densities: densities.clone(),
                inflow,
                residual: inflow - sum,
            });
        }
        for (i, l) in view.iter().enumerate() {
            if routed[i] < 0.0 {
                record(ConservationViolation::Negative {
                    node,
                    link: links[i],
                    routed: routed[i],
                });
            }
            if l.density >= l.physics.jam_density && routed[i] != 0.0 {
                record(ConservationViolation::JammedLinkLoaded {
                    node,
                    link: links[i],
                    densities: densities.clone(),
                    inflow,
                    routed: routed[i],
                });
            }
        }
    }
    Ok(report)
}

/// Evaluates the congestion-awareness implication for one local configuration:
/// every link at or above its reference density may receive at most its
/// maximum sustainable inflow, provided the inflow itself is sustainable.
///
/// Returns `(link position, routed, bound)` for each offending link.
pub fn awareness_violations_at(
    policy: &dyn RoutingPolicy,
    outgoing: &[LocalLink<'_>],
    reference: &[f64],
    inflow: f64,
) -> Vec<(usize, f64, f64)> {
    let phis: Vec<f64> = outgoing
        .iter()
        .map(|l| l.physics.phi_at(l.density))
        .collect();
    let bound: f64 = phis.iter().sum();
    if inflow > bound {
        return Vec::new();
    }
    let mut routed = vec![0.0; outgoing.len()];
    if policy.route(outgoing, inflow, &mut routed).is_err() {
        routed.iter_mut().for_each(|r| *r = 0.0);
    }
    let mut out = Vec::new();
    for (i, l) in outgoing.iter().enumerate() {
        if l.density < reference[i] {
            continue;
        }
        let tol = 1e-9 * phis[i].max(inflow);
        if routed[i] > phis[i] + tol {
            out.push((i, routed[i], phis[i]));
        }
    }
    out
}

/// Samples every routing node of `network` and checks congestion awareness
/// at the reference profile `rho_star` (one entry per link).
pub fn check_congestion_aware(
    policy: &dyn RoutingPolicy,
    network: &FlowNetwork,
    physics: &NetworkPhysics,
    rho_star: &[f64],
    samples_per_node: usize,
    seed: u64,
) -> Result<AwarenessReport, CheckError> {
    if samples_per_node == 0 {
        return Err(CheckError::NoSamples);
    }
    if rho_star.len() != network.link_count() {
        return Err(CheckError::ProfileLength {
            expected: network.link_count(),
            got: rho_star.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AwarenessReport {
        checked_profile: rho_star.to_vec(),
        ..Default::default()
    };

    for node in network.non_destinations() {
        let (links, phys) = node_links(network, physics, node)?;
        let n = links.len();
        let reference: Vec<f64> = links
            .iter()
            .zip(&phys)
            .map(|(l, p)| rho_star[l.0].clamp(0.0, p.jam_density))
            .collect();
        let jam: Vec<f64> = phys.iter().map(|p| p.jam_density).collect();

        let mut corners = vec![reference.clone()];
        for j in 0..n {
            let mut near = reference.clone();
            near[j] = jam[j] * (1.0 - 1e-9);
            corners.push(near);
        }

        for k in 0..samples_per_node {
            let densities: Vec<f64> = if k < corners.len() {
                corners[k].clone()
            } else if k % 2 == 0 {
                reference
                    .iter()
                    .zip(&jam)
                    .map(|(&lo, &hi)| rng.random_range(lo..=hi))
                    .collect()
            } else {
                jam.iter().map(|&hi| rng.random_range(0.0..=hi)).collect()
            };
            let view = local(&phys, &densities);
            let bound: f64 = view.iter().map(|l| l.physics.phi_at(l.density)).sum();
            let inflow = if k < corners.len() || rng.random_bool(0.1) {
                bound
            } else {
                rng.random_range(0.0..=bound)
            };
            report.samples += 1;
            for (i, routed, phi) in awareness_violations_at(policy, &view, &reference, inflow) {
                report.violation_count += 1;
                if report.violations.len() < MAX_RECORDED {
                    report.violations.push(AwarenessViolation {
                        node,
                        densities: densities.clone(),
                        inflow,
                        link: links[i],
                        routed,
                        bound: phi,
                    });
                }
            }
        }
    }
    Ok(report)
}
