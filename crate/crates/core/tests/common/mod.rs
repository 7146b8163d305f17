#![allow(dead_code)]

use std::sync::Arc;

use flownet_core::generate::{random_feasible_inflow, random_network, RandomNetworkSpec};
use flownet_core::{FlowNetwork, Greenshields, LinearProgram, NetworkPhysics};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Best objective over all basic feasible solutions of `max c^T x, A x <= b,
/// x >= 0`, found by solving every square subsystem of active constraints.
/// `None` when no vertex is feasible.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.objective.len();
    let mut rows: Vec<(Vec<f64>, f64)> = lp
        .rows
        .iter()
        .cloned()
        .zip(lp.rhs.iter().copied())
        .collect();
    for j in 0..n {
        let mut r = vec![0.0; n];
        r[j] = -1.0;
        rows.push((r, 0.0));
    }
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let a = DMatrix::from_fn(n, n, |i, j| rows[pick[i]].0[j]);
        let b = DVector::from_fn(n, |i, _| rows[pick[i]].1);
        if let Some(x) = a.lu().solve(&b) {
            let x: Vec<f64> = x.iter().copied().collect();
            let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if x.iter().all(|v| v.is_finite()) && lp.max_violation(&x) <= 1e-9 * scale {
                let obj: f64 = lp.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
                best = Some(best.map_or(obj, |b: f64| b.max(obj)));
            }
        }
        // Next n-combination of row indices in lexicographic order.
        let m = rows.len();
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < m - n + i {
                break;
            }
        }
        pick[i] += 1;
        for k in i + 1..n {
            pick[k] = pick[k - 1] + 1;
        }
    }
}

pub fn physics(network: &FlowNetwork) -> Arc<NetworkPhysics> {
    Arc::new(NetworkPhysics::new(
        network,
        Arc::new(Greenshields::normalized()),
    ))
}

/// Random network with at most `max_links` links.
pub fn small_network<R: Rng>(rng: &mut R, max_links: usize) -> FlowNetwork {
    let spec = RandomNetworkSpec {
        nodes: (1, 3),
        max_destinations: 2,
        extra_links: (0, 2),
        ..RandomNetworkSpec::default()
    };
    loop {
        let net = random_network(rng, &spec);
        if net.link_count() <= max_links {
            return net;
        }
    }
}

/// Random allocation LP: densities anywhere in `[0, jam]`, inflow a random
/// fraction of the largest feasible one at those densities.
pub fn random_allocation_lp<R: Rng>(rng: &mut R, max_links: usize) -> LinearProgram {
    use flownet_core::build_polytope;
    let net = small_network(rng, max_links);
    let phys = physics(&net);
    let rho: Vec<f64> = phys
        .jam_densities()
        .iter()
        .map(|j| rng.random_range(0.0..*j))
        .collect();
    let upper = phys.sustainable_inflows(&rho).unwrap();
    let frac = rng.random_range(0.0..1.0);
    let inflow = random_feasible_inflow(rng, &net, &upper, frac).unwrap();
    let poly = build_polytope(&net, &phys, &rho, &inflow).unwrap();
    let alpha: Vec<f64> = (0..net.link_count())
        .map(|_| rng.random_range(0.1..10.0))
        .collect();
    poly.linear_program(&alpha)
}
