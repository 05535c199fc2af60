//! Shared helpers: random trees and direct-summation leaders.

#![allow(dead_code)]

use mfa_core::dyadic::{CoefficientTree, NodeRef};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_tree(rng: &mut ChaCha8Rng, max_scale: u32) -> CoefficientTree {
    let sparsity: f64 = rng.random_range(0.0..0.8);
    CoefficientTree::from_fn(max_scale, |_, _| {
        if rng.random_bool(sparsity) {
            0.0
        } else {
            2f64.powf(rng.random_range(-12.0..2.0))
        }
    })
    .unwrap()
}

pub fn single_scale_tree(rng: &mut ChaCha8Rng, max_scale: u32, populated: u32) -> CoefficientTree {
    CoefficientTree::from_fn(max_scale, |j, _| {
        if j == populated && rng.random_bool(0.6) {
            2f64.powf(rng.random_range(-10.0..1.0))
        } else {
            0.0
        }
    })
    .unwrap()
}

/// Every node of the tree strictly below or equal to `root`, grouped by depth.
pub fn descendants(tree: &CoefficientTree, root: NodeRef) -> Vec<Vec<f64>> {
    (root.scale..=tree.max_scale())
        .map(|j| {
            (0..1u64 << j)
                .map(|k| NodeRef { scale: j, position: k })
                .filter(|n| root.contains(n))
                .map(|n| tree.get(n))
                .collect()
        })
        .collect()
}

pub fn neighbourhood(node: NodeRef) -> Vec<NodeRef> {
    let size = 1i64 << node.scale;
    let mut out: Vec<NodeRef> = [-1i64, 0, 1]
        .iter()
        .map(|d| NodeRef { scale: node.scale, position: (node.position as i64 + d).rem_euclid(size) as u64 })
        .collect();
    out.sort();
    out.dedup();
    out
}

pub fn depth_sums(tree: &CoefficientTree, node: NodeRef, p: f64) -> Vec<f64> {
    descendants(tree, node)
        .iter()
        .enumerate()
        .map(|(d, cs)| cs.iter().map(|c| c.powf(p)).sum::<f64>() / 2f64.powi(d as i32))
        .collect()
}

pub fn brute_restricted(tree: &CoefficientTree, node: NodeRef, p: f64) -> f64 {
    depth_sums(tree, node, p).into_iter().fold(0.0, f64::max).powf(1.0 / p)
}

pub fn brute_p_leader(tree: &CoefficientTree, node: NodeRef, p: f64) -> f64 {
    let per: Vec<Vec<f64>> = neighbourhood(node).into_iter().map(|m| depth_sums(tree, m, p)).collect();
    (0..per[0].len()).map(|d| per.iter().map(|s| s[d]).sum::<f64>()).fold(0.0, f64::max).powf(1.0 / p)
}

pub fn brute_inf(tree: &CoefficientTree, node: NodeRef) -> f64 {
    neighbourhood(node).into_iter().flat_map(|m| descendants(tree, m).into_iter().flatten()).fold(0.0, f64::max)
}

pub fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

pub fn nodes(tree: &CoefficientTree) -> impl Iterator<Item = NodeRef> {
    (0..=tree.max_scale()).flat_map(|j| (0..1u64 << j).map(move |k| NodeRef { scale: j, position: k }))
}
