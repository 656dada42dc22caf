//! Finite-difference verification of reverse-mode gradients.

use crate::rng::Rng;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use super::Result;

/// Central-difference step in binary64.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// Number of coordinates compared.
    pub coords_checked: usize,
}

/// Compares the reverse-mode gradient of a scalar-valued computation against
/// central finite differences (`h = 1e-6`), checking every coordinate of
/// every input.
///
/// The relative error per coordinate is `|a - fd| / max(|a|, |fd|, 1e-3)`;
/// the floor keeps finite-difference roundoff noise from dominating
/// coordinates whose true gradient is zero or tiny.
pub fn grad_check<F>(build: F, inputs: &[Tensor]) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    run_check(build, inputs, None, 0)
}

/// Like [`grad_check`] but comparing at most `max_coords_per_input`
/// seeded-randomly chosen coordinates of each input. Used for model-sized
/// computations where perturbing every parameter twice is wasteful.
pub fn grad_check_sampled<F>(
    build: F,
    inputs: &[Tensor],
    max_coords_per_input: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    run_check(build, inputs, Some(max_coords_per_input), seed)
}

fn run_check<F>(
    build: F,
    inputs: &[Tensor],
    max_coords: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let h = DEFAULT_FD_STEP;

    // Analytic pass.
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| graph.param(&t.clone().with_grad()))
        .collect();
    let root = build(&mut graph, &ids)?;
    graph.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| graph.grad(id).unwrap().to_vec()).collect();
    drop(graph);

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = perturbed.iter().map(|t| g.constant(t)).collect();
        let root = build(&mut g, &ids)?;
        Ok(g.scalar_value(root))
    };

    let mut rng = Rng::new(seed);
    let mut max_rel_err: f64 = 0.0;
    let mut coords_checked = 0;
    let mut work: Vec<Tensor> = inputs.to_vec();

    for (input_idx, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match max_coords {
            Some(cap) if cap < n => {
                let mut perm: Vec<usize> = rng.noise_argsort(n);
                perm.truncate(cap);
                perm
            }
            _ => (0..n).collect(),
        };
        for &c in &coords {
            let orig = input.data()[c];
            work[input_idx].data_mut()[c] = orig + h;
            let plus = eval(&work)?;
            work[input_idx].data_mut()[c] = orig - h;
            let minus = eval(&work)?;
            work[input_idx].data_mut()[c] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic[input_idx][c];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            if rel > max_rel_err {
                max_rel_err = rel;
            }
            coords_checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_err, coords_checked })
}
