//! Finite-difference oracle for backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::{Array, KernelError};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Check at most this many coordinates, sampled with `seed`.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Magnitude below which errors are measured absolutely rather than
    /// relative to the gradient.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_coords: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |a - n| / max(|a|, |n|, floor)` over checked coordinates.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates left out because `x - h` or `x + h` lands on a different
    /// smooth piece than `x` (a ReLU sign or max-pool winner flips), where
    /// central differences do not estimate the derivative.
    pub nonsmooth: usize,
}

/// Compares the backward-pass gradient of a scalar function against central
/// differences `(f(x + h) - f(x - h)) / 2h` at `point`.
pub fn grad_check<F>(f: F, point: &[Array], opts: &GradCheckOptions) -> Result<GradCheckReport, KernelError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, KernelError>,
{
    let analytic = {
        let mut g = Graph::with_branch_tracking();
        let ids: Vec<NodeId> = point.iter().map(|a| g.leaf(a.clone(), true)).collect();
        let root = f(&mut g, &ids)?;
        let signature = g.branch_signature();
        g.backward(root)?;
        let grads = ids
            .iter()
            .zip(point)
            .map(|(&id, a)| g.take_grad(id).unwrap_or_else(|| Array::zeros(a.shape())))
            .collect::<Vec<_>>();
        (grads, signature)
    };
    let (analytic, signature) = analytic;

    let eval = |inputs: &[Array]| -> Result<(f64, Option<u64>), KernelError> {
        let mut g = Graph::with_branch_tracking();
        let ids: Vec<NodeId> = inputs.iter().map(|a| g.leaf(a.clone(), false)).collect();
        let root = f(&mut g, &ids)?;
        Ok((g.value(root).data()[0], g.branch_signature()))
    };

    let mut coords: Vec<(usize, usize)> = point
        .iter()
        .enumerate()
        .flat_map(|(i, a)| (0..a.len()).map(move |j| (i, j)))
        .collect();
    if let Some(k) = opts.max_coords {
        if coords.len() > k {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut picked = rand::seq::index::sample(&mut rng, coords.len(), k).into_vec();
            picked.sort_unstable();
            coords = picked.into_iter().map(|i| coords[i]).collect();
        }
    }

    let mut work: Vec<Array> = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        nonsmooth: 0,
    };
    for (i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + opts.h;
        let (fp, sp) = eval(&work)?;
        work[i].data_mut()[j] = orig - opts.h;
        let (fm, sm) = eval(&work)?;
        work[i].data_mut()[j] = orig;
        if sp != signature || sm != signature {
            report.nonsmooth += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * opts.h);
        let a = analytic[i].data()[j];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((i, j));
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencils_crossing_a_relu_kink_are_reported_not_compared() {
        let f = |g: &mut Graph, ids: &[NodeId]| {
            let r = g.relu(ids[0]);
            Ok(g.sum(r))
        };
        let point = [Array::from_vec(vec![3e-6, 0.5, -0.5])];
        let report = grad_check(f, &point, &GradCheckOptions::default()).unwrap();
        assert_eq!(report.nonsmooth, 1);
        assert_eq!(report.checked, 2);
        assert!(report.max_rel_error < 1e-9);
    }
}
