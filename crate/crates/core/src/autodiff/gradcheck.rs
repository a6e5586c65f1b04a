use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Graph, ParamKind, ParamStore};
use super::tape::Var;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |a − n| / max(1e-8, |a| + |n|)` over checked coordinates.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    /// `max ‖a − n‖ / max(1e-8, ‖a‖ + ‖n‖)` over parameters, norms taken
    /// over each parameter's checked coordinates. Less sensitive than the
    /// per-coordinate figure to cancellation noise on tiny derivatives.
    pub max_tensor_rel_error: f64,
    pub coords_checked: usize,
}

fn loss_value<F>(f: &F, params: &ParamStore<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let loss = f(&mut g)?;
    Ok(g.value(loss).item())
}

/// Compares backward gradients with central differences on every coordinate
/// of every non-frozen trainable parameter.
pub fn grad_check<F>(f: F, params: &ParamStore<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    grad_check_sampled(f, params, eps, usize::MAX, 0)
}

/// Like [`grad_check`] but checks at most `per_param` randomly chosen
/// coordinates of each parameter.
pub fn grad_check_sampled<F>(
    f: F,
    params: &ParamStore<f64>,
    eps: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        max_tensor_rel_error: 0.0,
        coords_checked: 0,
    };
    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Trainable && !p.frozen)
        .map(|(n, _)| n.to_string())
        .collect();
    for name in names {
        let n = params.value(&name)?.numel();
        let coords: Vec<usize> = if per_param >= n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, per_param).into_vec()
        };
        let grad = analytic.get(&name);
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in coords {
            let base = params.value(&name)?.data()[i];
            work.value_mut(&name)?.data_mut()[i] = base + eps;
            let plus = loss_value(&f, &work)?;
            work.value_mut(&name)?.data_mut()[i] = base - eps;
            let minus = loss_value(&f, &work)?;
            work.value_mut(&name)?.data_mut()[i] = base;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.map_or(0.0, |g| g.data()[i]);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
                report.worst_values = (a, numeric);
            }
        }
        let tensor = diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-8);
        report.max_tensor_rel_error = report.max_tensor_rel_error.max(tensor);
    }
    Ok(report)
}
