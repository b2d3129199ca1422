use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, Graph, ParameterSet, Var};
use crate::error::{Error, Result};

/// Coordinates sampled per tensor.
pub const SAMPLES_PER_TENSOR: usize = 64;
/// Denominator floor in the relative error.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub n_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks the tape gradient of `f` against central differences.
pub fn gradient_check<F>(f: F, params: &ParameterSet, eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&ParameterSet, &mut Graph) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(params, &mut g)?;
    let analytic = g.backward(loss)?;
    let value = |p: &ParameterSet| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(p, &mut g)?;
        Ok(g.value(l).data()[0])
    };
    compare_gradients(value, params, &analytic, eps, seed)
}

/// Compares supplied gradients with central differences of `loss`.
/// Tensors absent from `analytic` are treated as all-zero gradients.
pub fn compare_gradients<F>(
    loss: F,
    params: &ParameterSet,
    analytic: &Gradients,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParameterSet) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("gradient check eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report =
        GradCheckReport { max_rel_error: 0.0, worst_tensor: String::new(), worst_index: 0, n_checked: 0 };
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.require(&name)?.len();
        let mut idx = sample(&mut rng, n, n.min(SAMPLES_PER_TENSOR)).into_vec();
        idx.sort_unstable();
        for i in idx {
            let orig = params.require(&name)?.data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let plus = loss(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let minus = loss(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(&name).map_or(0.0, |t| t.data()[i]);
            let err = relative_error(a, numeric);
            report.n_checked += 1;
            if err > report.max_rel_error || report.n_checked == 1 {
                report.max_rel_error = err;
                report.worst_tensor = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
