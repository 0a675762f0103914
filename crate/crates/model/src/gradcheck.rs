//! Central finite-difference checks of backpropagated gradients.

use candle_core::{DType, Tensor};
use rand::Rng;

use crate::params::ParamStore;
use crate::{ModelError, Result};
use occdiff_core::seeded_rng;

/// One checked coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|a − n| / max(|a|, |n|, floor)`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub coords: usize,
    pub step: f64,
    /// Denominator floor so coordinates with a vanishing gradient are
    /// judged on absolute error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { coords: 20, step: 1e-5, floor: 1e-6, seed: 0 }
    }
}

/// Compares the gradient of the scalar `loss` against central differences
/// at `cfg.coords` coordinates drawn uniformly over the parameters whose
/// name starts with `prefix`. The loss must be rebuilt from the live
/// parameters on every call; perturbations are written in place.
pub fn check_gradients(
    store: &ParamStore,
    prefix: &str,
    cfg: &GradCheckConfig,
    loss: impl Fn() -> Result<Tensor>,
) -> Result<Vec<GradSample>> {
    let names: Vec<(String, usize)> = store
        .iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .map(|(k, v)| (k.clone(), v.elem_count()))
        .collect();
    let total: usize = names.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(ModelError::InvalidArgument(format!("no parameters under {prefix}")));
    }
    let grads = loss()?.backward()?;
    let eval = || -> Result<f64> { Ok(loss()?.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let mut rng = seeded_rng(cfg.seed);
    let mut out = Vec::with_capacity(cfg.coords);
    for _ in 0..cfg.coords {
        let mut flat = rng.random_range(0..total);
        let (name, _) = names
            .iter()
            .find(|(_, n)| {
                if flat < *n {
                    true
                } else {
                    flat -= n;
                    false
                }
            })
            .expect("index within total");
        let var = store.get(name).expect("listed parameter");
        let analytic = match grads.get(var) {
            Some(g) => g.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?[flat],
            None => 0.0,
        };
        let orig = store.values_f64(name)?;
        let mut v = orig.clone();
        v[flat] = orig[flat] + cfg.step;
        store.assign_f64(name, &v)?;
        let plus = eval()?;
        v[flat] = orig[flat] - cfg.step;
        store.assign_f64(name, &v)?;
        let minus = eval()?;
        store.assign_f64(name, &orig)?;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
        out.push(GradSample { param: name.clone(), index: flat, analytic, numeric, rel_error });
    }
    Ok(out)
}
