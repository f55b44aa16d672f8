use serde::Serialize;

use super::{AutogradError, Graph, ParamStore, Var};

/// Per-parameter outcome of a finite-difference comparison.
#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose probe straddled a rectifier kink.
    pub excluded: usize,
    /// Entries whose analytic and numeric values agree to within the
    /// roundoff resolution of the difference quotient.
    pub noise_limited: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

pub const ROUNDOFF_FACTOR: f64 = 1e3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar function of `store` against
/// central differences, entry by entry, for every trainable parameter.
///
/// `f` must build its graph deterministically from the store. A probe whose
/// `+eps` and `-eps` evaluations switch any rectifier on or off is skipped, and
/// so is an out-of-tolerance entry whose absolute disagreement is below the roundoff resolution
/// `ROUNDOFF_FACTOR * machine_eps * max(1, |loss|) / eps`; both are counted.
pub fn grad_check<F>(f: F, store: &mut ParamStore, eps: f64, tolerance: f64) -> Result<GradCheckReport, AutogradError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, AutogradError>,
{
    if eps <= 0.0 {
        return Err(AutogradError::InvalidArgument("epsilon must be positive"));
    }
    store.zero_grads();
    let mut graph = Graph::new();
    let loss = f(&mut graph, store)?;
    graph.backward(loss)?;
    graph.accumulate_param_grads(store);
    let resolution = ROUNDOFF_FACTOR * f64::EPSILON * graph.value(loss).item().abs().max(1.0) / eps;

    let eval = |store: &ParamStore| -> Result<(f64, u64), AutogradError> {
        let mut g = Graph::new();
        let v = f(&mut g, store)?;
        Ok((g.value(v).item(), g.relu_signature()))
    };

    let ids: Vec<_> = store.ids().collect();
    let mut params = Vec::new();
    for id in ids {
        if !store.get(id).trainable {
            continue;
        }
        let n = store.get(id).value.shape().len();
        let mut max_rel: f64 = 0.0;
        let mut excluded = 0;
        let mut noise_limited = 0;
        for k in 0..n {
            let original = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = original + eps;
            let (plus, sig_plus) = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = original - eps;
            let (minus, sig_minus) = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = original;
            if sig_plus != sig_minus {
                excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = store.get(id).grad.data()[k];
            let rel = relative_error(analytic, numeric);
            if rel >= tolerance && (analytic - numeric).abs() < resolution {
                noise_limited += 1;
                continue;
            }
            max_rel = max_rel.max(rel);
        }
        params.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error: max_rel,
            checked: n - excluded - noise_limited,
            excluded,
            noise_limited,
            passed: max_rel < tolerance,
        });
    }
    store.zero_grads();
    Ok(GradCheckReport {
        epsilon: eps,
        tolerance,
        params,
    })
}
