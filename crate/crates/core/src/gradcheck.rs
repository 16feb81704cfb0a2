//! Central-difference gradient verification.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub tol: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<T, F>(store: &ParamStore<T>, f: &mut F) -> Result<T>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>, &mut Graph<T>) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let loss = f(store, &mut g)?;
    let v = g.value(loss).item();
    if !v.is_finite() {
        return Err(Error::NonFinite("finite-difference evaluation".into()));
    }
    Ok(v)
}

/// Reverse-mode gradients of `f` for every parameter, in store order.
pub fn analytic_gradients<T, F>(store: &mut ParamStore<T>, mut f: F) -> Result<Vec<Vec<f64>>>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>, &mut Graph<T>) -> Result<NodeId>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let loss = f(store, &mut g)?;
    g.backward(loss, store)?;
    let grads = store
        .ids()
        .map(|id| {
            store
                .get(id)
                .grad()
                .expect("parameter grad slot")
                .iter()
                .map(|v| v.as_f64())
                .collect()
        })
        .collect();
    store.zero_grads();
    Ok(grads)
}

/// Compares `analytic` against central differences with step `h`.
///
/// `stride` > 1 checks every `stride`-th coordinate of each parameter
/// (always including the first), which keeps large models tractable.
/// Perturbation and difference are formed in `T`, so `f` may run in a wider
/// type than the one that produced `analytic`.
pub fn compare_with_finite_differences<T, F>(
    store: &mut ParamStore<T>,
    analytic: &[Vec<f64>],
    mut f: F,
    h: f64,
    tol: f64,
    stride: usize,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>, &mut Graph<T>) -> Result<NodeId>,
{
    if h <= 0.0 {
        return Err(Error::Invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    if analytic.len() != store.len() {
        return Err(Error::Invalid(
            "analytic gradient list does not match store".into(),
        ));
    }
    let stride = stride.max(1);
    let mut checked = 0;
    let mut worst: Option<Coordinate> = None;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        for index in (0..n).step_by(stride) {
            let orig = store.get(id).values()[index];
            store.get_mut(id).values_mut()[index] = orig + T::of(h);
            let plus = eval(store, &mut f);
            store.get_mut(id).values_mut()[index] = orig - T::of(h);
            let minus = eval(store, &mut f);
            store.get_mut(id).values_mut()[index] = orig;
            let numeric = ((plus? - minus?) / T::of(2.0 * h)).as_f64();
            let a = analytic[id.index()][index];
            let rel_error = relative_error(a, numeric);
            checked += 1;
            if worst.as_ref().is_none_or(|w| rel_error > w.rel_error) {
                worst = Some(Coordinate {
                    param: store.name(id).to_string(),
                    index,
                    analytic: a,
                    numeric,
                    rel_error,
                });
            }
        }
    }
    let max_rel_error = worst.as_ref().map_or(0.0, |w| w.rel_error);
    Ok(GradCheckReport {
        checked,
        max_rel_error,
        worst,
        tol,
        passed: max_rel_error <= tol,
    })
}

/// Full check of every coordinate: reverse mode vs. central differences.
pub fn finite_diff_check<T, F>(
    store: &mut ParamStore<T>,
    mut f: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>, &mut Graph<T>) -> Result<NodeId>,
{
    let analytic = analytic_gradients(store, &mut f)?;
    compare_with_finite_differences(store, &analytic, f, h, tol, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::scalar(3.0)).unwrap();
        let f = |s: &ParamStore<f64>, g: &mut Graph<f64>| {
            let x = g.param(s, w);
            g.mul(x, x)
        };
        let analytic = analytic_gradients(&mut store, f).unwrap();
        assert_eq!(analytic, vec![vec![6.0]]);
        let report = finite_diff_check(&mut store, f, 1e-5, 1e-4).unwrap();
        assert!(report.passed);
        assert!((report.worst.unwrap().numeric - 6.0).abs() < 1e-8);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut store = ParamStore::new();
        let w = store
            .insert("w", Tensor::matrix(1, 3, vec![0.2, -0.4, 0.9]).unwrap())
            .unwrap();
        let f = |s: &ParamStore<f64>, g: &mut Graph<f64>| {
            let x = g.param(s, w);
            let t = g.tanh(x)?;
            g.sum(t)
        };
        let mut analytic = analytic_gradients(&mut store, f).unwrap();
        analytic[0][1] *= 1.01;
        let report =
            compare_with_finite_differences(&mut store, &analytic, f, 1e-5, 1e-4, 1).unwrap();
        assert!(!report.passed);
        let worst = report.worst.unwrap();
        assert_eq!((worst.param.as_str(), worst.index), ("w", 1));
    }

    #[test]
    fn non_positive_step_rejected() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::scalar(1.0)).unwrap();
        let f = |s: &ParamStore<f64>, g: &mut Graph<f64>| Ok(g.param(s, w));
        assert!(
            compare_with_finite_differences(&mut store, &[vec![1.0]], f, 0.0, 1e-4, 1).is_err()
        );
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::scalar(1e-6)).unwrap();
        // ln(w) at w - h = 0 is not finite.
        let f = |s: &ParamStore<f64>, g: &mut Graph<f64>| {
            let x = g.param(s, w);
            g.ln(x)
        };
        assert!(finite_diff_check(&mut store, f, 1e-6, 1e-4).is_err());
    }
}
