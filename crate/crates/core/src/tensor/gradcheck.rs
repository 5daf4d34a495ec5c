//! Central finite-difference gradient checking (64-bit only).

use super::{Gradients, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst `‖analytic − numeric‖ / max(‖numeric‖, 1e-12)` over tensors.
    pub max_rel_error: f64,
    pub per_tensor: Vec<f64>,
    pub worst: usize,
}

/// Check `f` against central differences with respect to each tensor in
/// `params` that has `requires_grad` set.
pub fn finite_diff_check<F>(mut f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = params
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let id = store.push(format!("p{i}"), t.clone(), false);
            store.get_mut(id).requires_grad = t.requires_grad;
            id
        })
        .collect();
    let mut wrapped = |tape: &mut Tape<'_, f64>| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
        f(tape, &vars)
    };
    let analytic = analytic_gradients(&store, &mut wrapped)?;
    let numeric = numeric_gradients(&mut store, &mut wrapped, eps)?;
    Ok(compare(&store, &analytic, &numeric))
}

/// Same check over every trainable tensor of an existing store.
pub fn finite_diff_check_store<F>(store: &mut ParamStore<f64>, mut f: F, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<'_, f64>) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &mut f)?;
    let numeric = numeric_gradients(store, &mut f, eps)?;
    Ok(compare(store, &analytic, &numeric))
}

pub fn analytic_gradients<F>(store: &ParamStore<f64>, f: &mut F) -> Result<Gradients<f64>>
where
    F: FnMut(&mut Tape<'_, f64>) -> Result<Var>,
{
    let mut tape = Tape::with_params(store);
    let loss = f(&mut tape)?;
    let v = tape.scalar(loss);
    if !v.is_finite() {
        return Err(Error::NonFinite(v));
    }
    tape.backward(loss)
}

fn eval<F>(store: &ParamStore<f64>, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape<'_, f64>) -> Result<Var>,
{
    let mut tape = Tape::with_params(store);
    let loss = f(&mut tape)?;
    let v = tape.scalar(loss);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(v))
    }
}

/// Central differences for every entry of every trainable tensor; `None` for
/// frozen tensors.
pub fn numeric_gradients<F>(store: &mut ParamStore<f64>, f: &mut F, eps: f64) -> Result<Vec<Option<Vec<f64>>>>
where
    F: FnMut(&mut Tape<'_, f64>) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        if !store.get(id).requires_grad {
            out.push(None);
            continue;
        }
        let n = store.get(id).numel();
        let mut g = vec![0.0; n];
        for (j, slot) in g.iter_mut().enumerate() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + eps;
            let plus = eval(store, f);
            store.get_mut(id).data_mut()[j] = orig - eps;
            let minus = eval(store, f);
            store.get_mut(id).data_mut()[j] = orig;
            *slot = (plus? - minus?) / (2.0 * eps);
        }
        out.push(Some(g));
    }
    Ok(out)
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let norm = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(NORM_FLOOR)
}

fn compare(store: &ParamStore<f64>, analytic: &Gradients<f64>, numeric: &[Option<Vec<f64>>]) -> GradCheckReport {
    let mut per_tensor = Vec::new();
    for (id, num) in store.ids().zip(numeric) {
        let Some(num) = num else {
            per_tensor.push(0.0);
            continue;
        };
        let zeros;
        let ana = match analytic.param(id) {
            Some(a) => a,
            None => {
                zeros = vec![0.0; num.len()];
                &zeros
            }
        };
        per_tensor.push(relative_error(ana, num));
    }
    let (worst, max_rel_error) = per_tensor
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    GradCheckReport {
        max_rel_error,
        per_tensor,
        worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_passes() {
        // f(x) = xᵀ A x with A fixed
        let a = Tensor::from_f64(&[3, 3], &[2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 4.0]).unwrap();
        let x = Tensor::from_f64(&[1, 3], &[0.7, -1.2, 0.4]).unwrap().with_grad();
        let report = finite_diff_check(
            |tape, v| {
                let ax = tape.matmul_nt(v[1], v[0])?; // x · Aᵀ
                let q = tape.mul(ax, v[1])?;
                Ok(tape.sum(q))
            },
            &[a, x],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn constant_function_reports_zero() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap().with_grad();
        let report = finite_diff_check(|tape, _| tape.constant(&[1], vec![3.0]), &[x], 1e-5).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut store = ParamStore::new();
        let id = store.push("x", Tensor::from_f64(&[3], &[0.3, -0.8, 1.5]).unwrap(), false);
        let mut f = |tape: &mut Tape<'_, f64>| {
            let x = tape.param(id);
            let g = tape.gelu(x);
            let q = tape.mul(g, x)?;
            Ok(tape.sum(q))
        };
        let analytic = analytic_gradients(&store, &mut f).unwrap();
        let corrupted: Vec<f64> = analytic.param(id).unwrap().iter().map(|g| g * 1.1).collect();
        let numeric = numeric_gradients(&mut store, &mut f, 1e-5).unwrap();
        let err = relative_error(&corrupted, numeric[0].as_ref().unwrap());
        assert!((err - 0.1).abs() < 1e-6, "err = {err}");
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = Tensor::from_f64(&[1], &[1.0]).unwrap().with_grad();
        let r = finite_diff_check(|tape, _| tape.constant(&[1], vec![f64::NAN]), &[x], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
