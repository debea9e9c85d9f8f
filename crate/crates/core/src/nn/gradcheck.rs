use std::fmt;

use super::matrix::Matrix;
use super::Parameters;

/// Smallest magnitude used as the denominator of the relative error, so that
/// gradients which are zero on both sides do not divide by zero.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| t.max_rel_error.is_nan() || t.max_rel_error >= self.tolerance)
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradient check, tolerance {:e}", self.tolerance)?;
        for t in &self.tensors {
            let mark = if t.max_rel_error < self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "  {:<16} {:>10.3e}  [{}] analytic {:.6e} numeric {:.6e}  {mark}",
                t.name, t.max_rel_error, t.worst_index, t.analytic, t.numeric
            )?;
        }
        Ok(())
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `f` for every entry
/// of every tensor of `model`. `f` must be deterministic; callers freeze
/// dropout by reseeding inside the closure.
pub fn grad_check<P, F>(model: &mut P, analytic: &P, mut f: F, step: f64, tolerance: f64) -> GradCheckReport
where
    P: Parameters<f64>,
    F: FnMut(&P) -> f64,
{
    let grads: Vec<(String, Matrix<f64>)> = analytic.tensors().into_iter().map(|(n, m)| (n, m.clone())).collect();
    let mut tensors = Vec::with_capacity(grads.len());
    for (t, (name, g)) in grads.iter().enumerate() {
        let mut check = TensorCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..g.as_slice().len() {
            let orig = model.tensors_mut()[t].1.as_slice()[i];
            model.tensors_mut()[t].1.as_mut_slice()[i] = orig + step;
            let plus = f(model);
            model.tensors_mut()[t].1.as_mut_slice()[i] = orig - step;
            let minus = f(model);
            model.tensors_mut()[t].1.as_mut_slice()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = g.as_slice()[i];
            let err = rel_error(analytic, numeric);
            if err > check.max_rel_error || err.is_nan() {
                check = TensorCheck {
                    name: name.clone(),
                    max_rel_error: if err.is_nan() { f64::INFINITY } else { err },
                    worst_index: i,
                    analytic,
                    numeric,
                };
            }
        }
        tensors.push(check);
    }
    GradCheckReport { tolerance, tensors }
}
