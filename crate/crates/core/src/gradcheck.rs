//! Central finite-difference oracle for checking hand-derived gradients.
//!
//! Only forward evaluations are used here, so the oracle shares no code path
//! with any backward pass it is compared against.

use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-6;
pub const DEFAULT_ABS_FLOOR: f64 = 1e-8;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + step;
            let plus = f(&x);
            x[i] = point[i] - step;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Central differences of `f` with respect to a subset of coordinates of `t`.
pub fn central_difference_at(
    t: &Tensor,
    indices: &[usize],
    mut f: impl FnMut(&Tensor) -> f64,
    step: f64,
) -> Vec<f64> {
    let mut probe = t.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = t.data()[i];
            probe.data_mut()[i] = orig + step;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - step;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Central differences over every coordinate of `t`.
pub fn central_difference_tensor(t: &Tensor, f: impl FnMut(&Tensor) -> f64, step: f64) -> Tensor {
    let all: Vec<usize> = (0..t.len()).collect();
    let g = central_difference_at(t, &all, f, step);
    Tensor::new(t.shape().to_vec(), g).expect("same shape as input")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    /// Largest `|a - n| / max(|a|, |n|)` among entries failing the absolute floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub passed: bool,
}

/// An entry passes when `|a - n| <= abs_floor` or `|a - n| <= rel_tol * max(|a|, |n|)`.
pub fn compare(analytic: &[f64], numeric: &[f64], rel_tol: f64, abs_floor: f64) -> Comparison {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut out = Comparison {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: None,
        checked: analytic.len(),
        passed: true,
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let abs = (a - n).abs();
        out.max_abs_error = out.max_abs_error.max(abs);
        if abs <= abs_floor {
            continue;
        }
        let rel = abs / a.abs().max(n.abs());
        if rel > out.max_rel_error {
            out.max_rel_error = rel;
            out.worst_index = Some(i);
        }
        if !(rel <= rel_tol) {
            out.passed = false;
        }
    }
    out
}

/// Merge comparisons from several tensors into one verdict.
pub fn merge(parts: &[Comparison]) -> Comparison {
    let mut out = Comparison {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: None,
        checked: 0,
        passed: true,
    };
    for p in parts {
        out.checked += p.checked;
        out.passed &= p.passed;
        out.max_abs_error = out.max_abs_error.max(p.max_abs_error);
        if p.max_rel_error > out.max_rel_error {
            out.max_rel_error = p.max_rel_error;
            out.worst_index = p.worst_index;
        }
    }
    out
}
