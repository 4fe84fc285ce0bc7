//! Central finite differences for checking tape gradients.
//!
//! Only forward evaluations of the loss are used here, so the check stays
//! independent of the backward pass it verifies.

use crate::nn::ParamSet;

/// Relative error with an absolute floor, so gradients that are exactly or
/// nearly zero on both sides do not blow up the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// `(parameter name, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric values at the worst entry.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

/// Compares the gradients currently stored in `params` against central
/// differences of `loss` with step `h`, over every scalar of every parameter.
pub fn check_params(params: &mut ParamSet, h: f64, mut loss: impl FnMut(&ParamSet) -> f64) -> GradCheck {
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.tensor.grad().to_vec()).collect();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    for k in 0..params.len() {
        let n = params.iter().nth(k).map_or(0, |p| p.tensor.len());
        for i in 0..n {
            let orig = value_at(params, k, i);
            set_value(params, k, i, orig + h);
            let plus = loss(params);
            set_value(params, k, i, orig - h);
            let minus = loss(params);
            set_value(params, k, i, orig);
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[k][i], numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err.max(report.max_relative_error);
                let name = params.iter().nth(k).map(|p| p.name.clone()).unwrap_or_default();
                report.worst = Some((name, i));
                report.worst_values = (analytic[k][i], numeric);
            }
        }
    }
    report
}

fn value_at(params: &ParamSet, k: usize, i: usize) -> f64 {
    params.iter().nth(k).expect("index in range").tensor.values()[i]
}

fn set_value(params: &mut ParamSet, k: usize, i: usize, v: f64) {
    params.iter_mut().nth(k).expect("index in range").tensor.values_mut()[i] = v;
}
