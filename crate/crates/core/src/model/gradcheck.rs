//! Finite-difference verification of the manual backward pass, run on an
//! f64 copy of the model so discretization error dominates rounding error.

use crate::error::Result;
use crate::model::forward::{bce_loss_logit, forward_example, PreparedExample};
use crate::model::{backward_example, ModelGrads, ModelParams};

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Analytic and numeric values at the worst element.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn mean_loss(params: &ModelParams<f64>, data: &[PreparedExample]) -> Result<f64> {
    let mut acc = 0.0;
    for prep in data {
        let cache = forward_example(params, prep, None)?;
        acc += bce_loss_logit(prep.label, cache.logit);
    }
    Ok(acc / data.len() as f64)
}

/// Central-difference check of every parameter against the analytic
/// gradient of the mean BCE loss over `data`. Relative error uses the
/// `|a - b| / max(1e-8, |a| + |b|)` convention.
pub fn gradient_check(
    params: &ModelParams<f64>,
    data: &[PreparedExample],
    h: f64,
) -> Result<GradCheckReport> {
    let mut work = params.clone();

    let mut grads = ModelGrads::zeros_like(&work);
    let inv = 1.0 / data.len() as f64;
    for prep in data {
        let cache = forward_example(&work, prep, None)?;
        backward_example(&work, prep, &cache, inv, &mut grads)?;
    }
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensor_slices()
        .into_iter()
        .map(|(n, s)| (n, s.to_vec()))
        .collect();

    // enumerate (group, length) first so the borrow of `work` is short
    let mut layout: Vec<(String, usize)> = Vec::new();
    work.visit_tensors_mut(|name, t| layout.push((name.to_string(), t.len())));

    let mut groups = Vec::with_capacity(layout.len());
    let mut overall = 0.0f64;
    for (gi, (gname, glen)) in layout.iter().enumerate() {
        let mut report = GroupReport {
            name: gname.clone(),
            checked: *glen,
            max_rel_err: 0.0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for e in 0..*glen {
            let nudge = |w: &mut ModelParams<f64>, delta: f64| {
                let mut i = 0;
                w.visit_tensors_mut(|_, t| {
                    if i == gi {
                        t[e] += delta;
                    }
                    i += 1;
                });
            };
            let a = analytic[gi].1[e];
            let mut numeric = 0.0;
            let mut rel = f64::INFINITY;
            // PReLU makes the loss piecewise smooth: a step that straddles a
            // kink corrupts the central difference. Refine the step when the
            // mismatch looks like discretization error -- a genuine backward
            // bug does not shrink with h.
            for step in [h, h / 16.0, h / 256.0] {
                nudge(&mut work, step);
                let up = mean_loss(&work, data)?;
                nudge(&mut work, -2.0 * step);
                let down = mean_loss(&work, data)?;
                nudge(&mut work, step);
                let n = (up - down) / (2.0 * step);
                let r = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
                if r < rel {
                    rel = r;
                    numeric = n;
                }
                if rel < 1e-5 {
                    break;
                }
            }
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
        overall = overall.max(report.max_rel_err);
        groups.push(report);
    }
    Ok(GradCheckReport { groups, max_rel_err: overall })
}
