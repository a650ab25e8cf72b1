//! Central-difference gradient checking for parameter stores.

use crate::params::{GradMap, Params};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub step: f64,
    /// Maximum relative error `|a - n| / max(|a|, |n|)`.
    pub rel: f64,
    /// Entries with both magnitudes below `floor` are compared absolutely.
    pub floor: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { step: 1e-5, rel: 1e-4, floor: 1e-6, abs: 1e-9 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Report {
    pub worst_rel: f64,
    /// Entries compared relatively.
    pub compared: usize,
    /// Entries below the floor.
    pub tiny: usize,
}

/// Compares `analytic` with central differences of `loss`, probing up to
/// `per_tensor` spread-out entries of every tensor plus its largest-gradient
/// entry. `stores` exposes the parameter maps of a model copy.
pub fn check<M: Clone>(
    model: &M,
    analytic: &GradMap,
    stores: impl Fn(&mut M) -> Vec<&mut Params>,
    loss: impl Fn(&M) -> f64,
    per_tensor: usize,
    tol: Tolerance,
) -> Result<Report, String> {
    if analytic.is_empty() {
        return Err("no trainable tensors".into());
    }
    let mut report = Report::default();
    for (name, grad) in analytic {
        let n = grad.len();
        let k = per_tensor.clamp(1, n.max(1));
        let mut probes: Vec<usize> = (0..k).map(|i| i * n / k).collect();
        if let Some((largest, _)) = grad.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())) {
            if !probes.contains(&largest) {
                probes.push(largest);
            }
        }
        for idx in probes {
            let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
            let eval = |delta: f64| -> Result<f64, String> {
                let mut m = model.clone();
                let mut hit = false;
                for p in stores(&mut m) {
                    if let Some(t) = p.get_mut(name) {
                        t[[r, c]] += delta;
                        hit = true;
                    }
                }
                if !hit {
                    return Err(format!("tensor {name} not found in any store"));
                }
                Ok(loss(&m))
            };
            let numeric = (eval(tol.step)? - eval(-tol.step)?) / (2.0 * tol.step);
            let a = grad[[r, c]];
            let scale = a.abs().max(numeric.abs());
            if scale < tol.floor {
                if (a - numeric).abs() >= tol.abs {
                    return Err(format!("{name}[{r},{c}]: analytic {a:e} numeric {numeric:e}"));
                }
                report.tiny += 1;
                continue;
            }
            let rel = (a - numeric).abs() / scale;
            if !(rel < tol.rel) {
                return Err(format!("{name}[{r},{c}]: analytic {a:e} numeric {numeric:e} relative error {rel:e}"));
            }
            report.worst_rel = report.worst_rel.max(rel);
            report.compared += 1;
        }
    }
    if report.compared == 0 {
        return Err("every probed gradient was below the floor".into());
    }
    Ok(report)
}
