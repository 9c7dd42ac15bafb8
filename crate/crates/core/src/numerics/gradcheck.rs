use crate::error::Result;

/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)` over the
    /// checked coordinates; infinite when a function value was not finite.
    pub max_rel_error: f64,
    /// Coordinate where the maximum was reached.
    pub worst_coordinate: usize,
    pub coordinates_checked: usize,
    /// False when the function produced a non-finite value near the point.
    pub finite: bool,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.finite && self.max_rel_error < tol
    }
}

/// Compares the analytic gradient returned by `f` against central
/// differences at every coordinate of `point`.
///
/// `f` returns the function value and its gradient.
pub fn grad_check<F>(f: F, point: &[f64], step: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    grad_check_coords(f, point, &coords, step)
}

/// Like [`grad_check`] but only perturbs the listed coordinates.
pub fn grad_check_coords<F>(mut f: F, point: &[f64], coords: &[usize], step: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    crate::error::ensure!(step > 0.0, "finite-difference step must be positive");
    let (f0, grad) = f(point)?;
    crate::error::ensure!(
        grad.len() == point.len(),
        "gradient has {} entries for {} coordinates",
        grad.len(),
        point.len()
    );
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_coordinate: coords.first().copied().unwrap_or(0),
        coordinates_checked: coords.len(),
        finite: f0.is_finite() && grad.iter().all(|g| g.is_finite()),
    };
    let mut x = point.to_vec();
    for &c in coords {
        x[c] = point[c] + step;
        let (fp, _) = f(&x)?;
        x[c] = point[c] - step;
        let (fm, _) = f(&x)?;
        x[c] = point[c];
        if !(fp.is_finite() && fm.is_finite()) {
            report.finite = false;
        }
        let numeric = (fp - fm) / (2.0 * step);
        let analytic = grad[c];
        let rel = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
        let rel = if rel.is_finite() { rel } else { f64::INFINITY };
        if rel > report.max_rel_error || (rel.is_nan() && report.finite) {
            report.max_rel_error = rel;
            report.worst_coordinate = c;
        }
    }
    if !report.finite {
        report.max_rel_error = f64::INFINITY;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_is_exact() {
        // f(x) = x^T A x with symmetric A, grad = 2 A x
        let a = [[2.0, 0.5, -1.0], [0.5, 1.0, 0.3], [-1.0, 0.3, 4.0]];
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut v = 0.0;
            let mut g = vec![0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    v += x[i] * a[i][j] * x[j];
                    g[i] += 2.0 * a[i][j] * x[j];
                }
            }
            Ok((v, g))
        };
        let r = grad_check(f, &[0.3, -1.2, 2.5], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn linear_map_is_exact() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((3.0 * x[0] - 2.0 * x[1], vec![3.0, -2.0])) };
        let r = grad_check(f, &[1.0, 7.0], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-10);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((x[0] * x[0], vec![x[0]])) };
        let r = grad_check(f, &[3.0], 1e-5).unwrap();
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn non_finite_values_fail_loudly() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((x[0].ln(), vec![1.0 / x[0]])) };
        let r = grad_check(f, &[0.0], 1e-5).unwrap();
        assert!(!r.finite);
        assert!(!r.passes(1.0));
        assert!(r.max_rel_error.is_infinite());
    }
}
