use super::{Tensor, TensorError};

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub worst_index: usize,
    pub worst_error: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares an analytic gradient against central differences, coordinate by
/// coordinate.
///
/// `f` maps a point to `(value, analytic gradient)`. It is evaluated twice at
/// `theta` first; differing values make the oracle invalid. The check passes
/// when the worst relative error is strictly below `tol`.
pub fn grad_check<F, E>(mut f: F, theta: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport, E>
where
    F: FnMut(&Tensor) -> Result<(f64, Vec<f64>), E>,
    E: From<TensorError>,
{
    if !(h > 0.0) {
        return Err(TensorError::BadStep(h).into());
    }
    let (first, analytic) = f(theta)?;
    let (second, _) = f(theta)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second }.into());
    }
    if analytic.len() != theta.numel() {
        return Err(TensorError::DataLength {
            shape: theta.shape().to_vec(),
            len: analytic.len(),
        }
        .into());
    }

    let mut report = GradCheckReport {
        coordinates: theta.numel(),
        worst_index: 0,
        worst_error: 0.0,
        worst_analytic: analytic.first().copied().unwrap_or(0.0),
        worst_numeric: analytic.first().copied().unwrap_or(0.0),
        tolerance: tol,
        passed: false,
    };
    let mut probe = theta.clone();
    for i in 0..theta.numel() {
        let x = theta.data()[i];
        probe.data_mut()[i] = x + h;
        let (plus, _) = f(&probe)?;
        probe.data_mut()[i] = x - h;
        let (minus, _) = f(&probe)?;
        probe.data_mut()[i] = x;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if i == 0 || err > report.worst_error {
            report.worst_index = i;
            report.worst_error = err;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report.passed = report.worst_error < tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn square(t: &Tensor) -> Result<(f64, Vec<f64>), TensorError> {
        let x = t.item();
        Ok((x * x, vec![2.0 * x]))
    }

    #[test]
    fn quadratic_passes() {
        let r = grad_check(square, &Tensor::scalar(3.0), 1e-6, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.worst_analytic, 6.0);
        assert!((r.worst_numeric - 6.0).abs() < 1e-6);
    }

    #[test]
    fn zero_tolerance_always_fails() {
        let r = grad_check(square, &Tensor::scalar(3.0), 1e-6, 0.0).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn non_positive_step_rejected() {
        assert_eq!(
            grad_check(square, &Tensor::scalar(1.0), 0.0, 1e-6).unwrap_err(),
            TensorError::BadStep(0.0)
        );
    }

    #[test]
    fn nondeterministic_function_is_detected() {
        let calls = Cell::new(0.0);
        let f = |t: &Tensor| {
            calls.set(calls.get() + 1.0);
            Ok((t.item() + calls.get(), vec![1.0]))
        };
        assert!(matches!(
            grad_check(f, &Tensor::scalar(1.0), 1e-6, 1e-6),
            Err(TensorError::NonDeterministic { .. })
        ));
    }

    #[test]
    fn wrong_gradient_fails() {
        let f = |t: &Tensor| Ok::<_, TensorError>((t.item() * t.item(), vec![3.0 * t.item()]));
        let r = grad_check(f, &Tensor::scalar(2.0), 1e-6, 1e-4).unwrap();
        assert!(!r.passed);
        assert!((r.worst_error - 0.2).abs() < 1e-6);
    }
}
