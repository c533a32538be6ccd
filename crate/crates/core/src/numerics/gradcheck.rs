//! Central finite-difference gradient checking.

use super::array::DenseArray;
use crate::error::{Error, Result};

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Central-difference estimate of the gradient of `f` at `point`.
pub fn numeric_gradient<F>(mut f: F, point: &DenseArray, step: f64) -> Result<DenseArray>
where
    F: FnMut(&DenseArray) -> Result<f64>,
{
    let mut probe = point.clone();
    let mut out = DenseArray::zeros(point.rows(), point.cols());
    for k in 0..point.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[k] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite-difference evaluation at coordinate {k}"
            )));
        }
        out.data_mut()[k] = (plus - minus) / (2.0 * step);
    }
    Ok(out)
}

/// Maximum relative error between `analytic` and a central-difference
/// gradient of `f` at `point`.
pub fn compare_gradient<F>(f: F, point: &DenseArray, analytic: &DenseArray, step: f64) -> Result<f64>
where
    F: FnMut(&DenseArray) -> Result<f64>,
{
    if analytic.shape() != point.shape() {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            left: point.shape().to_vec(),
            right: analytic.shape().to_vec(),
        });
    }
    let numeric = numeric_gradient(f, point, step)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

/// Checks a function that returns its value together with its analytic
/// gradient. Returns the max relative error over coordinates.
pub fn grad_check<F>(mut f: F, point: &DenseArray, step: f64) -> Result<f64>
where
    F: FnMut(&DenseArray) -> Result<(f64, DenseArray)>,
{
    let (value, analytic) = f(point)?;
    if !value.is_finite() || !analytic.is_finite() {
        return Err(Error::NonFinite("grad_check analytic evaluation".into()));
    }
    compare_gradient(|p| f(p).map(|(v, _)| v), point, &analytic, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = grad_check(
            |p| {
                let x = p.data()[0];
                Ok((x * x, DenseArray::scalar(2.0 * x)))
            },
            &DenseArray::scalar(3.0),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check(
            |_| Ok((4.2, DenseArray::zeros(1, 3))),
            &DenseArray::row(vec![0.1, -0.3, 2.0]),
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-10);
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let res = grad_check(
            |p| {
                let x = p.data()[0];
                Ok((1.0 / x, DenseArray::scalar(-1.0 / (x * x))))
            },
            &DenseArray::scalar(0.0),
            1e-6,
        );
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }
}
