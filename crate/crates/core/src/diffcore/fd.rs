use super::array::Array;

/// Central-difference gradient of `f` at `x`:
/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate.
pub fn finite_diff_grad<F>(mut f: F, x: &Array, eps: f64) -> Array
where
    F: FnMut(&Array) -> f64,
{
    assert!(eps > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Array::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// `|a - b| / max(|a|, |b|, floor)`: relative error that stays meaningful
/// for gradients near zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|x| x.data()[0].powi(2), &Array::scalar(3.0), 1e-5);
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff_grad(|_| 4.2, &Array::vector(vec![1.0, -3.0, 8.0]), 1e-5);
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn sum_has_unit_gradient() {
        let x = Array::vector(vec![0.3, -7.0, 120.0, 1e-3]);
        let g = finite_diff_grad(|x| x.data().iter().sum(), &x, 1e-5);
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-6, "{v}");
        }
    }
}
