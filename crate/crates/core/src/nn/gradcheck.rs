/// Maximum over coordinates of `|analytic − central| / max(1, |central|)`
/// where `central` is the symmetric difference quotient with `step`.
///
/// Kinks (ReLU at exactly zero, L1 at zero) are not differentiable; callers
/// shift inputs away from them before checking.
pub fn grad_check<F>(f: F, analytic: &[f64], theta: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..theta.len()).collect();
    grad_check_coords(f, analytic, theta, step, &coords)
}

/// [`grad_check`] restricted to the listed coordinates.
pub fn grad_check_coords<F>(
    mut f: F,
    analytic: &[f64],
    theta: &[f64],
    step: f64,
    coords: &[usize],
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(analytic.len(), theta.len(), "gradient length");
    let mut t = theta.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = t[i];
        t[i] = orig + step;
        let plus = f(&t);
        t[i] = orig - step;
        let minus = f(&t);
        t[i] = orig;
        let central = (plus - minus) / (2.0 * step);
        let err = (analytic[i] - central).abs() / central.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
