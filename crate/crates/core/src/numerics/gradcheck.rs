use super::params::ParamVector;

/// Central-difference estimate of the gradient of `f` at `p`, one coordinate at a time.
pub fn finite_difference_gradient(
    mut f: impl FnMut(&ParamVector) -> f64,
    p: &ParamVector,
    eps: f64,
) -> ParamVector {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let base = p.flatten();
    let mut probe = p.clone();
    let mut grad = vec![0.0; base.len()];
    let mut values = base.clone();
    for i in 0..base.len() {
        values[i] = base[i] + eps;
        probe.set_flat(&values).expect("layout preserved");
        let plus = f(&probe);
        values[i] = base[i] - eps;
        probe.set_flat(&values).expect("layout preserved");
        let minus = f(&probe);
        values[i] = base[i];
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    let mut out = p.zeros_like();
    out.set_flat(&grad).expect("layout preserved");
    out
}
