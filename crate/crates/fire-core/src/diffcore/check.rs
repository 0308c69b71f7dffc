//! Central finite-difference gradient checking.

/// Compares `analytic` against central differences of `f` at `point`.
///
/// Returns the maximum per-coordinate relative error, with denominator
/// `max(|fd|, |analytic|, 1e-8)`. `h` should lie in [1e-6, 1e-3].
pub fn finite_diff_check(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    h: f64,
    analytic: &[f64],
) -> f64 {
    assert_eq!(point.len(), analytic.len(), "gradient length mismatch");
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
        worst = worst.max((fd - analytic[i]).abs() / denom);
    }
    worst
}
