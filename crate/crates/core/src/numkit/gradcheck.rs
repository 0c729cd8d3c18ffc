//! Central finite-difference verification of analytic gradients.

use super::matrix::Matrix;
use super::network::Network;

/// Relative discrepancy used throughout: `|a − n| / max(1e-6, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Checks an analytic gradient of `f` at `params` against central differences
/// with step `h`. Returns the maximum relative error over all coordinates.
pub fn grad_check_flat<F>(params: &[f64], analytic: &[f64], mut f: F, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len());
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Max relative error between the backward pass of `net` and central
/// differences, for `loss` (value and output gradient) evaluated on `input`.
pub fn grad_check<L>(net: &Network, input: &Matrix, loss: L, h: f64) -> f64
where
    L: Fn(&Matrix) -> (f64, Matrix),
{
    if net.num_params() == 0 || input.rows() == 0 {
        return 0.0;
    }
    let (out, cache) = net.forward(input).expect("probe input matches network");
    let (_, d_out) = loss(&out);
    let (grads, _) = net.backward(&cache, &d_out).expect("cache is fresh");
    let mut probe = net.clone();
    grad_check_flat(
        net.params(),
        grads.as_slice(),
        |p| {
            probe.params_mut().copy_from_slice(p);
            loss(&probe.predict(input).expect("shapes fixed")).0
        },
        h,
    )
}
