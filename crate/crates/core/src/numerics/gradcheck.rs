/// Central-difference gradient of a scalar function at `params`.
pub fn central_difference(mut loss: impl FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = loss(&p);
            p[i] = orig - h;
            let down = loss(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Denominator floor for [`grad_check`]; above central-difference roundoff
/// (about `1e-11·|loss|` at `h = 1e-5`).
pub const GRAD_FLOOR: f64 = 1e-6;

/// Largest relative disagreement between the analytic gradient returned by
/// `loss_and_grad` and central differences of its loss:
/// `|a − c| / max(|a|, |c|, GRAD_FLOOR)` over all coordinates.
pub fn grad_check(
    mut loss_and_grad: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    params: &[f64],
    h: f64,
) -> f64 {
    let (_, analytic) = loss_and_grad(params);
    assert_eq!(analytic.len(), params.len(), "gradient length");
    let numeric = central_difference(|p| loss_and_grad(p).0, params, h);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, c)| (a - c).abs() / a.abs().max(c.abs()).max(GRAD_FLOOR))
        .fold(0.0, f64::max)
}
