//! Monotone rational-quadratic splines on [−range, range] with identity
//! tails: raw parameters become bin widths (softmax), bin heights (softmax),
//! and strictly positive knot derivatives (shifted softplus with boundary
//! derivatives fixed at 1). Raw parameters of zero give the identity map.

use crate::numeric::{sigmoid, softplus};

/// Floor on knot derivatives.
pub const MIN_DERIV: f64 = 1e-3;

/// Shift so a raw derivative parameter of 0 maps to exactly 1.
pub fn deriv_shift() -> f64 {
    // softplus(x + shift) + MIN_DERIV = 1 at x = 0
    ((1.0 - MIN_DERIV) as f64).exp_m1().ln()
}

/// Decoded knots for one dimension of one sample.
#[derive(Debug, Clone)]
pub struct Knots {
    /// x and y knot positions, length bins+1, first = −range, last ≈ range.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Knot derivatives, length bins+1, boundary entries = 1.
    pub ds: Vec<f64>,
}

pub fn softmax(raw: &[f64]) -> Vec<f64> {
    let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Decode raw spline parameters (3·bins − 1 values) into knots.
pub fn decode(raw: &[f64], bins: usize, range: f64) -> Knots {
    assert_eq!(raw.len(), 3 * bins - 1, "raw spline parameter count");
    let widths = softmax(&raw[..bins]);
    let heights = softmax(&raw[bins..2 * bins]);
    let shift = deriv_shift();
    let mut xs = Vec::with_capacity(bins + 1);
    let mut ys = Vec::with_capacity(bins + 1);
    xs.push(-range);
    ys.push(-range);
    let mut cx = 0.0;
    let mut cy = 0.0;
    for b in 0..bins {
        cx += widths[b];
        cy += heights[b];
        xs.push(-range + 2.0 * range * cx);
        ys.push(-range + 2.0 * range * cy);
    }
    let mut ds = Vec::with_capacity(bins + 1);
    ds.push(1.0);
    for &r in &raw[2 * bins..] {
        ds.push(MIN_DERIV + softplus(r + shift));
    }
    ds.push(1.0);
    Knots { xs, ys, ds }
}

/// Largest bin index whose left knot is ≤ v, clamped to a valid bin.
pub fn find_bin(knots: &[f64], v: f64) -> usize {
    let bins = knots.len() - 1;
    let mut lo = 0usize;
    for (i, &k) in knots.iter().enumerate().take(bins).skip(1) {
        if v >= k {
            lo = i;
        } else {
            break;
        }
    }
    lo.min(bins - 1)
}

/// Forward spline evaluation x → (y, dy/dx). Outside the range behaves as
/// the identity with unit derivative.
pub fn forward(knots: &Knots, x: f64) -> (f64, f64) {
    let range = -knots.xs[0];
    if !(-range..range).contains(&x) {
        return (x, 1.0);
    }
    let b = find_bin(&knots.xs, x);
    let (xk, xk1) = (knots.xs[b], knots.xs[b + 1]);
    let (yk, yk1) = (knots.ys[b], knots.ys[b + 1]);
    let (dk, dk1) = (knots.ds[b], knots.ds[b + 1]);
    let w = xk1 - xk;
    let h = yk1 - yk;
    let s = h / w;
    let theta = ((x - xk) / w).clamp(0.0, 1.0);
    let t1m = theta * (1.0 - theta);
    let den = s + (dk1 + dk - 2.0 * s) * t1m;
    let y = yk + h * (s * theta * theta + dk * theta * (1.0 - theta)) / den;
    let deriv = s * s * (dk1 * theta * theta + 2.0 * s * t1m + dk * (1.0 - theta) * (1.0 - theta))
        / (den * den);
    (y, deriv)
}

/// Inverse spline evaluation y → (x, dy/dx at the recovered point).
pub fn inverse(knots: &Knots, y: f64) -> (f64, f64) {
    let range = -knots.ys[0];
    if !(-range..range).contains(&y) {
        return (y, 1.0);
    }
    let b = find_bin(&knots.ys, y);
    let (xk, xk1) = (knots.xs[b], knots.xs[b + 1]);
    let (yk, yk1) = (knots.ys[b], knots.ys[b + 1]);
    let (dk, dk1) = (knots.ds[b], knots.ds[b + 1]);
    let w = xk1 - xk;
    let h = yk1 - yk;
    let s = h / w;
    let r = y - yk;
    let dd = dk1 + dk - 2.0 * s;
    let a = h * (s - dk) + r * dd;
    let bq = h * dk - r * dd;
    let c = -s * r;
    let disc = (bq * bq - 4.0 * a * c).max(0.0);
    let theta = 2.0 * c / (-bq - disc.sqrt());
    let mut theta = theta.clamp(0.0, 1.0);
    // one Newton step sharpens the root to machine precision
    let eval = |theta: f64| {
        let t1m = theta * (1.0 - theta);
        let den = s + dd * t1m;
        let yv = yk + h * (s * theta * theta + dk * t1m) / den;
        let deriv = s
            * s
            * (dk1 * theta * theta + 2.0 * s * t1m + dk * (1.0 - theta) * (1.0 - theta))
            / (den * den);
        (yv, deriv)
    };
    for _ in 0..2 {
        let (yv, dv) = eval(theta);
        if dv > 0.0 {
            theta = (theta - (yv - y) / dv).clamp(0.0, 1.0);
        }
    }
    let x = xk + theta * w;
    let (_, deriv) = eval(theta);
    (x, deriv)
}

/// logistic, re-exported for the conditioner path.
pub fn _sigmoid(x: f64) -> f64 {
    sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn zero_raw_parameters_give_identity() {
        let raw = vec![0.0; 23];
        let k = decode(&raw, 8, 4.0);
        for (i, (&x, &y)) in k.xs.iter().zip(&k.ys).enumerate() {
            assert!((x - y).abs() < 1e-12, "knot {i}");
        }
        for &d in &k.ds {
            assert!((d - 1.0).abs() < 1e-12);
        }
        for v in [-3.9, -1.0, 0.0, 0.7, 3.9, 5.0, -7.0] {
            let (y, dy) = forward(&k, v);
            assert!((y - v).abs() < 1e-9, "forward({v}) = {y}");
            assert!((dy - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_inverse_roundtrip_random_params() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..23).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let k = decode(&raw, 8, 4.0);
            for _ in 0..20 {
                let x = rng.gen_range(-5.0..5.0);
                let (y, dy_f) = forward(&k, x);
                let (x2, dy_i) = inverse(&k, y);
                assert!((x - x2).abs() < 1e-8, "roundtrip {x} → {y} → {x2}");
                assert!((dy_f - dy_i).abs() / dy_f.max(dy_i) < 1e-6);
            }
        }
    }

    #[test]
    fn derivative_is_positive_on_a_grid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..23).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let k = decode(&raw, 8, 4.0);
            for i in 0..=800 {
                let x = -4.0 + 8.0 * (i as f64) / 800.0;
                let (_, d) = forward(&k, x);
                assert!(d > 0.0, "derivative {d} at {x}");
            }
        }
    }

    #[test]
    fn monotone_and_range_preserving() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let raw: Vec<f64> = (0..23).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let k = decode(&raw, 8, 4.0);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=100 {
            let x = -4.0 + 8.0 * (i as f64) / 100.0;
            let (y, _) = forward(&k, x);
            assert!(y >= prev);
            assert!((-4.0 - 1e-9..=4.0 + 1e-9).contains(&y));
            prev = y;
        }
    }
}
