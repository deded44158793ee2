//! Combinatorial helpers shared by the samplers, the solver, and the
//! analytic oracles.

/// Binomial coefficient as f64. The loop divides as it multiplies so
/// intermediate values stay near the result's magnitude; k is canonicalized
/// to min(k, n-k) so symmetric arguments produce identical values.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}
