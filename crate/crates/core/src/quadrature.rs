use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
#[derive(Clone, Debug)]
pub(crate) struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

pub(crate) fn gauss_legendre(n: usize) -> Rule {
    let gl = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
    let mut pairs: Vec<(f64, f64)> = gl.iter().map(|(x, w)| (*x, *w)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1).collect() }
}

/// Nodes on `[a, b]` after the substitution `v = a + (b − a) s²`, `s ∈ [0, 1]`.
///
/// Integrands with a square-root onset at `a` become smooth in `s`.
pub(crate) fn sqrt_onset_nodes(rule: &Rule, a: f64, b: f64) -> Vec<(f64, f64)> {
    let len = b - a;
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| {
            let s = 0.5 * (x + 1.0);
            (a + len * s * s, w * len * s)
        })
        .collect()
}

/// Sorted, deduplicated breakpoints in `(lo, hi)` together with both ends.
pub(crate) fn segments(lo: f64, hi: f64, interior: impl IntoIterator<Item = f64>) -> Vec<(f64, f64)> {
    let mut pts: Vec<f64> = interior.into_iter().filter(|x| x.is_finite() && *x > lo && *x < hi).collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    let tol = 1e-12 * (hi - lo);
    pts.dedup_by(|b, a| (*b - *a).abs() <= tol);
    pts.windows(2).map(|w| (w[0], w[1])).collect()
}
