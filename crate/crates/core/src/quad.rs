//! Gauss–Legendre panels and adaptive bisection.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

const ORDER: usize = 16;
const MAX_DEPTH: u32 = 60;

fn rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        GaussLegendre::new(NonZeroUsize::new(ORDER).unwrap())
            .as_node_weight_pairs()
            .to_vec()
    })
}

/// 16-point Gauss–Legendre rule on `[a, b]`.
pub fn gl16<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for &(x, w) in rule() {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Adaptive bisection on 16-point panels. A panel is accepted when its
/// two-half refinement changes it by at most `max(tol_panel, tol |estimate|)`,
/// where `tol_panel` halves at each level. Panels still unresolved at the depth
/// limit are kept; the call fails only if their combined change exceeds
/// `tol · max(1, |result|)`.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let whole = gl16(&mut f, a, b);
    let mut unresolved = 0.0f64;
    let v = refine(&mut f, a, b, whole, tol, tol, 0, &mut unresolved);
    if !v.is_finite() || unresolved > tol * v.abs().max(1.0) {
        return Err(Error::Quadrature { tol, estimate: v });
    }
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    whole: f64,
    tol_panel: f64,
    tol_rel: f64,
    depth: u32,
    unresolved: &mut f64,
) -> f64 {
    let mid = 0.5 * (a + b);
    let left = gl16(&mut *f, a, mid);
    let right = gl16(&mut *f, mid, b);
    let both = left + right;
    let err = (both - whole).abs();
    if err <= tol_panel.max(tol_rel * both.abs()) {
        return both;
    }
    if depth >= MAX_DEPTH || !err.is_finite() {
        *unresolved += err;
        return both;
    }
    refine(
        f,
        a,
        mid,
        left,
        0.5 * tol_panel,
        tol_rel,
        depth + 1,
        unresolved,
    ) + refine(
        f,
        mid,
        b,
        right,
        0.5 * tol_panel,
        tol_rel,
        depth + 1,
        unresolved,
    )
}

/// Panels `[L 2^{-k-1}, L 2^{-k}]` for `k < levels`, largest first, followed by
/// the remaining `[0, L 2^{-levels}]`.
pub fn geometric_panels(length: f64, levels: u32) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(levels as usize + 1);
    let mut hi = length;
    for _ in 0..levels {
        let lo = 0.5 * hi;
        out.push((lo, hi));
        hi = lo;
    }
    out.push((0.0, hi));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let v = gl16(|x| x.powi(31) + 3.0 * x * x, 0.0, 1.0);
        assert!((v - (1.0 / 32.0 + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let v = adaptive(|x| x.sqrt(), 0.0, 1.0, 1e-12).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-11);
        let v = adaptive(|x| x.powf(-0.5), 0.0, 1.0, 1e-10).unwrap();
        assert!((v - 2.0).abs() < 1e-8);
    }

    #[test]
    fn panels_cover_interval() {
        let p = geometric_panels(3.0, 5);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], (1.5, 3.0));
        assert_eq!(p.last().unwrap().0, 0.0);
        let total: f64 = p.iter().map(|(a, b)| b - a).sum();
        assert!((total - 3.0).abs() < 1e-15);
    }
}
