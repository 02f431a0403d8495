//! Dense vector helpers shared by the encoders, policies and metrics.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit L2 norm in place. Returns `false` and leaves `v`
/// untouched when the norm is zero or not finite.
pub fn normalize(v: &mut [f64]) -> bool {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

pub fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    normalize(&mut v).then_some(v)
}

/// Cosine similarity. Identical inputs give exactly 1.0; zero vectors give 0.0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let ab = dot(a, b);
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (ab / denom).clamp(-1.0, 1.0)
}

pub fn is_unit(v: &[f64], tol: f64) -> bool {
    (norm(v) - 1.0).abs() <= tol
}
