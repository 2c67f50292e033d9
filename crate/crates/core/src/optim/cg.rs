use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `H x = g` for symmetric PSD `H` given only products `v -> H v`.
///
/// Stops once `||H x - g|| <= tol * ||g||` or after `iters` iterations.
pub fn conjugate_gradients<F>(hvp: F, g: &[f64], iters: usize, tol: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = g.len();
    let mut x = vec![0.0; n];
    let gnorm = dot(g, g).sqrt();
    if !gnorm.is_finite() {
        return Err(Error::Numerical("conjugate gradients: non-finite right-hand side".into()));
    }
    if gnorm == 0.0 {
        return Ok(x);
    }
    let mut r = g.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = (tol * gnorm).powi(2);
    for _ in 0..iters {
        if rr <= target {
            break;
        }
        let hp = hvp(&p);
        let php = dot(&p, &hp);
        if !php.is_finite() {
            return Err(Error::Numerical("conjugate gradients: non-finite curvature".into()));
        }
        if php <= 0.0 {
            // direction of zero curvature; nothing more to gain
            break;
        }
        let alpha = rr / php;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("conjugate gradients: non-finite iterate".into()));
    }
    Ok(x)
}
