use super::EvalError;

/// Zero-lag Pearson correlation of two equal-length signals.
pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(EvalError::InvalidInput(format!(
            "correlation needs two equal-length signals of at least 2 samples, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, EvalError> {
    if u.len() != v.len() || u.is_empty() {
        return Err(EvalError::InvalidInput(format!(
            "cosine needs two equal-length vectors, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(EvalError::ZeroNorm);
    }
    Ok(dot / (nu * nv))
}
