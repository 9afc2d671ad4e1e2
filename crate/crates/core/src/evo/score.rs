//! Scoring and parent ranking.

/// `1 / (1 + q_error) * a^(p / param_unit)`, or 0 when `q_error` is not
/// finite (a diverged model).
pub fn evaluation_score(q_error: f64, p: usize, penalty_a: f64, param_unit: usize) -> f64 {
    if !q_error.is_finite() || q_error < 0.0 {
        return 0.0;
    }
    let quality = 1.0 / (1.0 + q_error);
    quality * libm::pow(penalty_a, p as f64 / param_unit.max(1) as f64)
}

/// `score * decay^children`, the decay power taken by repeated
/// multiplication.
pub fn rank(score: f64, children: u32, decay: f64) -> f64 {
    let mut factor = 1.0;
    for _ in 0..children {
        factor *= decay;
    }
    score * factor
}
