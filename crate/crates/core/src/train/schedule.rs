/// Single-cycle cosine annealing from `lr0` at step 0 to zero at
/// `total_steps`: `½·lr0·(1 + cos(π·step/total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let progress = step.min(total_steps) as f64 / total_steps as f64;
    (0.5 * lr0 * (1.0 + (std::f64::consts::PI * progress).cos())).max(0.0)
}
