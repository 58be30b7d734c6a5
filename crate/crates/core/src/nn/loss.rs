use crate::error::{Error, Result};
use crate::nn::{softmax_scaled, LogitVector};

/// Floor applied inside every `ln` so one-hot-adjacent probabilities stay finite.
pub const LOG_FLOOR: f64 = 1e-12;

/// Cross-entropy against a one-hot label at temperature 1:
/// `-ln softmax(z)[label]`.
pub fn hard_label_loss(logits: &LogitVector, label: usize) -> Result<f64> {
    let (loss, _) = hard_label_loss_grad(logits, label)?;
    Ok(loss)
}

/// Hard-label loss together with its gradient w.r.t. the logits
/// (`softmax(z) - onehot(label)`).
pub fn hard_label_loss_grad(logits: &LogitVector, label: usize) -> Result<(f64, Vec<f64>)> {
    let z = logits.as_slice();
    if label >= z.len() {
        return Err(Error::domain(format!(
            "label {label} out of range for {} classes",
            z.len()
        )));
    }
    let mut p = softmax_scaled(z, 1.0);
    let loss = -(p[label].max(LOG_FLOOR)).ln();
    p[label] -= 1.0;
    Ok((loss, p))
}

/// Distillation loss: cross-entropy between the teacher's and the student's
/// temperature-softened distributions,
/// `H(softmax_t(teacher, T), softmax_t(student, T))`.
///
/// Zero-gradient where the student's logits match the teacher's up to an
/// additive constant.
pub fn distill_loss(
    student_logits: &LogitVector,
    teacher_logits: &LogitVector,
    temperature: f64,
) -> Result<f64> {
    let (loss, _) = distill_loss_grad(student_logits, teacher_logits, temperature)?;
    Ok(loss)
}

/// Distillation loss together with its gradient w.r.t. the student logits
/// (`(softmax_t(student) - softmax_t(teacher)) / T`).
pub fn distill_loss_grad(
    student_logits: &LogitVector,
    teacher_logits: &LogitVector,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let s = student_logits.as_slice();
    let t = teacher_logits.as_slice();
    if s.len() != t.len() {
        return Err(Error::domain(format!(
            "student has {} classes but teacher has {}",
            s.len(),
            t.len()
        )));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::domain(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    let soft_s = softmax_scaled(s, temperature);
    let soft_t = softmax_scaled(t, temperature);
    let mut loss = 0.0;
    let mut grad = vec![0.0; s.len()];
    for i in 0..s.len() {
        loss -= soft_t[i] * soft_s[i].max(LOG_FLOOR).ln();
        grad[i] = (soft_s[i] - soft_t[i]) / temperature;
    }
    Ok((loss, grad))
}
