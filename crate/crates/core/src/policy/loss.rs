//! Entropy-regularized expected-value objective over the 28 joint actions.
//!
//! loss = -sum_a pi(a) q(a) - alpha * H(pi). Its minimizer over all
//! distributions is softmax(q / alpha).

use crate::error::{Error, Result};

use super::model::{HEAD_WIDTH, N_STEER, N_THROTTLE};

/// Joint actions: steering-major (steer, throttle) pairs, then brake.
pub const N_JOINT: usize = N_STEER * N_THROTTLE + 1;
pub const BRAKE: usize = N_JOINT - 1;

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    log_softmax(z).into_iter().map(f64::exp).collect()
}

/// log(sigmoid(x)) and log(1 - sigmoid(x)) without overflow.
fn log_sigmoids(x: f64) -> (f64, f64) {
    let sp = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    (-sp(-x), -sp(x))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Joint log-probabilities of a factorized head: steering and throttle are
/// independent given no brake.
pub fn joint_log_probs(head: &[f64]) -> [f64; N_JOINT] {
    let ls = log_softmax(&head[..N_STEER]);
    let lt = log_softmax(&head[N_STEER..N_STEER + N_THROTTLE]);
    let (lb, lnb) = log_sigmoids(head[HEAD_WIDTH - 1]);
    let mut out = [0.0; N_JOINT];
    for s in 0..N_STEER {
        for t in 0..N_THROTTLE {
            out[s * N_THROTTLE + t] = lnb + ls[s] + lt[t];
        }
    }
    out[BRAKE] = lb;
    out
}

fn check(q: &[f64], frame: usize) -> Result<()> {
    if q.len() != N_JOINT {
        return Err(Error::Misaligned(format!("expected {N_JOINT} action values, got {}", q.len())));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLabel { frame });
    }
    Ok(())
}

/// Loss and its gradient with respect to joint log-probabilities.
fn joint_terms(logp: &[f64], q: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut g = vec![0.0; logp.len()];
    for a in 0..logp.len() {
        let p = logp[a].exp();
        // p * log p -> 0 as p -> 0
        let plogp = if p > 0.0 { p * logp[a] } else { 0.0 };
        loss += -p * q[a] + alpha * plogp;
        g[a] = if p > 0.0 { p * (-q[a] + alpha * (logp[a] + 1.0)) } else { 0.0 };
    }
    (loss, g)
}

/// Loss and logit gradient for one factorized head (`HEAD_WIDTH` logits).
/// `frame` only labels errors.
pub fn distill_loss(head: &[f64], q: &[f64], alpha: f64, frame: usize) -> Result<(f64, [f64; HEAD_WIDTH])> {
    check(q, frame)?;
    let logp = joint_log_probs(head);
    let (loss, g) = joint_terms(&logp, q, alpha);
    let ps = softmax(&head[..N_STEER]);
    let pt = softmax(&head[N_STEER..N_STEER + N_THROTTLE]);
    let sb = sigmoid(head[HEAD_WIDTH - 1]);
    let mut grad = [0.0; HEAD_WIDTH];
    let g_drive: f64 = g[..BRAKE].iter().sum();
    for s in 0..N_STEER {
        let gs: f64 = g[s * N_THROTTLE..(s + 1) * N_THROTTLE].iter().sum();
        grad[s] = gs - ps[s] * g_drive;
    }
    for t in 0..N_THROTTLE {
        let gt: f64 = (0..N_STEER).map(|s| g[s * N_THROTTLE + t]).sum();
        grad[N_STEER + t] = gt - pt[t] * g_drive;
    }
    grad[HEAD_WIDTH - 1] = -sb * g_drive + (1.0 - sb) * g[BRAKE];
    Ok((loss, grad))
}

/// Loss and gradient for an unconstrained softmax over all joint actions.
pub fn joint_distill_loss(logits: &[f64], q: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    check(q, 0)?;
    if logits.len() != N_JOINT {
        return Err(Error::Misaligned("joint logits must cover every action".into()));
    }
    let logp = log_softmax(logits);
    let (loss, g) = joint_terms(&logp, q, alpha);
    let total: f64 = g.iter().sum();
    let p: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
    Ok((loss, g.iter().zip(&p).map(|(ga, pa)| ga - pa * total).collect()))
}

/// Entropy of a distribution given by log-probabilities.
pub fn entropy(logp: &[f64]) -> f64 {
    -logp.iter().map(|&l| if l.is_finite() { l.exp() * l } else { 0.0 }).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-6;
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn factorized_gradient_matches_differences() {
        let head: Vec<f64> = (0..HEAD_WIDTH).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect();
        let q: Vec<f64> = (0..N_JOINT).map(|i| ((i * 11) % 13) as f64 * 0.1).collect();
        let (_, g) = distill_loss(&head, &q, 0.05, 0).unwrap();
        let n = numeric(|h| distill_loss(h, &q, 0.05, 0).unwrap().0, &head);
        for (a, b) in g.iter().zip(&n) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn joint_gradient_matches_differences() {
        let z: Vec<f64> = (0..N_JOINT).map(|i| ((i * 3) % 7) as f64 * 0.2).collect();
        let q: Vec<f64> = (0..N_JOINT).map(|i| ((i * 5) % 9) as f64 * 0.1).collect();
        let (_, g) = joint_distill_loss(&z, &q, 0.01).unwrap();
        let n = numeric(|z| joint_distill_loss(z, &q, 0.01).unwrap().0, &z);
        for (a, b) in g.iter().zip(&n) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn uniform_policy_entropy_is_log_28() {
        let q = vec![0.0; N_JOINT];
        let (loss, _) = joint_distill_loss(&[0.0; N_JOINT], &q, 0.01).unwrap();
        assert!((loss + 0.01 * 28f64.ln()).abs() < 1e-12);
        assert!((entropy(&log_softmax(&[0.0; N_JOINT])) - 28f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn factorized_probabilities_sum_to_one() {
        let head: Vec<f64> = (0..HEAD_WIDTH).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let s: f64 = joint_log_probs(&head).iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
        let extreme = joint_log_probs(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 800.0]);
        assert!(extreme.iter().all(|v| !v.is_nan()));
    }

    #[test]
    fn non_finite_values_are_rejected_with_frame() {
        let mut q = vec![0.0; N_JOINT];
        q[3] = f64::NAN;
        assert!(matches!(distill_loss(&[0.0; HEAD_WIDTH], &q, 0.01, 17), Err(Error::NonFiniteLabel { frame: 17 })));
    }
}
