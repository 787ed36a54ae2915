//! Nadam (Adam with Nesterov momentum) and global-norm gradient clipping.

use super::layers::Param;
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NadamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.002, beta1: 0.9, beta2: 0.999, epsilon: 1e-7, schedule_decay: 0.004 }
    }
}

/// Moment estimates and the momentum-schedule product.
///
/// With gradient `g` at step `t` (1-based):
///
/// ```text
/// mu_t      = beta1 * (1 - 0.5 * 0.96^(t * decay))
/// mu_{t+1}  = beta1 * (1 - 0.5 * 0.96^((t + 1) * decay))
/// S_t       = S_{t-1} * mu_t                         (S_0 = 1)
/// g'        = g / (1 - S_t)
/// m_t       = beta1 * m_{t-1} + (1 - beta1) * g
/// m'        = m_t / (1 - S_t * mu_{t+1})
/// v_t       = beta2 * v_{t-1} + (1 - beta2) * g^2
/// v'        = v_t / (1 - beta2^t)
/// m_bar     = (1 - mu_t) * g' + mu_{t+1} * m'
/// p_t       = p_{t-1} - lr * m_bar / (sqrt(v') + eps)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub config: NadamConfig,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: u64,
    pub m_schedule: f64,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(config: NadamConfig) -> Self {
        Self { config, m: Vec::new(), v: Vec::new(), t: 0, m_schedule: 1.0 }
    }

    fn momentum(&self, t: u64) -> f64 {
        self.config.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * self.config.schedule_decay))
    }

    /// Applies one update to `params` (trainable parameters, fixed order).
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Param<F>>,
    {
        let params: Vec<&mut Param<F>> = params.into_iter().collect();
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::zero(); p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self.m.iter().zip(&params).any(|(m, p)| m.len() != p.value.len())
        {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }

        self.t += 1;
        let t = self.t;
        let c = self.config;
        let mu_t = self.momentum(t);
        let mu_next = self.momentum(t + 1);
        let schedule = self.m_schedule * mu_t;
        let schedule_next = schedule * mu_next;
        self.m_schedule = schedule;
        let v_corr = 1.0 - c.beta2.powf(t as f64);

        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i].f64();
                let g_prime = g / (1.0 - schedule);
                let m_t = c.beta1 * m[i].f64() + (1.0 - c.beta1) * g;
                let m_prime = m_t / (1.0 - schedule_next);
                let v_t = c.beta2 * v[i].f64() + (1.0 - c.beta2) * g * g;
                let v_prime = v_t / v_corr;
                let m_bar = (1.0 - mu_t) * g_prime + mu_next * m_prime;
                let update = c.learning_rate * m_bar / (v_prime.sqrt() + c.epsilon);
                p.value[i] = F::of(p.value[i].f64() - update);
                m[i] = F::of(m_t);
                v[i] = F::of(v_t);
            }
        }
        Ok(())
    }
}

/// Scales all gradients by `max_norm / norm` when their global L2 norm
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<'a, F, I>(params: I, max_norm: f64) -> f64
where
    F: Scalar,
    I: IntoIterator<Item = &'a mut Param<F>>,
{
    let mut params: Vec<&mut Param<F>> = params.into_iter().collect();
    let norm = params
        .iter()
        .flat_map(|p| p.grad.iter())
        .map(|g| g.f64() * g.f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = F::of(max_norm / norm);
        for p in params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(value: f64, grad: f64) -> Param<f64> {
        let mut p = Param::new("w", vec![1], vec![value], true);
        p.grad[0] = grad;
        p
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = scalar(0.7, 0.0);
        let mut st = OptimizerState::new(NadamConfig::default());
        for _ in 0..5 {
            st.step([&mut p]).unwrap();
        }
        assert_eq!(p.value[0], 0.7);
    }

    #[test]
    fn constant_positive_gradient_decreases_parameter() {
        let mut p = scalar(1.0, 0.3);
        let mut st = OptimizerState::new(NadamConfig::default());
        let mut last = p.value[0];
        for _ in 0..50 {
            st.step([&mut p]).unwrap();
            assert!(p.value[0] < last);
            last = p.value[0];
        }
    }

    #[test]
    fn first_step_by_hand() {
        // t = 1, g = 1, zero state:
        // mu1 = 0.9 (1 - 0.5 * 0.96^0.004), mu2 = 0.9 (1 - 0.5 * 0.96^0.008)
        // g' = 1 / (1 - mu1), m' = 0.1 / (1 - mu1 mu2),
        // v' = 0.001 / 0.001 = 1, step = 0.002 * m_bar / (1 + 1e-7).
        let mu1 = 0.9 * (1.0 - 0.5 * 0.96f64.powf(0.004));
        let mu2 = 0.9 * (1.0 - 0.5 * 0.96f64.powf(0.008));
        let m_bar = (1.0 - mu1) / (1.0 - mu1) + mu2 * 0.1 / (1.0 - mu1 * mu2);
        let expected = -0.002 * m_bar / (1.0 + 1e-7);
        // Numerically: mu1 ≈ 0.4500735, mu2 ≈ 0.4501469, m_bar ≈ 1.0564518.
        assert!((mu1 - 0.450_073_5).abs() < 1e-6);
        assert!((m_bar - 1.056_451_8).abs() < 1e-7);
        assert!((expected + 0.002_112_903_3).abs() < 1e-10);

        let mut p = scalar(0.0, 1.0);
        let mut st = OptimizerState::new(NadamConfig::default());
        st.step([&mut p]).unwrap();
        assert!((p.value[0] - expected).abs() < 1e-15, "{} vs {expected}", p.value[0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn clipping() {
        let mut a = scalar(0.0, 1.2);
        let mut b = scalar(0.0, 1.6);
        let n = clip_grad_norm([&mut a, &mut b], 1.0);
        assert!((n - 2.0).abs() < 1e-12);
        assert!((a.grad[0] - 0.6).abs() < 1e-12 && (b.grad[0] - 0.8).abs() < 1e-12);

        let mut c = scalar(0.0, 0.3);
        let mut d = scalar(0.0, 0.4);
        clip_grad_norm([&mut c, &mut d], 1.0);
        assert_eq!((c.grad[0], d.grad[0]), (0.3, 0.4));

        let mut z = scalar(0.0, 0.0);
        assert_eq!(clip_grad_norm([&mut z], 1.0), 0.0);
        assert_eq!(z.grad[0], 0.0);
    }

    #[test]
    fn state_shape_mismatch() {
        let mut st = OptimizerState::new(NadamConfig::default());
        st.step([&mut scalar(0.0, 1.0)]).unwrap();
        let mut two = Param::new("w", vec![2], vec![0.0f64; 2], true);
        assert!(st.step([&mut two]).is_err());
    }
}
