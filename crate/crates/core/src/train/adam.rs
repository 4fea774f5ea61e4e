use hmx_tensor::{Element, Tensor};

use super::hyper::AdamConfig;
use crate::error::{HydraError, Result};

/// Adam with bias correction. Moments are kept in `f64` whatever the
/// parameter precision.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every tensor in `params` using the matching gradient.
    pub fn step<'a, E, I>(&mut self, params: I, grads: &[Vec<E>], lr: f64) -> Result<()>
    where
        E: Element,
        I: IntoIterator<Item = &'a mut Tensor<E>>,
    {
        let params: Vec<&mut Tensor<E>> = params.into_iter().collect();
        if params.len() != grads.len() {
            return Err(HydraError::Argument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if let Some((p, g)) = params.iter().zip(grads).find(|(p, g)| p.numel() != g.len()) {
            return Err(HydraError::Argument(format!(
                "gradient of length {} for a tensor of {}",
                g.len(),
                p.numel()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(&params).any(|(m, p)| m.len() != p.numel()) {
            return Err(HydraError::Argument("parameter set changed between steps".into()));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.to_f64();
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *w = E::from_f64(w.to_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook scalar Adam, written out separately.
    fn reference(mut x: f64, grad: impl Fn(f64) -> f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = grad(x);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t as i32));
            let vhat = v / (1.0 - b2.powi(t as i32));
            x -= lr * mhat / (vhat.sqrt() + eps);
            out.push(x);
        }
        out
    }

    #[test]
    fn matches_scalar_reference() {
        let grad = |x: f64| 2.0 * (x - 3.0) + 0.5 * x.cos();
        let expect = reference(-1.0, grad, 0.05, 100);
        let mut w = Tensor::<f64>::new(&[1], vec![-1.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::default());
        for e in expect {
            let g = grad(w.data()[0]);
            opt.step([&mut w], &[vec![g]], 0.05).unwrap();
            assert!((w.data()[0] - e).abs() < 1e-7);
        }
        assert_eq!(opt.steps(), 100);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = Tensor::<f32>::new(&[2], vec![1.0, 1.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::default());
        opt.step([&mut w], &[vec![4.0, -0.01]], 0.1).unwrap();
        assert!((w.data()[0] - 0.9).abs() < 1e-6);
        assert!((w.data()[1] - 1.1).abs() < 1e-5);
    }

    #[test]
    fn mismatched_gradients() {
        let mut w = Tensor::<f32>::zeros(&[2]);
        let mut opt = Adam::new(AdamConfig::default());
        assert!(opt.step([&mut w], &[vec![1.0]], 0.1).is_err());
        assert!(opt.step([&mut w], &[], 0.1).is_err());
    }
}
