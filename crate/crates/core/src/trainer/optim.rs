//! Decoupled-weight-decay Adam, warmup plus cosine schedule and global-norm clipping.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use candle_core::{backprop::GradStore, Tensor};

use crate::encoders::{ParameterStore, LOGIT_SCALE, PROMPT_PREFIX};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Names that are never decayed: the logit scale, biases and prompt banks.
pub fn decays(name: &str) -> bool {
    name != LOGIT_SCALE && !name.ends_with(".bias") && !name.starts_with(PROMPT_PREFIX)
}

struct Moments {
    m: Tensor,
    v: Tensor,
}

pub struct AdamW {
    cfg: AdamWConfig,
    names: Vec<String>,
    state: BTreeMap<String, Moments>,
    step: u64,
}

impl AdamW {
    pub fn new(params: &ParameterStore, names: Vec<String>, cfg: AdamWConfig) -> Result<Self> {
        let mut state = BTreeMap::new();
        for n in &names {
            let p = params.get(n)?;
            state.insert(
                n.clone(),
                Moments {
                    m: p.zeros_like()?,
                    v: p.zeros_like()?,
                },
            );
        }
        Ok(Self {
            cfg,
            names,
            state,
            step: 0,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Gradients of the tracked parameters; parameters outside the graph get zeros.
    ///
    /// Leaf gradients still reference the forward graph, so they are detached here.
    pub fn collect_grads(&self, params: &ParameterStore, grads: &GradStore) -> Result<Vec<Tensor>> {
        self.names
            .iter()
            .map(|n| {
                let var = params.var(n)?;
                Ok(match grads.get(var.as_tensor()) {
                    Some(g) => g.detach(),
                    None => var.as_tensor().zeros_like()?,
                })
            })
            .collect()
    }

    /// One update at learning rate `lr`.
    pub fn step(&mut self, params: &ParameterStore, grads: &[Tensor], lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, g) in self.names.iter().zip(grads) {
            if g.elem_count() == 0 {
                continue;
            }
            let st = self.state.get_mut(name).expect("state for every tracked name");
            st.m = ((&st.m * beta1)? + (g * (1.0 - beta1))?)?.detach();
            st.v = ((&st.v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?.detach();
            let var = params.var(name)?;
            let mut p = var.as_tensor().detach();
            if weight_decay != 0.0 && decays(name) {
                p = (p * (1.0 - lr * weight_decay))?;
            }
            let mhat = (&st.m / bc1)?;
            let vhat = (&st.v / bc2)?;
            let update = (mhat / (vhat.sqrt()? + eps)?)?;
            var.set(&(p - (update * lr)?)?)?;
        }
        Ok(())
    }
}

/// Scale gradients so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for g in grads.iter() {
        sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / (norm + 1e-12);
        for g in grads.iter_mut() {
            *g = (&*g * s)?;
        }
    }
    Ok(norm)
}

/// Linear warmup over the first `warmup_fraction` of steps, cosine decay to zero after.
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl Schedule {
    pub fn new(base_lr: f64, total_steps: usize, warmup_fraction: f64) -> Self {
        let warmup_steps = ((total_steps as f64) * warmup_fraction).ceil() as usize;
        Self {
            base_lr,
            total_steps,
            warmup_steps: warmup_steps.min(total_steps),
        }
    }

    /// Learning rate for zero-based step `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        self.base_lr * 0.5 * (1.0 + (PI * progress.min(1.0)).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn schedule_shape() {
        let s = Schedule::new(1.0, 100, 0.1);
        assert_eq!(s.warmup_steps, 10);
        assert!((s.lr(0) - 0.1).abs() < 1e-12);
        assert!((s.lr(9) - 1.0).abs() < 1e-12);
        assert!((s.lr(10) - 1.0).abs() < 1e-12);
        assert!((s.lr(55) - 0.5).abs() < 1e-12);
        assert!(s.lr(99) < 0.01);
        assert!((1..100).all(|i| i <= 10 || s.lr(i) <= s.lr(i - 1)));
    }

    #[test]
    fn decay_exclusions() {
        assert!(!decays(LOGIT_SCALE));
        assert!(!decays("vision.ln_pre.bias"));
        assert!(!decays("prompt.text.0"));
        assert!(decays("vision.proj"));
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut g = vec![
            Tensor::new(&[3.0f64, 0.0], &Device::Cpu).unwrap(),
            Tensor::new(&[4.0f64], &Device::Cpu).unwrap(),
        ];
        let n = clip_global_norm(&mut g, 1.0).unwrap();
        assert!((n - 5.0).abs() < 1e-12);
        let after = clip_global_norm(&mut g.clone(), 10.0).unwrap();
        assert!((after - 1.0).abs() < 1e-9);
    }

    #[test]
    fn adamw_matches_scalar_reference() {
        let mut params = ParameterStore::new(DType::F64, Device::Cpu);
        params.insert_values("w", &[2], vec![1.0, -2.0]).unwrap();
        params.insert_values("b.bias", &[1], vec![0.5]).unwrap();
        let cfg = AdamWConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.1,
        };
        let mut opt = AdamW::new(&params, vec!["w".into(), "b.bias".into()], cfg).unwrap();
        let grads_seq = [[0.3, -0.1, 2.0], [0.2, 0.4, -1.0]];
        let lr = 0.01;
        // scalar reference
        let mut p = [1.0f64, -2.0, 0.5];
        let (mut m, mut v) = ([0.0f64; 3], [0.0f64; 3]);
        for (t, gs) in grads_seq.iter().enumerate() {
            let grads = vec![
                Tensor::new(&gs[..2], &Device::Cpu).unwrap(),
                Tensor::new(&gs[2..], &Device::Cpu).unwrap(),
            ];
            opt.step(&params, &grads, lr).unwrap();
            let t = (t + 1) as i32;
            for i in 0..3 {
                m[i] = 0.9 * m[i] + 0.1 * gs[i];
                v[i] = 0.98 * v[i] + 0.02 * gs[i] * gs[i];
                if i < 2 {
                    p[i] *= 1.0 - lr * 0.1;
                }
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.98f64.powi(t));
                p[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        let got: Vec<f64> = [params.values("w").unwrap(), params.values("b.bias").unwrap()].concat();
        for (a, b) in got.iter().zip(p) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
