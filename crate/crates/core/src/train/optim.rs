use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub const PRETRAIN: Self = Self {
        beta1: 0.9,
        beta2: 0.95,
        eps: 1e-8,
        weight_decay: 0.05,
    };
    pub const FINETUNE: Self = Self {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.05,
    };
}

/// Default decay policy: projection matrices only. Biases, norm gains,
/// embedding tables and tokens are not decayed.
pub fn decays_by_default(name: &str, shape: &[usize]) -> bool {
    shape.len() == 2 && name.ends_with(".weight")
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamW<E: Element = f32> {
    pub config: AdamWConfig,
    m: ParamStore<E>,
    v: ParamStore<E>,
    step: u64,
    decay: fn(&str, &[usize]) -> bool,
}

impl<E: Element> AdamW<E> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            m: ParamStore::new(),
            v: ParamStore::new(),
            step: 0,
            decay: decays_by_default,
        }
    }

    /// Replaces the rule deciding which tensors receive weight decay.
    pub fn with_decay_policy(mut self, policy: fn(&str, &[usize]) -> bool) -> Self {
        self.decay = policy;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every tensor in `params` that has a gradient.
    ///
    /// Rejects the whole step, leaving parameters and state untouched, when
    /// a gradient is missing, misshapen or non-finite.
    pub fn step(
        &mut self,
        params: &mut ParamStore<E>,
        grads: &ParamStore<E>,
        lr: f64,
    ) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("no gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::dim("adamw_step", g.shape(), p.shape()));
            }
            if !g.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for `{name}`; step rejected"
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (E::from_f64(c.beta1), E::from_f64(c.beta2));
        let (one, eps) = (E::one(), E::from_f64(c.eps));
        let step_size = E::from_f64(lr / bc1);
        let sqrt_bc2 = E::from_f64(bc2.sqrt());
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("checked above");
            if self.m.get(name).is_none() {
                self.m.insert(name, zeros_like(p));
                self.v.insert(name, zeros_like(p));
            }
            let m = self.m.get_mut(name).expect("inserted");
            let v = self.v.get_mut(name).expect("inserted");
            let shrink = if c.weight_decay != 0.0 && (self.decay)(name, p.shape()) {
                E::from_f64(1.0 - lr * c.weight_decay)
            } else {
                one
            };
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *pi = *pi * shrink;
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let denom = vi.sqrt() / sqrt_bc2 + eps;
                *pi = *pi - step_size * *mi / denom;
            }
        }
        Ok(())
    }
}

fn zeros_like<E: Element>(t: &Tensor<E>) -> Tensor<E> {
    Tensor::zeros(t.shape()).expect("existing tensor has a valid shape")
}

/// Averages gradients over `k` micro-batches.
///
/// Each pushed gradient is scaled by `1/k` on arrival; every `k`-th push
/// returns the sum and resets.
#[derive(Debug, Clone)]
pub struct GradAccumulator<E: Element = f32> {
    k: usize,
    pending: usize,
    sum: Option<ParamStore<E>>,
}

impl<E: Element> GradAccumulator<E> {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("grad_accum must be at least 1".into()));
        }
        Ok(Self {
            k,
            pending: 0,
            sum: None,
        })
    }

    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn push(&mut self, grads: ParamStore<E>) -> Result<Option<ParamStore<E>>> {
        let scale = E::from_f64(1.0 / self.k as f64);
        match &mut self.sum {
            None => {
                let mut g = grads;
                for (_, t) in g.iter_mut() {
                    t.data_mut().iter_mut().for_each(|x| *x = *x * scale);
                }
                self.sum = Some(g);
            }
            Some(sum) => {
                for (name, acc) in sum.iter_mut() {
                    let g = grads.get(name).ok_or_else(|| {
                        Error::Contract(format!("micro-batch lacks gradient `{name}`"))
                    })?;
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a = *a + b * scale;
                    }
                }
            }
        }
        self.pending += 1;
        if self.pending == self.k {
            self.pending = 0;
            Ok(self.sum.take())
        } else {
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::new([1, 1], vec![v]).unwrap());
        s
    }

    fn value(s: &ParamStore<f64>, name: &str) -> f64 {
        s.get(name).unwrap().data()[0]
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = single("w.weight", 1.0);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::FINETUNE
        });
        opt.step(&mut p, &single("w.weight", 1.0), 0.1).unwrap();
        assert!((value(&p, "w.weight") - 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        let mut p = single("w.weight", 0.37);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::PRETRAIN
        });
        for _ in 0..5 {
            opt.step(&mut p, &single("w.weight", 0.0), 0.1).unwrap();
        }
        assert_eq!(value(&p, "w.weight"), 0.37);
    }

    #[test]
    fn decay_only() {
        let mut p = single("w.weight", 2.0);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.1,
            ..AdamWConfig::FINETUNE
        });
        for i in 1..=3 {
            opt.step(&mut p, &single("w.weight", 0.0), 0.1).unwrap();
            assert!((value(&p, "w.weight") - 2.0 * 0.99f64.powi(i)).abs() < 1e-12);
        }
        // biases are not decayed under the default policy
        let mut b = single("w.bias", 2.0);
        let mut b_shaped = ParamStore::new();
        b_shaped.insert("w.bias", Tensor::new([1], vec![2.0]).unwrap());
        let mut zero = ParamStore::new();
        zero.insert("w.bias", Tensor::new([1], vec![0.0]).unwrap());
        AdamW::new(AdamWConfig::FINETUNE)
            .step(&mut b_shaped, &zero, 0.1)
            .unwrap();
        assert_eq!(b_shaped.get("w.bias").unwrap().data()[0], 2.0);
        let mut all = AdamW::new(AdamWConfig::FINETUNE).with_decay_policy(|_, _| true);
        all.step(&mut b, &single("w.bias", 0.0), 0.1).unwrap();
        assert!((value(&b, "w.bias") - 2.0 * (1.0 - 0.1 * 0.05)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = single("enc.x.weight", 1.0);
        let mut opt = AdamW::<f64>::new(AdamWConfig::FINETUNE);
        let err = opt
            .step(&mut p, &single("enc.x.weight", f64::NAN), 0.1)
            .unwrap_err();
        assert!(err.to_string().contains("enc.x.weight"));
        assert_eq!(value(&p, "enc.x.weight"), 1.0);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn accumulation_averages() {
        let mut acc = GradAccumulator::<f64>::new(2).unwrap();
        assert!(acc.push(single("a", 1.5)).unwrap().is_none());
        let out = acc.push(single("a", 4.5)).unwrap().unwrap();
        assert_eq!(value(&out, "a"), 3.0);
        let mut one = GradAccumulator::<f64>::new(1).unwrap();
        assert_eq!(
            value(&one.push(single("a", 7.0)).unwrap().unwrap(), "a"),
            7.0
        );
        let mut same = GradAccumulator::<f64>::new(2).unwrap();
        same.push(single("a", 0.3)).unwrap();
        assert_eq!(
            value(&same.push(single("a", 0.3)).unwrap().unwrap(), "a"),
            0.3
        );
        assert!(GradAccumulator::<f64>::new(0).is_err());
    }
}
