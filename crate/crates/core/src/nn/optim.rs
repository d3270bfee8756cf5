use super::module::ParamKind;
use super::network::Network;
use super::tensor::Scalar;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable tensor from its accumulated gradient.
    /// Tensors without a gradient are left untouched.
    pub fn step<T: Scalar>(&mut self, net: &mut Network<T>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut i = 0;
        net.visit_mut(&mut |_, t, kind| {
            if kind != ParamKind::Trainable {
                return;
            }
            if ms.len() <= i {
                ms.push(vec![0.0; t.numel()]);
                vs.push(vec![0.0; t.numel()]);
            }
            let (m, v) = (&mut ms[i], &mut vs[i]);
            i += 1;
            let Some(g) = t.grad().map(|g| g.iter().map(|x| x.to_f64().unwrap_or(0.0)).collect::<Vec<_>>()) else {
                return;
            };
            for (k, p) in t.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
                let pv = p.to_f64().unwrap_or(0.0);
                *p = T::of(pv - lr * (update + wd * pv));
            }
        });
    }
}
