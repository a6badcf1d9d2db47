use super::OptimizerConfig;
use crate::params::{group_of, ParamStore};

/// SGD with momentum, weight decay on convolution weights, linear warmup
/// and step decay. Gradient norms are clipped per parameter family
/// (detector vs DAN) so that one never rescales the other.
#[derive(Clone, Debug)]
pub struct Sgd {
    cfg: OptimizerConfig,
    velocity: ParamStore,
}

fn is_dan(name: &str) -> bool {
    group_of(name) == "dan"
}

impl Sgd {
    pub fn new(cfg: OptimizerConfig, params: &ParamStore) -> Self {
        Self {
            cfg,
            velocity: params.zeros_like(),
        }
    }

    pub fn learning_rate(&self, iteration: usize, total: usize) -> f64 {
        let c = &self.cfg;
        let mut lr = c.learning_rate;
        if iteration < c.warmup_iterations {
            lr *= (iteration + 1) as f64 / c.warmup_iterations as f64;
        }
        for &f in &c.decay_at {
            if iteration as f64 >= f * total as f64 {
                lr *= 0.1;
            }
        }
        lr
    }

    fn clip_factor(&self, grads: &ParamStore, dan: bool) -> f64 {
        let Some(max) = self.cfg.clip_norm else { return 1.0 };
        let sq: f64 = grads
            .iter()
            .filter(|(k, _)| is_dan(k) == dan)
            .map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        let norm = sq.sqrt();
        if norm > max {
            max / norm
        } else {
            1.0
        }
    }

    /// Applies one update; returns the learning rate used.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, iteration: usize, total: usize) -> f64 {
        let lr = self.learning_rate(iteration, total);
        let factors = [self.clip_factor(grads, false), self.clip_factor(grads, true)];
        let (mu, wd) = (self.cfg.momentum, self.cfg.weight_decay);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let v = self.velocity.get_mut(name).expect("velocity for every parameter");
            let clip = factors[is_dan(name) as usize];
            let decay = if name.ends_with(".weight") { wd } else { 0.0 };
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let step = clip * gv + decay * *pv;
                *vv = mu * *vv + step;
                *pv -= lr * *vv;
            }
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn cfg() -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.5,
            weight_decay: 0.0,
            warmup_iterations: 4,
            decay_at: vec![0.5],
            clip_norm: None,
        }
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let p = ParamStore::new();
        let s = Sgd::new(cfg(), &p);
        let lrs: Vec<f64> = [0, 1, 3, 4, 9, 10].iter().map(|&i| s.learning_rate(i, 20)).collect();
        assert_eq!(lrs[0], 0.025);
        assert_eq!(lrs[2], 0.1);
        assert_eq!(lrs[3], 0.1);
        assert!((lrs[5] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = ParamStore::new();
        p.insert("backbone.x.bias", Tensor::scalar(1.0));
        let mut g = ParamStore::new();
        g.insert("backbone.x.bias", Tensor::scalar(1.0));
        let mut s = Sgd::new(cfg(), &p);
        s.step(&mut p, &g, 4, 100);
        assert!((p.get("backbone.x.bias").unwrap().item() - 0.9).abs() < 1e-15);
        s.step(&mut p, &g, 4, 100);
        // velocity 1.5
        assert!((p.get("backbone.x.bias").unwrap().item() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn clipping_is_per_family() {
        let mut c = cfg();
        c.clip_norm = Some(1.0);
        c.momentum = 0.0;
        let mut p = ParamStore::new();
        p.insert("backbone.a.bias", Tensor::scalar(0.0));
        p.insert("dan.a.bias", Tensor::scalar(0.0));
        let mut g = ParamStore::new();
        g.insert("backbone.a.bias", Tensor::scalar(0.5));
        g.insert("dan.a.bias", Tensor::scalar(100.0));
        let mut s = Sgd::new(c, &p);
        s.step(&mut p, &g, 10, 100);
        assert_eq!(p.get("backbone.a.bias").unwrap().item(), -0.05);
        assert!((p.get("dan.a.bias").unwrap().item() + 0.1).abs() < 1e-15);
    }
}
