use ndarray::{Array2, Zip};

use super::params::ParamStore;

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<_> = store.iter().map(|(_, t)| Array2::zeros(t.dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update. Tensors with a `None` gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Array2<f64>>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            // 1-row tensors are biases / norms: no decay.
            let decay = if store.get(i).nrows() > 1 { wd } else { 0.0 };
            let p = store.get_mut(i);
            Zip::from(p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * (mh / (vh.sqrt() + eps) + decay * *p);
                });
        }
    }
}

/// Accumulates per-sample gradients scaled by `k`.
pub fn accumulate(total: &mut Vec<Option<Array2<f64>>>, part: Vec<Option<Array2<f64>>>, k: f64) {
    if total.len() < part.len() {
        total.resize(part.len(), None);
    }
    for (t, p) in total.iter_mut().zip(part) {
        let Some(p) = p else { continue };
        match t {
            Some(t) => t.scaled_add(k, &p),
            None => *t = Some(p * k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_moves_against_gradient() {
        let mut store = ParamStore::new();
        store.push_const("w", (2, 2), 1.0);
        let mut opt = AdamW::new(&store, 0.0);
        let g = vec![Some(Array2::from_elem((2, 2), 3.0))];
        opt.step(&mut store, &g, 0.1);
        // First Adam step moves by ~lr regardless of gradient scale.
        assert!((store.get(0)[[0, 0]] - 0.9).abs() < 1e-6);
    }
}
