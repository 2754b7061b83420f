use super::ParamStore;

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: AdamState,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState::default(),
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// Apply one update to every parameter using its stored gradient.
    pub fn step(&mut self, store: &mut ParamStore) {
        let st = &mut self.state;
        if st.first.len() != store.len() {
            st.first = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
            st.second = st.first.clone();
        }
        st.step += 1;
        let t = st.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            let m = &mut st.first[id.index()];
            let v = &mut st.second[id.index()];
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn store_with(values: Vec<f64>, grads: Vec<f64>) -> ParamStore {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::row_vector(values));
        store.get_mut(id).grad = Tensor::row_vector(grads);
        store
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = store_with(vec![1.0, -2.0], vec![0.0, 0.0]);
        let before = store.clone();
        Adam::new(0.01).step(&mut store);
        assert_eq!(store.value(crate::nn::ParamId(0)), before.value(crate::nn::ParamId(0)));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε) ≈ lr·sign(g).
        let mut store = store_with(vec![0.0, 0.0], vec![0.5, -3.0]);
        Adam::new(0.01).step(&mut store);
        let v = store.value(crate::nn::ParamId(0)).data();
        assert!((v[0] + 0.01).abs() < 1e-9);
        assert!((v[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn identical_state_gives_identical_steps() {
        let mut a = store_with(vec![0.3, 0.1], vec![0.2, -0.7]);
        let mut b = a.clone();
        let mut oa = Adam::new(0.01);
        let mut ob = Adam::new(0.01);
        for _ in 0..2 {
            oa.step(&mut a);
            ob.step(&mut b);
        }
        assert_eq!(a, b);
        assert_eq!(oa, ob);
    }
}
