use serde::{Deserialize, Serialize};

use super::{ParamSet, RealArray};
use crate::error::{Error, Result};

/// Adam moments and hyperparameters for one [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<RealArray>,
    second_moment: Vec<RealArray>,
    initialized: bool,
}

impl AdamState {
    /// Uninitialized state with the conventional β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            initialized: false,
        }
    }

    /// Allocates zeroed moment buffers shaped like `params`.
    pub fn init(&mut self, params: &ParamSet) {
        self.first_moment = params.iter().map(|(_, p)| RealArray::zeros(p.value.shape())).collect();
        self.second_moment = self.first_moment.clone();
        self.step = 0;
        self.initialized = true;
    }

    pub fn initialized_for(params: &ParamSet, learning_rate: f64) -> Self {
        let mut s = Self::new(learning_rate);
        s.init(params);
        s
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn check(&self, params: &ParamSet) -> Result<()> {
        if !self.initialized {
            return Err(Error::Contract("Adam state used before init".into()));
        }
        if self.first_moment.len() != params.len()
            || params
                .iter()
                .zip(&self.first_moment)
                .any(|((_, p), m)| p.value.shape() != m.shape())
        {
            return Err(Error::Contract(
                "Adam state does not match the parameter set".into(),
            ));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update from the gradients stored in `params`, which are zeroed afterwards.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) -> Result<()> {
    state.check(params)?;
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        if p.grad.shape() != p.value.shape() {
            p.zero_grad();
        }
        let values = p.value.data_mut();
        for (((x, &g), m), v) in values
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("x", RealArray::from_vec(&[1], vec![v]).unwrap()).unwrap();
        ps
    }

    #[test]
    fn uninitialized_state_is_an_error() {
        let mut ps = scalar_set(1.0);
        assert!(adam_step(&mut ps, &mut AdamState::new(0.1)).is_err());
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut ps = scalar_set(1.25);
        let mut st = AdamState::initialized_for(&ps, 0.1);
        adam_step(&mut ps, &mut st).unwrap();
        assert_eq!(ps.iter().next().unwrap().1.value.data(), &[1.25]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let mut ps = scalar_set(0.0);
        let mut st = AdamState::initialized_for(&ps, 0.1);
        ps.iter_mut().next().unwrap().grad.data_mut()[0] = 1.0;
        adam_step(&mut ps, &mut st).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = −0.1 / (1 + 1e-8)
        let want = -0.1 / (1.0 + 1e-8);
        let got = ps.iter().next().unwrap().1.value.data()[0];
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        // gradient is cleared after the update
        assert_eq!(ps.iter().next().unwrap().1.grad.data(), &[0.0]);
    }

    #[test]
    fn constant_positive_gradient_decreases_monotonically() {
        let mut ps = scalar_set(0.0);
        let mut st = AdamState::initialized_for(&ps, 0.1);
        let mut prev = 0.0;
        for _ in 0..2 {
            ps.iter_mut().next().unwrap().grad.data_mut()[0] = 1.0;
            adam_step(&mut ps, &mut st).unwrap();
            let now = ps.iter().next().unwrap().1.value.data()[0];
            assert!(now < prev);
            prev = now;
        }
    }
}
