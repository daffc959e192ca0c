use crate::error::{check_dim, Error, Result};
use crate::net::mlp::{MlpNetwork, ParamGrads};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: ParamGrads,
    second: ParamGrads,
}

impl AdamState {
    pub fn new(net: &MlpNetwork, lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: ParamGrads::zeros_like(net),
            second: ParamGrads::zeros_like(net),
        }
    }
}

fn update_slice(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], st: (f64, f64, f64, f64, f64, f64)) {
    let (lr, b1, b2, eps, c1, c2) = st;
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One bias-corrected Adam update of `net` in place.
pub fn adam_step(net: &mut MlpNetwork, grads: &ParamGrads, state: &mut AdamState) -> Result<()> {
    check_dim("gradient layers", net.layers.len(), grads.weights.len())?;
    check_dim("moment layers", net.layers.len(), state.first.weights.len())?;
    for (l, layer) in net.layers.iter().enumerate() {
        check_dim("gradient shape", layer.weights.len(), grads.weights[l].len())?;
        check_dim("gradient shape", layer.bias.len(), grads.biases[l].len())?;
        check_dim("moment shape", layer.weights.len(), state.first.weights[l].len())?;
    }
    state.step += 1;
    let t = state.step as i32;
    let consts = (
        state.lr,
        state.beta1,
        state.beta2,
        state.eps,
        1.0 - state.beta1.powi(t),
        1.0 - state.beta2.powi(t),
    );
    for (l, layer) in net.layers.iter_mut().enumerate() {
        update_slice(
            layer.weights.as_mut_slice(),
            grads.weights[l].as_slice(),
            state.first.weights[l].as_mut_slice(),
            state.second.weights[l].as_mut_slice(),
            consts,
        );
        update_slice(
            layer.bias.as_mut_slice(),
            grads.biases[l].as_slice(),
            state.first.biases[l].as_mut_slice(),
            state.second.biases[l].as_mut_slice(),
            consts,
        );
    }
    Ok(())
}

/// `target <- tau * source + (1 - tau) * target`
pub fn polyak_update(target: &mut MlpNetwork, source: &MlpNetwork, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("polyak rate {tau} outside [0, 1]")));
    }
    check_dim("network depth", source.layers.len(), target.layers.len())?;
    for (t, s) in target.layers.iter().zip(&source.layers) {
        check_dim("layer shape", s.weights.len(), t.weights.len())?;
        check_dim("layer shape", s.bias.len(), t.bias.len())?;
    }
    for (t, s) in target.layers.iter_mut().zip(&source.layers) {
        for (a, b) in t
            .weights
            .iter_mut()
            .zip(s.weights.iter())
            .chain(t.bias.iter_mut().zip(s.bias.iter()))
        {
            *a = tau * b + (1.0 - tau) * *a;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::mlp::{Activation, Layer};

    fn scalar_net(w: f64) -> MlpNetwork {
        let mut l = Layer::zeros(1, 1, Activation::Linear, 1.0);
        l.weights[(0, 0)] = w;
        MlpNetwork::new(vec![l]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut net = scalar_net(1.5);
        let mut st = AdamState::new(&net, 1e-3);
        let g = ParamGrads::zeros_like(&net);
        for _ in 0..3 {
            adam_step(&mut net, &g, &mut st).unwrap();
        }
        assert_eq!(net.layers[0].weights[(0, 0)], 1.5);
    }

    #[test]
    fn first_step_hand_formula() {
        // m = 0.1 g, v = 0.001 g^2; corrected m_hat = g, v_hat = g^2
        // step = lr * g / (|g| + eps)
        let mut net = scalar_net(1.0);
        let mut st = AdamState::new(&net, 0.01);
        let mut g = ParamGrads::zeros_like(&net);
        g.weights[0][(0, 0)] = -4.0;
        g.biases[0][0] = 0.5;
        adam_step(&mut net, &g, &mut st).unwrap();
        let w = net.layers[0].weights[(0, 0)];
        let b = net.layers[0].bias[0];
        assert!((w - (1.0 + 0.01 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
        assert!((b - (0.0 - 0.01 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn deterministic_updates() {
        let mut a = scalar_net(0.3);
        let mut b = scalar_net(0.3);
        let mut sa = AdamState::new(&a, 0.1);
        let mut sb = AdamState::new(&b, 0.1);
        let mut g = ParamGrads::zeros_like(&a);
        g.weights[0][(0, 0)] = 0.7;
        adam_step(&mut a, &g, &mut sa).unwrap();
        adam_step(&mut b, &g, &mut sb).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn polyak_cases() {
        let src = scalar_net(4.0);
        let mut t = scalar_net(2.0);
        polyak_update(&mut t, &src, 0.5).unwrap();
        assert_eq!(t.layers[0].weights[(0, 0)], 3.0);
        let mut t = scalar_net(2.0);
        polyak_update(&mut t, &src, 0.0).unwrap();
        assert_eq!(t.layers[0].weights[(0, 0)], 2.0);
        polyak_update(&mut t, &src, 1.0).unwrap();
        assert_eq!(t, src);
        assert!(polyak_update(&mut t, &src, 1.5).is_err());
        assert!(polyak_update(&mut t, &src, -0.1).is_err());
    }
}
