use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gradient_check, Activation, DenseNet, ForwardCache, GradCheckReport, Gradients, Parameters};

/// Phase selector: a shared relu trunk feeding one two-output head per
/// phase. The head is picked by the current phase, so each phase learns its
/// own keep/change values on a common embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub trunk: DenseNet,
    pub heads: Vec<DenseNet>,
}

/// Activations from [`QNetwork::forward`].
#[derive(Debug, Clone)]
pub struct QCache {
    phase: usize,
    trunk: ForwardCache,
    head: ForwardCache,
}

impl QCache {
    pub fn relu_pattern(&self, net: &QNetwork) -> Vec<i8> {
        let mut p = self.trunk.relu_pattern(&net.trunk);
        p.extend(self.head.relu_pattern(&net.heads[self.phase]));
        p
    }
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], phase_count: usize, rng: &mut R) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::config("hidden_layers>=1", "q-network needs a hidden layer"));
        }
        if phase_count == 0 {
            return Err(Error::config("phase_count>=1", "q-network needs a head"));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        let trunk = DenseNet::new(&sizes, Activation::Relu, rng)?;
        let embed = *hidden.last().expect("non-empty");
        let heads = (0..phase_count)
            .map(|_| DenseNet::new(&[embed, 2], Activation::Identity, rng))
            .collect::<Result<_>>()?;
        QNetwork::from_parts(trunk, heads)
    }

    pub fn from_parts(trunk: DenseNet, heads: Vec<DenseNet>) -> Result<Self> {
        for h in &heads {
            if h.input_dim() != trunk.output_dim() {
                return Err(Error::Shape {
                    expected: trunk.output_dim(),
                    actual: h.input_dim(),
                });
            }
            if h.output_dim() != 2 {
                return Err(Error::Shape {
                    expected: 2,
                    actual: h.output_dim(),
                });
            }
        }
        if heads.is_empty() {
            return Err(Error::Shape { expected: 1, actual: 0 });
        }
        Ok(QNetwork { trunk, heads })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn phase_count(&self) -> usize {
        self.heads.len()
    }

    fn head(&self, phase: usize) -> Result<&DenseNet> {
        self.heads.get(phase).ok_or(Error::Shape {
            expected: self.heads.len(),
            actual: phase,
        })
    }

    /// [Q(s, keep), Q(s, change)] through the head of `phase`.
    pub fn q_values(&self, input: &[f64], phase: usize) -> Result<[f64; 2]> {
        let head = self.head(phase)?;
        let z = self.trunk.predict(input)?;
        let q = head.predict(&z)?;
        Ok([q[0], q[1]])
    }

    pub fn forward(&self, input: &[f64], phase: usize) -> Result<([f64; 2], QCache)> {
        let head = self.head(phase)?;
        let (z, trunk) = self.trunk.forward(input)?;
        let (q, head_cache) = head.forward(&z)?;
        Ok((
            [q[0], q[1]],
            QCache {
                phase,
                trunk,
                head: head_cache,
            },
        ))
    }

    /// Adds the gradients of dL/dQ = `q_grad` into `acc`.
    pub fn backward_into(&self, cache: &QCache, q_grad: [f64; 2], acc: &mut QGradients) -> Result<()> {
        let hg = self.heads[cache.phase].backward(&cache.head, &q_grad)?;
        let tg = self.trunk.backward(&cache.trunk, &hg.input)?;
        acc.trunk.accumulate(&tg);
        acc.heads[cache.phase].accumulate(&hg);
        Ok(())
    }

    /// A copy of `self` used for bootstrap targets.
    pub fn sync_from(&mut self, other: &QNetwork) {
        self.clone_from(other);
    }
}

#[derive(Debug, Clone)]
pub struct QGradients {
    pub trunk: Gradients,
    pub heads: Vec<Gradients>,
}

impl QGradients {
    pub fn zeros_like(net: &QNetwork) -> Self {
        QGradients {
            trunk: Gradients::zeros_like(&net.trunk),
            heads: net.heads.iter().map(Gradients::zeros_like).collect(),
        }
    }

    /// Flattened in the network's parameter order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.trunk.flat();
        for h in &self.heads {
            out.extend(h.flat());
        }
        out
    }
}

impl Parameters for QNetwork {
    fn visit_params(&self, f: &mut dyn FnMut(f64)) {
        self.trunk.visit_params(f);
        for h in &self.heads {
            h.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut f64)) {
        self.trunk.visit_params_mut(f);
        for h in &mut self.heads {
            h.visit_params_mut(f);
        }
    }

    fn param_count(&self) -> usize {
        self.trunk.param_count() + self.heads.iter().map(|h| h.param_count()).sum::<usize>()
    }
}

/// One regression sample for [`qnet_gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    pub state: Vec<f64>,
    pub phase: usize,
    pub action: usize,
    pub target: f64,
}

/// Minibatch squared TD error of the taken actions, with the relu pattern
/// of every sample so kinks can be detected.
pub fn regression_loss(net: &QNetwork, batch: &[RegressionSample]) -> Result<(f64, Vec<i8>)> {
    let n = batch.len().max(1) as f64;
    let mut loss = 0.0;
    let mut pattern = Vec::new();
    for s in batch {
        let (q, cache) = net.forward(&s.state, s.phase)?;
        let e = q[s.action] - s.target;
        loss += e * e / n;
        pattern.extend(cache.relu_pattern(net));
    }
    Ok((loss, pattern))
}

/// Backprop gradient of [`regression_loss`], flattened in parameter order.
pub fn regression_gradient(net: &QNetwork, batch: &[RegressionSample]) -> Result<Vec<f64>> {
    let n = batch.len().max(1) as f64;
    let mut acc = QGradients::zeros_like(net);
    for s in batch {
        let (q, cache) = net.forward(&s.state, s.phase)?;
        let mut g = [0.0; 2];
        g[s.action] = 2.0 * (q[s.action] - s.target) / n;
        net.backward_into(&cache, g, &mut acc)?;
    }
    Ok(acc.flat())
}

/// Gradient check of a randomly shaped Q-network (at most `max_params`
/// parameters) on a random minibatch.
pub fn qnet_gradient_check<R: Rng + ?Sized>(max_params: usize, rng: &mut R) -> Result<GradCheckReport> {
    let net = loop {
        let lanes = rng.random_range(2..=8);
        let phases = if rng.random_bool(0.5) { 2 } else { 4 };
        let depth = rng.random_range(1..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(3..=16)).collect();
        let net = QNetwork::new(lanes + phases, &hidden, phases, rng)?;
        if net.param_count() <= max_params {
            break net;
        }
    };
    let batch: Vec<RegressionSample> = (0..4)
        .map(|_| {
            let phase = rng.random_range(0..net.phase_count());
            let mut state: Vec<f64> = (0..net.input_dim() - net.phase_count())
                .map(|_| rng.random_range(0..8) as f64 * 0.1)
                .collect();
            state.extend((0..net.phase_count()).map(|k| if k == phase { 1.0 } else { 0.0 }));
            RegressionSample {
                state,
                phase,
                action: rng.random_range(0..2),
                target: rng.random_range(-2.0..2.0),
            }
        })
        .collect();
    let analytic = regression_gradient(&net, &batch)?;
    Ok(gradient_check(
        &net,
        |m| regression_loss(m, &batch).expect("shapes fixed above"),
        &analytic,
        1e-6,
        None,
        rng,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hand_net() -> QNetwork {
        // trunk: z = relu(2x0 - x1 + 0.5); heads: k0 → [z, -z + 1], k1 → [3z, 0]
        let trunk = DenseNet::from_layers(vec![Dense {
            inputs: 2,
            outputs: 1,
            weights: vec![2.0, -1.0],
            bias: vec![0.5],
            activation: Activation::Relu,
        }])
        .unwrap();
        let head = |w: [f64; 2], b: [f64; 2]| {
            DenseNet::from_layers(vec![Dense {
                inputs: 1,
                outputs: 2,
                weights: w.to_vec(),
                bias: b.to_vec(),
                activation: Activation::Identity,
            }])
            .unwrap()
        };
        QNetwork::from_parts(trunk, vec![head([1.0, -1.0], [0.0, 1.0]), head([3.0, 0.0], [0.0, 0.0])]).unwrap()
    }

    #[test]
    fn hand_computed_q_pair() {
        let net = hand_net();
        // z = relu(2 - 0.5 + 0.5) = 2
        assert_eq!(net.q_values(&[1.0, 0.5], 0).unwrap(), [2.0, -1.0]);
        assert_eq!(net.q_values(&[1.0, 0.5], 1).unwrap(), [6.0, 0.0]);
        // z = relu(-3 + 0.5) = 0
        assert_eq!(net.q_values(&[-1.0, 1.0], 0).unwrap(), [0.0, 1.0]);
    }

    #[test]
    fn zero_heads_return_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = QNetwork::new(6, &[8], 2, &mut rng).unwrap();
        for h in &mut net.heads {
            h.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
            h.layers[0].bias = vec![0.25, -0.75];
        }
        assert_eq!(net.q_values(&[1.0, 2.0, 3.0, 4.0, 1.0, 0.0], 0).unwrap(), [0.25, -0.75]);
    }

    #[test]
    fn heads_differ_and_shapes_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = QNetwork::new(6, &[16, 16], 2, &mut rng).unwrap();
        let x = [3.0, 1.0, 0.0, 2.0, 1.0, 0.0];
        assert_ne!(net.q_values(&x, 0).unwrap(), net.q_values(&x, 1).unwrap());
        assert!(net.q_values(&x, 2).is_err());
        assert!(net.q_values(&x[..5], 0).is_err());
        assert_eq!(net.param_count(), net.flat_params().len());
        assert_eq!(net.param_count(), 6 * 16 + 16 + 16 * 16 + 16 + 2 * (16 * 2 + 2));
    }

    proptest::proptest! {
        #[test]
        fn head_isolation(seed in 0u64..500, delta in -1.0f64..1.0, x in proptest::collection::vec(0.0f64..10.0, 4)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = QNetwork::new(6, &[8, 8], 2, &mut rng).unwrap();
            let mut input = x.clone();
            input.extend([0.0, 1.0]);
            let before = net.q_values(&input, 1).unwrap();
            let mut perturbed = net.clone();
            perturbed.heads[0].visit_params_mut(&mut |p| *p += delta);
            proptest::prop_assert_eq!(perturbed.q_values(&input, 1).unwrap(), before);
        }
    }

    #[test]
    fn random_qnets_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let r = qnet_gradient_check(1000, &mut rng).unwrap();
            assert!(r.checked > 0);
            assert!(r.max_relative_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn regression_gradient_matches_hand_net() {
        // z = 2, q = [2, -1] under phase 0; target 0 on keep gives loss 4 and
        // dL/dq0 = 4; dL/dz = 4 · 1, so the trunk weights get 4 · x.
        let net = hand_net();
        let batch = [RegressionSample {
            state: vec![1.0, 0.5],
            phase: 0,
            action: 0,
            target: 0.0,
        }];
        assert_eq!(regression_loss(&net, &batch).unwrap().0, 4.0);
        let g = regression_gradient(&net, &batch).unwrap();
        // Order: trunk w (2), trunk b (1), head0 w (2), head0 b (2), head1 ...
        assert_eq!(&g[..7], &[4.0, 2.0, 4.0, 8.0, 0.0, 4.0, 0.0]);
    }
}
