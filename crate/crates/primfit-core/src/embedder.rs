//! Per-point embedding network and classifier head.
//!
//! A shared MLP maps each point through 3→H→H, a max-pool over points
//! feeds an H→H global branch, and the per-point and global features are
//! fused through 2H→H→D. All activations are tanh and the output rows are
//! normalized to unit length, so the network is smooth everywhere and
//! permutation-equivariant by construction.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::graph::{Graph, Var};
use crate::meanshift::renormalize_rows;
use crate::rng;
use crate::tensor::Tensor;

/// Embedding network weights. Layout per layer: weight `in×out`, bias `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    pub hidden: usize,
    pub dim: usize,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub wp: Tensor,
    pub bp: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
    pub w4: Tensor,
    pub b4: Tensor,
}

/// Per-point classifier head: a shared linear map `D→C` plus softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub classes: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Graph handles for the embedder weights, in the same order as
/// [`EmbedderParams::tensors`].
#[derive(Debug, Clone, Copy)]
pub struct EmbedderVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub wp: Var,
    pub bp: Var,
    pub w3: Var,
    pub b3: Var,
    pub w4: Var,
    pub b4: Var,
}

/// Graph handles for the classifier weights.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierVars {
    pub weight: Var,
    pub bias: Var,
}

fn init_layer(rng: &mut rng::Rng, fan_in: usize, fan_out: usize) -> (Tensor, Tensor) {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    let w: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng::uniform_in(rng, -bound, bound))
        .collect();
    let b: Vec<f64> = (0..fan_out)
        .map(|_| rng::uniform_in(rng, -bound, bound))
        .collect();
    (
        Tensor::matrix(fan_in, fan_out, w).expect("layer shape"),
        Tensor::vector(b),
    )
}

impl EmbedderParams {
    /// Seeded uniform(±1/√fan_in) initialization.
    pub fn init(seed: u64, hidden: usize, dim: usize) -> Result<Self, CoreError> {
        if hidden == 0 || dim == 0 {
            return Err(CoreError::invalid("embedder: hidden and dim must be positive"));
        }
        let mut r = rng::stream(seed, "embedder-init");
        let (w1, b1) = init_layer(&mut r, 3, hidden);
        let (w2, b2) = init_layer(&mut r, hidden, hidden);
        let (wp, bp) = init_layer(&mut r, hidden, hidden);
        let (w3, b3) = init_layer(&mut r, 2 * hidden, hidden);
        let (w4, b4) = init_layer(&mut r, hidden, dim);
        Ok(EmbedderParams {
            hidden,
            dim,
            w1,
            b1,
            w2,
            b2,
            wp,
            bp,
            w3,
            b3,
            w4,
            b4,
        })
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        alloc::vec![
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("wp", &self.wp),
            ("bp", &self.bp),
            ("w3", &self.w3),
            ("b3", &self.b3),
            ("w4", &self.w4),
            ("b4", &self.b4),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        alloc::vec![
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
            ("wp", &mut self.wp),
            ("bp", &mut self.bp),
            ("w3", &mut self.w3),
            ("b3", &mut self.b3),
            ("w4", &mut self.w4),
            ("b4", &mut self.b4),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }

    /// Register the weights as graph leaves.
    pub fn insert(&self, g: &mut Graph) -> Result<EmbedderVars, CoreError> {
        if !self.all_finite() {
            return Err(CoreError::non_finite("embedder parameters"));
        }
        Ok(EmbedderVars {
            w1: g.leaf(self.w1.clone()),
            b1: g.leaf(self.b1.clone()),
            w2: g.leaf(self.w2.clone()),
            b2: g.leaf(self.b2.clone()),
            wp: g.leaf(self.wp.clone()),
            bp: g.leaf(self.bp.clone()),
            w3: g.leaf(self.w3.clone()),
            b3: g.leaf(self.b3.clone()),
            w4: g.leaf(self.w4.clone()),
            b4: g.leaf(self.b4.clone()),
        })
    }
}

impl EmbedderVars {
    pub fn all(&self) -> Vec<Var> {
        alloc::vec![
            self.w1, self.b1, self.w2, self.b2, self.wp, self.bp, self.w3, self.b3, self.w4,
            self.b4,
        ]
    }
}

impl ClassifierParams {
    pub fn init(seed: u64, dim: usize, classes: usize) -> Result<Self, CoreError> {
        if classes == 0 {
            return Err(CoreError::invalid("classifier: class count must be positive"));
        }
        let mut r = rng::stream(seed, "classifier-init");
        let (weight, bias) = init_layer(&mut r, dim, classes);
        Ok(ClassifierParams {
            classes,
            weight,
            bias,
        })
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        alloc::vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        alloc::vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    pub fn insert(&self, g: &mut Graph) -> Result<ClassifierVars, CoreError> {
        if !self.weight.all_finite() || !self.bias.all_finite() {
            return Err(CoreError::non_finite("classifier parameters"));
        }
        Ok(ClassifierVars {
            weight: g.leaf(self.weight.clone()),
            bias: g.leaf(self.bias.clone()),
        })
    }
}

impl ClassifierVars {
    pub fn all(&self) -> Vec<Var> {
        alloc::vec![self.weight, self.bias]
    }
}

fn dense(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var, CoreError> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Forward pass: `points` is an N×3 graph node, output is N×D with
/// unit-norm rows.
pub fn embed(g: &mut Graph, p: &EmbedderVars, points: Var) -> Result<Var, CoreError> {
    let n = g.value(points).rows();
    if n == 0 {
        return Err(CoreError::empty("embed"));
    }
    let h1 = dense(g, points, p.w1, p.b1)?;
    let h1 = g.tanh(h1)?;
    let h2 = dense(g, h1, p.w2, p.b2)?;
    let h2 = g.tanh(h2)?;

    let pooled = g.max_axis(h2, 0)?;
    let hidden = g.value(pooled).len();
    let pooled = g.reshape(pooled, alloc::vec![1, hidden])?;
    let global = dense(g, pooled, p.wp, p.bp)?;
    let global = g.tanh(global)?;
    let global = g.reshape(global, alloc::vec![hidden])?;
    let global = g.repeat_row(global, n)?;

    let fused = g.concat_cols(h2, global)?;
    let h3 = dense(g, fused, p.w3, p.b3)?;
    let h3 = g.tanh(h3)?;
    let z = dense(g, h3, p.w4, p.b4)?;
    renormalize_rows(g, z)
}

/// Row-wise class probabilities for a batch of embeddings.
pub fn classify(g: &mut Graph, c: &ClassifierVars, z: Var) -> Result<Var, CoreError> {
    let logits = dense(g, z, c.weight, c.bias)?;
    g.softmax(logits)
}

/// Convenience wrapper: embed a raw point array outside any training loop.
pub fn embed_points(
    params: &EmbedderParams,
    points: &[f64],
) -> Result<Tensor, CoreError> {
    if points.len() % 3 != 0 {
        return Err(CoreError::shape("embed_points: flat length must be 3N"));
    }
    let n = points.len() / 3;
    let mut g = Graph::new();
    let vars = params.insert(&mut g)?;
    let x = g.constant(Tensor::matrix(n, 3, points.to_vec())?);
    let z = embed(&mut g, &vars, x)?;
    Ok(g.value(z).clone())
}

/// Gradient descent step with momentum applied to a named tensor list.
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Momentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Momentum {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// `params[i] -= lr * v[i]` with `v[i] = momentum * v[i] + grads[i]`.
    pub fn step(
        &mut self,
        params: &mut [(&'static str, &mut Tensor)],
        grads: &[Tensor],
    ) -> Result<(), CoreError> {
        if params.len() != grads.len() {
            return Err(CoreError::shape("momentum: parameter/gradient count"));
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(Tensor::zeros_like).collect();
        }
        for (i, ((name, p), gr)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != gr.shape() {
                let mut msg = String::from("momentum: shape mismatch at ");
                msg.push_str(name);
                return Err(CoreError::shape(msg));
            }
            let v = &mut self.velocity[i];
            for (vk, gk) in v.data_mut().iter_mut().zip(gr.data()) {
                *vk = self.momentum * *vk + gk;
            }
            for (pk, vk) in p.data_mut().iter_mut().zip(v.data()) {
                *pk -= self.lr * vk;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, uniform_in};

    fn random_points(n: usize, seed: u64) -> Vec<f64> {
        let mut r = stream(seed, "test-points");
        (0..3 * n).map(|_| uniform_in(&mut r, -1.0, 1.0)).collect()
    }

    #[test]
    fn rows_are_unit_norm() {
        let params = EmbedderParams::init(11, 16, 8).unwrap();
        let z = embed_points(&params, &random_points(20, 1)).unwrap();
        assert_eq!(z.shape(), &[20, 8]);
        for i in 0..20 {
            let norm: f64 = (0..8).map(|j| z.at(i, j) * z.at(i, j)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn permutation_equivariant() {
        let params = EmbedderParams::init(5, 12, 6).unwrap();
        let pts = random_points(15, 2);
        let z = embed_points(&params, &pts).unwrap();
        // reverse the point order
        let mut rev = vec![0.0; pts.len()];
        for i in 0..15 {
            rev[3 * i..3 * i + 3].copy_from_slice(&pts[3 * (14 - i)..3 * (14 - i) + 3]);
        }
        let zr = embed_points(&params, &rev).unwrap();
        for i in 0..15 {
            for j in 0..6 {
                assert_eq!(z.at(i, j), zr.at(14 - i, j));
            }
        }
    }

    #[test]
    fn deterministic_init() {
        let a = EmbedderParams::init(7, 8, 4).unwrap();
        let b = EmbedderParams::init(7, 8, 4).unwrap();
        let c = EmbedderParams::init(8, 8, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / (3f64).sqrt();
        assert!(a.w1.data().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let c = ClassifierParams {
            classes: 4,
            weight: Tensor::zeros(vec![6, 4]),
            bias: Tensor::zeros(vec![4]),
        };
        let mut g = Graph::new();
        let vars = c.insert(&mut g).unwrap();
        let z = g.constant(Tensor::matrix(3, 6, vec![0.3; 18]).unwrap());
        let p = classify(&mut g, &vars, z).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert!((g.value(p).at(i, j) - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn huge_logits_stay_finite() {
        let mut w = Tensor::zeros(vec![1, 2]);
        w.set(0, 0, 1000.0);
        let c = ClassifierParams {
            classes: 2,
            weight: w,
            bias: Tensor::zeros(vec![2]),
        };
        let mut g = Graph::new();
        let vars = c.insert(&mut g).unwrap();
        let z = g.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let p = classify(&mut g, &vars, z).unwrap();
        let row = g.value(p);
        assert!(row.all_finite());
        assert!(row.at(0, 0) > row.at(0, 1));
        assert!((row.at(0, 0) + row.at(0, 1) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let c = ClassifierParams::init(3, 8, 5).unwrap();
        let params = EmbedderParams::init(3, 16, 8).unwrap();
        let mut g = Graph::new();
        let ev = params.insert(&mut g).unwrap();
        let cv = c.insert(&mut g).unwrap();
        let x = g
            .constant(Tensor::matrix(10, 3, random_points(10, 3)).unwrap());
        let z = embed(&mut g, &ev, x).unwrap();
        let p = classify(&mut g, &cv, z).unwrap();
        let t = g.value(p);
        for i in 0..10 {
            let s: f64 = (0..5).map(|j| t.at(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!((0..5).all(|j| t.at(i, j) >= 0.0));
        }
    }

    #[test]
    fn embedding_sum_gradient_matches_finite_differences() {
        let mut params = EmbedderParams::init(9, 6, 4).unwrap();
        let pts = random_points(16, 4);

        let eval = |p: &EmbedderParams| -> f64 {
            let mut g = Graph::new();
            let vars = p.insert(&mut g).unwrap();
            let x = g.constant(Tensor::matrix(16, 3, pts.clone()).unwrap());
            let z = embed(&mut g, &vars, x).unwrap();
            let s = g.sum(z).unwrap();
            g.value(s).scalar_value()
        };

        // analytic gradients
        let mut g = Graph::new();
        let vars = params.insert(&mut g).unwrap();
        let x = g.constant(Tensor::matrix(16, 3, pts.clone()).unwrap());
        let z = embed(&mut g, &vars, x).unwrap();
        let s = g.sum(z).unwrap();
        let grads = g.backward(s).unwrap();
        let analytic: Vec<Tensor> = vars.all().iter().map(|&v| grads.wrt_or_zeros(v)).collect();

        let h = 1e-6;
        let names: Vec<&'static str> = params.tensors().iter().map(|(n, _)| *n).collect();
        for (ti, name) in names.iter().enumerate() {
            let len = params.tensors()[ti].1.len();
            // spot-check a few entries per tensor
            for k in (0..len).step_by(len.max(5) / 5) {
                let orig = params.tensors()[ti].1.data()[k];
                params.tensors_mut()[ti].1.data_mut()[k] = orig + h;
                let fp = eval(&params);
                params.tensors_mut()[ti].1.data_mut()[k] = orig - h;
                let fm = eval(&params);
                params.tensors_mut()[ti].1.data_mut()[k] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let an = analytic[ti].data()[k];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    ((fd - an) / denom).abs() < 1e-5,
                    "{name}[{k}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn momentum_moves_against_gradient() {
        let mut p = EmbedderParams::init(1, 4, 2).unwrap();
        let before = p.w1.clone();
        let grads: Vec<Tensor> = p
            .tensors()
            .iter()
            .map(|(_, t)| Tensor::filled(t.shape().to_vec(), 1.0))
            .collect();
        let mut opt = Momentum::new(0.1, 0.9);
        opt.step(&mut p.tensors_mut(), &grads).unwrap();
        for (a, b) in p.w1.data().iter().zip(before.data()) {
            assert!((a - (b - 0.1)).abs() < 1e-12);
        }
        // second step compounds velocity: v = 0.9*1 + 1 = 1.9
        opt.step(&mut p.tensors_mut(), &grads).unwrap();
        for (a, b) in p.w1.data().iter().zip(before.data()) {
            assert!((a - (b - 0.1 - 0.19)).abs() < 1e-12);
        }
    }
}
