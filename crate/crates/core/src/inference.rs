//! Variational encoder q(θ | bag of words): a ReLU feed-forward network
//! whose two linear heads give the mean and log standard deviation of a
//! diagonal Gaussian.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Graph, ParamStore, Tensor, Var};
use crate::{Error, Result};

/// `log σ` is clamped to this range before exponentiation.
pub const LOG_SIGMA_BOUND: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Bag-of-words width (non-stop vocabulary size).
    pub input_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub topic_dim: usize,
    /// Feed term frequencies divided by their total instead of raw counts.
    #[serde(default)]
    pub normalize_bow: bool,
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.hidden_size == 0 || self.num_hidden_layers == 0 || self.topic_dim == 0 {
            return Err(Error::Config(format!("invalid inference network config {self:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (e, k) = (self.hidden_size, self.topic_dim);
        let hidden: usize = (0..self.num_hidden_layers)
            .map(|l| {
                let input = if l == 0 { self.input_size } else { e };
                e * input + e
            })
            .sum();
        hidden + 2 * (k * e + k)
    }

    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, scale: f64, rng: &mut R) -> Result<()> {
        self.validate()?;
        let (e, k) = (self.hidden_size, self.topic_dim);
        for l in 0..self.num_hidden_layers {
            let input = if l == 0 { self.input_size } else { e };
            store.insert_uniform(format!("infer.{l}.w"), &[e, input], scale, rng)?;
            store.insert_uniform(format!("infer.{l}.b"), &[e], scale, rng)?;
        }
        store.insert_uniform("infer.mu.w", &[k, e], scale, rng)?;
        store.insert_uniform("infer.mu.b", &[k], scale, rng)?;
        store.insert_uniform("infer.logsig.w", &[k, e], scale, rng)?;
        store.insert_uniform("infer.logsig.b", &[k], scale, rng)?;
        Ok(())
    }

    fn input_vector(&self, bow: &[u32]) -> Result<Vec<f64>> {
        if bow.len() != self.input_size {
            return Err(Error::Config(format!(
                "bag of words has length {}, encoder expects {}",
                bow.len(),
                self.input_size
            )));
        }
        let mut x: Vec<f64> = bow.iter().map(|&c| c as f64).collect();
        if self.normalize_bow {
            let total: f64 = x.iter().sum();
            if total > 0.0 {
                x.iter_mut().for_each(|v| *v /= total);
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl GaussianPosterior {
    pub fn standard(k: usize) -> Self {
        Self {
            mu: vec![0.0; k],
            log_sigma: vec![0.0; k],
        }
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|s| s.exp()).collect()
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Posterior parameters recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorVars {
    pub mu: Var,
    pub log_sigma: Var,
}

impl PosteriorVars {
    pub fn values(&self, g: &Graph<'_>) -> GaussianPosterior {
        GaussianPosterior {
            mu: g.value(self.mu).data().to_vec(),
            log_sigma: g.value(self.log_sigma).data().to_vec(),
        }
    }
}

pub fn encode_graph(g: &mut Graph<'_>, config: &InferenceConfig, bow: &[u32]) -> Result<PosteriorVars> {
    let x = config.input_vector(bow)?;
    let mut hidden = g.constant(Tensor::vector(x));
    for l in 0..config.num_hidden_layers {
        let w = g.param_named(&format!("infer.{l}.w"))?;
        let b = g.param_named(&format!("infer.{l}.b"))?;
        let wx = g.matvec(w, hidden)?;
        let pre = g.add(wx, b)?;
        hidden = g.relu(pre);
    }
    let head = |g: &mut Graph<'_>, name: &str| -> Result<Var> {
        let w = g.param_named(&format!("infer.{name}.w"))?;
        let b = g.param_named(&format!("infer.{name}.b"))?;
        let wx = g.matvec(w, hidden)?;
        g.add(wx, b)
    };
    let mu = head(g, "mu")?;
    let raw = head(g, "logsig")?;
    let log_sigma = g.clamp(raw, -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND);
    Ok(PosteriorVars { mu, log_sigma })
}

pub fn encode(config: &InferenceConfig, store: &ParamStore, bow: &[u32]) -> Result<GaussianPosterior> {
    let mut g = Graph::new(store);
    let post = encode_graph(&mut g, config, bow)?;
    Ok(post.values(&g))
}

/// θ = μ + σ ⊙ noise.
pub fn sample_theta(post: &GaussianPosterior, noise: &[f64]) -> Vec<f64> {
    post.mu
        .iter()
        .zip(&post.log_sigma)
        .zip(noise)
        .map(|((m, ls), e)| m + ls.exp() * e)
        .collect()
}

pub fn sample_theta_graph(g: &mut Graph<'_>, post: PosteriorVars, noise: &[f64]) -> Result<Var> {
    let sigma = g.exp(post.log_sigma);
    let eps = g.vector(noise.to_vec());
    let spread = g.mul(sigma, eps)?;
    g.add(post.mu, spread)
}

/// KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − 2 log σ).
pub fn kl_to_prior(post: &GaussianPosterior) -> f64 {
    0.5 * post
        .mu
        .iter()
        .zip(&post.log_sigma)
        .map(|(m, ls)| m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls)
        .sum::<f64>()
}

pub fn kl_graph(g: &mut Graph<'_>, post: PosteriorVars) -> Result<Var> {
    let mu_sq = g.mul(post.mu, post.mu)?;
    let two_ls = g.scale(post.log_sigma, 2.0);
    let var = g.exp(two_ls);
    let shifted = g.affine(two_ls, -1.0, -1.0);
    let a = g.add(mu_sq, var)?;
    let terms = g.add(a, shifted)?;
    let total = g.sum(terms);
    Ok(g.scale(total, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::finite_difference_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn config(input: usize, layers: usize) -> InferenceConfig {
        InferenceConfig {
            input_size: input,
            hidden_size: 3,
            num_hidden_layers: layers,
            topic_dim: 2,
            normalize_bow: false,
        }
    }

    fn store(cfg: &InferenceConfig, scale: f64, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        cfg.init_params(&mut s, scale, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        s
    }

    #[test]
    fn zero_network_gives_standard_normal() {
        let cfg = config(5, 2);
        let s = store(&cfg, 0.0, 0);
        let post = encode(&cfg, &s, &[3, 0, 1, 0, 9]).unwrap();
        assert_eq!(post, GaussianPosterior::standard(2));
        assert_eq!(post.sigma(), vec![1.0, 1.0]);
    }

    #[test]
    fn empty_document_depends_on_biases_only() {
        let cfg = InferenceConfig {
            hidden_size: 2,
            num_hidden_layers: 1,
            ..config(3, 1)
        };
        let mut s = store(&cfg, 0.0, 0);
        s.set("infer.0.w", Tensor::matrix(2, 3, vec![5.0; 6]).unwrap()).unwrap();
        s.set("infer.0.b", Tensor::vector(vec![0.5, -1.0])).unwrap();
        s.set("infer.mu.w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        s.set("infer.mu.b", Tensor::vector(vec![0.1, 0.2])).unwrap();
        s.set("infer.logsig.w", Tensor::matrix(2, 2, vec![-1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        s.set("infer.logsig.b", Tensor::vector(vec![0.0, 0.3])).unwrap();
        let post = encode(&cfg, &s, &[0, 0, 0]).unwrap();
        // g = relu([0.5, -1.0]) = [0.5, 0]
        assert!((post.mu[0] - (0.1 + 0.5)).abs() < 1e-15);
        assert!((post.mu[1] - (0.2 + 1.5)).abs() < 1e-15);
        assert!((post.log_sigma[0] + 0.5).abs() < 1e-15);
        assert!((post.log_sigma[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn identical_bags_identical_posteriors() {
        let cfg = config(4, 2);
        let s = store(&cfg, 0.5, 3);
        assert_eq!(encode(&cfg, &s, &[1, 2, 0, 4]).unwrap(), encode(&cfg, &s, &[1, 2, 0, 4]).unwrap());
    }

    #[test]
    fn length_mismatch_is_config_error() {
        let cfg = config(4, 1);
        let s = store(&cfg, 0.1, 0);
        assert!(matches!(encode(&cfg, &s, &[1, 2]), Err(Error::Config(_))));
    }

    #[test]
    fn log_sigma_is_clamped() {
        let cfg = config(2, 1);
        let mut s = store(&cfg, 0.0, 0);
        s.set("infer.logsig.b", Tensor::vector(vec![50.0, -50.0])).unwrap();
        let post = encode(&cfg, &s, &[1, 1]).unwrap();
        assert_eq!(post.log_sigma, vec![LOG_SIGMA_BOUND, -LOG_SIGMA_BOUND]);
    }

    #[test]
    fn normalized_bow_flag() {
        let cfg = InferenceConfig {
            normalize_bow: true,
            ..config(2, 1)
        };
        assert_eq!(cfg.input_vector(&[1, 3]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(cfg.input_vector(&[0, 0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn sampling_edge_cases() {
        let post = GaussianPosterior {
            mu: vec![1.0, -2.0],
            log_sigma: vec![0.3, -0.4],
        };
        assert_eq!(sample_theta(&post, &[0.0, 0.0]), post.mu);
        let std = GaussianPosterior::standard(2);
        assert_eq!(sample_theta(&std, &[0.7, -1.3]), vec![0.7, -1.3]);
    }

    #[test]
    fn sample_mean_converges() {
        let post = GaussianPosterior {
            mu: vec![0.5, -1.5],
            log_sigma: vec![0.2, -0.7],
        };
        let sigma = post.sigma();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let noise: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let th = sample_theta(&post, &noise);
            sum[0] += th[0];
            sum[1] += th[1];
        }
        for k in 0..2 {
            let mean = sum[k] / n as f64;
            assert!((mean - post.mu[k]).abs() < 3.0 * sigma[k] / (n as f64).sqrt());
        }
    }

    // Monte-Carlo oracle: E_q[log q(θ) − log p(θ)] with 10⁶ draws.
    fn kl_monte_carlo(post: &GaussianPosterior, draws: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = post.sigma();
        let mut total = 0.0;
        for _ in 0..draws {
            let mut lq = 0.0;
            let mut lp = 0.0;
            for k in 0..post.dim() {
                let e: f64 = rng.sample(StandardNormal);
                let th = post.mu[k] + sigma[k] * e;
                lq += -0.5 * e * e - post.log_sigma[k];
                lp += -0.5 * th * th;
            }
            total += lq - lp;
        }
        total / draws as f64
    }

    #[test]
    fn kl_closed_form_against_monte_carlo() {
        let cases = [
            (vec![0.0, 0.0], vec![0.0, 0.0], 0.0),
            (vec![1.0, 1.0], vec![0.0, 0.0], 1.0),
            (vec![2.0, 0.0], vec![0.0, 0.0], 2.0),
        ];
        for (mu, ls, expected) in cases {
            let post = GaussianPosterior { mu, log_sigma: ls };
            let mc = kl_monte_carlo(&post, 1_000_000, 17);
            assert!((mc - expected).abs() < 0.01, "MC {mc} vs {expected}");
            assert!((kl_to_prior(&post) - expected).abs() < 1e-12);
        }
        let post = GaussianPosterior {
            mu: vec![0.4, -0.9],
            log_sigma: vec![-0.5, 0.3],
        };
        let mc = kl_monte_carlo(&post, 1_000_000, 18);
        assert!((mc - kl_to_prior(&post)).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn kl_nonnegative(mu in prop::collection::vec(-5.0..5.0f64, 1..6), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let log_sigma: Vec<f64> = mu.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
            let post = GaussianPosterior { mu, log_sigma };
            prop_assert!(kl_to_prior(&post) >= 0.0);
        }

        #[test]
        fn kl_zero_only_at_prior(k in 1usize..6, which in 0usize..6, delta in 1e-3..1.0f64) {
            let mut post = GaussianPosterior::standard(k);
            prop_assert!(kl_to_prior(&post).abs() < 1e-12);
            let i = which % k;
            post.mu[i] = delta;
            prop_assert!(kl_to_prior(&post) > 1e-12);
            post.mu[i] = 0.0;
            post.log_sigma[i] = -delta;
            prop_assert!(kl_to_prior(&post) > 1e-12);
        }
    }

    #[test]
    fn kl_and_reparameterized_loss_gradients() {
        let cfg = config(4, 2);
        let s = store(&cfg, 0.6, 21);
        let bow = [2, 0, 1, 3];
        let noise = [0.37, -1.2];
        let report = finite_difference_check(&s, 1e-5, 1e-4, |g| {
            let post = encode_graph(g, &cfg, &bow)?;
            let kl = kl_graph(g, post)?;
            let theta = sample_theta_graph(g, post, &noise)?;
            let th2 = g.mul(theta, theta)?;
            let t = g.sum(th2);
            let tanh = g.tanh(theta);
            let u = g.sum(tanh);
            g.add_n(&[kl, t, u])
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn graph_kl_matches_closed_form() {
        let cfg = config(3, 1);
        let s = store(&cfg, 0.9, 5);
        let mut g = Graph::new(&s);
        let post = encode_graph(&mut g, &cfg, &[4, 1, 0]).unwrap();
        let kl = kl_graph(&mut g, post).unwrap();
        let values = post.values(&g);
        assert!((g.scalar_value(kl) - kl_to_prior(&values)).abs() < 1e-12);
    }
}
