//! Fully weighted mixture of linear experts with softmax routing: analytic
//! input gradients and the two-term gradient-norm bound (per-expert
//! Lipschitz average plus the router variation term), pointwise and over a
//! sampled domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, norm2, softmax, vec_axpy, vec_sub, Matrix};

/// Linear-logit softmax router; row `i` of the parameter matrix is the
/// routing vector for expert `i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftmaxRouter {
    pub routing_params: Matrix,
}

impl SoftmaxRouter {
    pub fn new(routing_params: Matrix) -> Result<Self> {
        if routing_params.rows() == 0 {
            return Err(Error::Contract("router needs at least one expert".into()));
        }
        Ok(Self { routing_params })
    }

    pub fn num_experts(&self) -> usize {
        self.routing_params.rows()
    }

    pub fn dim(&self) -> usize {
        self.routing_params.cols()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.routing_params.matvec(x)
    }
}

/// Scalar-output linear expert `f(x) = ⟨w, x⟩ + b` with Lipschitz constant
/// `‖w‖`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearExpert {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearExpert {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn lipschitz(&self) -> f64 {
        norm2(&self.weights)
    }
}

/// Smooth MoE: every expert contributes, weighted by its routing
/// probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothMoE {
    pub router: SoftmaxRouter,
    pub experts: Vec<LinearExpert>,
}

impl SmoothMoE {
    pub fn new(router: SoftmaxRouter, experts: Vec<LinearExpert>) -> Result<Self> {
        if experts.len() != router.num_experts() {
            return Err(Error::DimensionMismatch {
                context: "experts vs router rows",
                expected: format!("{}", router.num_experts()),
                got: format!("{}", experts.len()),
            });
        }
        if experts.iter().any(|e| e.weights.len() != router.dim()) {
            return Err(Error::Contract("expert dims must match router dim".into()));
        }
        Ok(Self { router, experts })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn dim(&self) -> usize {
        self.router.dim()
    }

    /// Random model with the given shape, weights uniform in [-1, 1].
    pub fn random(num_experts: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Matrix::new(
            num_experts,
            dim,
            (0..num_experts * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .expect("finite entries");
        let experts = (0..num_experts)
            .map(|_| LinearExpert {
                weights: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                bias: rng.gen_range(-1.0..1.0),
            })
            .collect();
        Self::new(SoftmaxRouter::new(s).expect("nonempty"), experts).expect("consistent dims")
    }
}

/// Both sides of the pointwise gradient-norm bound at one input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub grad_norm: f64,
    pub expert_term: f64,
    pub router_term: f64,
    pub bound: f64,
    pub sbar: Vec<f64>,
}

/// Supremum estimate of the router variation term over a sampled domain and
/// the resulting global Lipschitz bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalBound {
    pub sup_router_term: f64,
    pub max_expert_lipschitz: f64,
    pub global_bound: f64,
}

/// Domain to sample when estimating the global router-term supremum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum DomainSpec {
    /// Uniform on the l-inf box of the given radius.
    UniformBox { radius: f64 },
    /// Isotropic Gaussian with the given standard deviation.
    Gaussian { std: f64 },
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec::UniformBox { radius: 5.0 }
    }
}

/// Routing probabilities `softmax(S x)`.
pub fn routing_probs(router: &SoftmaxRouter, x: &[f64]) -> Vec<f64> {
    softmax(&router.logits(x))
}

/// Probability-weighted sum of expert outputs.
pub fn forward(model: &SmoothMoE, x: &[f64]) -> f64 {
    let probs = routing_probs(&model.router, x);
    probs
        .iter()
        .zip(&model.experts)
        .map(|(&p, e)| p * e.evaluate(x))
        .sum()
}

/// Probability-weighted mean routing vector `s̄(x) = Σ_j p_j(x) s_j`.
pub fn mean_routing_vector(router: &SoftmaxRouter, probs: &[f64]) -> Vec<f64> {
    let mut sbar = vec![0.0; router.dim()];
    for (j, &p) in probs.iter().enumerate() {
        sbar = vec_axpy(&sbar, p, router.routing_params.row(j));
    }
    sbar
}

/// Analytic input gradient:
/// `∇f(x) = Σ p_i ∇f_i(x) + Σ p_i f_i(x) (s_i − s̄(x))`.
pub fn input_gradient(model: &SmoothMoE, x: &[f64]) -> Vec<f64> {
    let probs = routing_probs(&model.router, x);
    let sbar = mean_routing_vector(&model.router, &probs);
    let mut grad = vec![0.0; model.dim()];
    for (i, expert) in model.experts.iter().enumerate() {
        let p = probs[i];
        grad = vec_axpy(&grad, p, &expert.weights);
        let fi = expert.evaluate(x);
        let si = model.router.routing_params.row(i);
        let centered = vec_sub(si, &sbar);
        grad = vec_axpy(&grad, p * fi, &centered);
    }
    grad
}

/// Evaluate the pointwise bound
/// `‖∇f(x)‖ ≤ Σ p_i L_{f_i} + ‖Σ p_i f_i(x)(s_i − s̄(x))‖` at `x`.
pub fn lemma1_pointwise(model: &SmoothMoE, x: &[f64]) -> Lemma1Report {
    let probs = routing_probs(&model.router, x);
    let sbar = mean_routing_vector(&model.router, &probs);
    let expert_term: f64 = probs
        .iter()
        .zip(&model.experts)
        .map(|(&p, e)| p * e.lipschitz())
        .sum();
    let mut router_vec = vec![0.0; model.dim()];
    for (i, expert) in model.experts.iter().enumerate() {
        let coeff = probs[i] * expert.evaluate(x);
        let centered = vec_sub(model.router.routing_params.row(i), &sbar);
        router_vec = vec_axpy(&router_vec, coeff, &centered);
    }
    let router_term = norm2(&router_vec);
    let grad_norm = norm2(&input_gradient(model, x));
    let bound = expert_term + router_term;
    debug_assert!(grad_norm <= bound + 1e-9);
    Lemma1Report {
        grad_norm,
        expert_term,
        router_term,
        bound,
        sbar,
    }
}

/// Monte-Carlo estimate of the router-term supremum over the sampled
/// domain. The estimate is a lower bound of the true supremum; the global
/// bound combines it with the largest expert Lipschitz constant.
pub fn lemma1_global(
    model: &SmoothMoE,
    domain: DomainSpec,
    num_samples: usize,
    seed: u64,
) -> Result<GlobalBound> {
    if num_samples == 0 {
        return Err(Error::Contract("num_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut sup_router_term = 0.0f64;
    for _ in 0..num_samples {
        let x: Vec<f64> = (0..model.dim())
            .map(|_| match domain {
                DomainSpec::UniformBox { radius } => rng.gen_range(-radius..=radius),
                DomainSpec::Gaussian { std } => std * normal.sample(&mut rng),
            })
            .collect();
        let report = lemma1_pointwise(model, &x);
        sup_router_term = sup_router_term.max(report.router_term);
    }
    let max_expert_lipschitz = model
        .experts
        .iter()
        .map(LinearExpert::lipschitz)
        .fold(0.0, f64::max);
    Ok(GlobalBound {
        sup_router_term,
        max_expert_lipschitz,
        global_bound: max_expert_lipschitz + sup_router_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn two_expert_boundary_model() -> SmoothMoE {
        let s = Matrix::new(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let experts = vec![
            LinearExpert {
                weights: vec![0.0, 0.0],
                bias: 3.0,
            },
            LinearExpert {
                weights: vec![0.0, 0.0],
                bias: -1.0,
            },
        ];
        SmoothMoE::new(SoftmaxRouter::new(s).unwrap(), experts).unwrap()
    }

    #[test]
    fn routing_probs_symmetry_and_boundary() {
        let s = Matrix::new(3, 2, vec![0.4, -0.2, 0.4, -0.2, 0.4, -0.2]).unwrap();
        let router = SoftmaxRouter::new(s).unwrap();
        let p = routing_probs(&router, &[1.0, 2.0]);
        for &v in &p {
            assert_close(v, 1.0 / 3.0, 1e-12);
        }

        let model = two_expert_boundary_model();
        let p = routing_probs(&model.router, &[0.0, 0.0]);
        assert_close(p[0], 0.5, 1e-12);
        assert_close(p[1], 0.5, 1e-12);

        let p = routing_probs(&model.router, &[10.0, 0.0]);
        assert_close(p[0], 1.0 / (1.0 + (-20.0f64).exp()), 1e-12);
    }

    #[test]
    fn forward_examples() {
        // Identical experts collapse to the common function.
        let s = Matrix::new(2, 2, vec![1.0, 2.0, -0.5, 0.3]).unwrap();
        let g = LinearExpert {
            weights: vec![0.7, -0.2],
            bias: 0.4,
        };
        let model =
            SmoothMoE::new(SoftmaxRouter::new(s).unwrap(), vec![g.clone(), g.clone()]).unwrap();
        let x = [0.3, -1.2];
        assert_close(forward(&model, &x), g.evaluate(&x), 1e-12);

        // Boundary point averages constant experts.
        let model = two_expert_boundary_model();
        assert_close(forward(&model, &[0.0, 0.0]), 1.0, 1e-12);

        // A single expert is the dense model.
        let s = Matrix::new(1, 2, vec![0.9, -0.1]).unwrap();
        let e = LinearExpert {
            weights: vec![1.5, 2.5],
            bias: -0.3,
        };
        let model = SmoothMoE::new(SoftmaxRouter::new(s).unwrap(), vec![e.clone()]).unwrap();
        assert_close(forward(&model, &x), e.evaluate(&x), 1e-12);
    }

    #[test]
    fn input_gradient_single_and_identical_experts() {
        let s = Matrix::new(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let e = LinearExpert {
            weights: vec![1.0, -2.0, 0.5],
            bias: 0.0,
        };
        let model = SmoothMoE::new(SoftmaxRouter::new(s).unwrap(), vec![e]).unwrap();
        let g = input_gradient(&model, &[0.4, 0.5, 0.6]);
        assert!(norm2(&vec_sub(&g, &[1.0, -2.0, 0.5])) <= 1e-12);

        let s = Matrix::new(2, 2, vec![2.0, -1.0, 0.5, 0.5]).unwrap();
        let shared = LinearExpert {
            weights: vec![0.3, 0.9],
            bias: 1.1,
        };
        let model = SmoothMoE::new(
            SoftmaxRouter::new(s).unwrap(),
            vec![shared.clone(), shared.clone()],
        )
        .unwrap();
        let g = input_gradient(&model, &[0.2, -0.7]);
        assert!(norm2(&vec_sub(&g, &shared.weights)) <= 1e-12);
    }

    fn finite_difference_gradient(model: &SmoothMoE, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                let mut plus = x.to_vec();
                plus[j] += h;
                let mut minus = x.to_vec();
                minus[j] -= h;
                (forward(model, &plus) - forward(model, &minus)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let model = SmoothMoE::random(3, 4, 55);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let analytic = input_gradient(&model, &x);
            let fd = finite_difference_gradient(&model, &x, 1e-5);
            let rel = norm2(&vec_sub(&analytic, &fd)) / norm2(&fd).max(1e-12);
            assert!(rel <= 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn lemma1_boundary_formula() {
        let model = two_expert_boundary_model();
        let report = lemma1_pointwise(&model, &[0.0, 0.0]);
        // For constant experts c1, c2 at the p = 1/2 boundary the router
        // term is |c1 - c2| * ||s1 - s2|| / 4.
        let s1 = model.router.routing_params.row(0);
        let s2 = model.router.routing_params.row(1);
        let expected = (3.0f64 - (-1.0)).abs() * norm2(&vec_sub(s1, s2)) / 4.0;
        assert_close(report.router_term, expected, 1e-9);
        assert_close(report.expert_term, 0.0, 1e-15);
    }

    #[test]
    fn lemma1_saturated_routing_collapses() {
        let model = two_expert_boundary_model();
        // Logit gap 2 * 20 * 1 = 40 at x = (20, 0).
        let report = lemma1_pointwise(&model, &[20.0, 0.0]);
        assert!(report.router_term <= 1e-6, "router term {}", report.router_term);
    }

    #[test]
    fn lemma1_identical_experts_router_term_vanishes() {
        let s = Matrix::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, -1.0]).unwrap();
        let shared = LinearExpert {
            weights: vec![0.4, -0.6],
            bias: 2.0,
        };
        let model = SmoothMoE::new(
            SoftmaxRouter::new(s).unwrap(),
            vec![shared.clone(), shared.clone(), shared.clone()],
        )
        .unwrap();
        let report = lemma1_pointwise(&model, &[0.3, 0.8]);
        assert!(report.router_term <= 1e-12);
        assert_close(report.grad_norm, norm2(&shared.weights), 1e-12);
    }

    #[test]
    fn lemma1_bound_holds_on_random_models() {
        for m in 0..20 {
            let model = SmoothMoE::random(1 + (m % 4) as usize, 3, 200 + m);
            let mut rng = ChaCha8Rng::seed_from_u64(300 + m);
            for _ in 0..1000 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let report = lemma1_pointwise(&model, &x);
                assert!(report.grad_norm <= report.bound + 1e-9);
            }
        }
    }

    #[test]
    fn lemma1_global_single_expert() {
        let s = Matrix::new(1, 2, vec![0.2, 0.4]).unwrap();
        let e = LinearExpert {
            weights: vec![3.0, 4.0],
            bias: 0.0,
        };
        let model = SmoothMoE::new(SoftmaxRouter::new(s).unwrap(), vec![e]).unwrap();
        let gb = lemma1_global(&model, DomainSpec::default(), 100, 1).unwrap();
        assert_close(gb.global_bound, 5.0, 1e-12);
        assert_close(gb.sup_router_term, 0.0, 1e-12);
    }

    #[test]
    fn lemma1_global_dominates_pointwise_at_sampled_points() {
        let model = SmoothMoE::random(3, 2, 77);
        let gb = lemma1_global(&model, DomainSpec::UniformBox { radius: 2.0 }, 500, 9).unwrap();
        // Replay the sampler's deterministic stream: the global bound must
        // dominate the pointwise bound at every point it visited.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..=2.0)).collect();
            let report = lemma1_pointwise(&model, &x);
            assert!(gb.global_bound >= report.bound - 1e-12);
            assert!(gb.global_bound >= report.grad_norm - 1e-12);
        }
    }

    #[test]
    fn lemma1_global_matches_grid_search() {
        // Constant experts in 2D: compare the sampled supremum against a
        // dense grid at resolution 0.01.
        let model = two_expert_boundary_model();
        let radius = 2.0;
        let mut grid_sup = 0.0f64;
        let steps = (2.0 * radius / 0.01) as usize;
        for i in 0..=steps {
            for j in 0..=steps {
                let x = [-radius + i as f64 * 0.01, -radius + j as f64 * 0.01];
                grid_sup = grid_sup.max(lemma1_pointwise(&model, &x).router_term);
            }
        }
        let gb = lemma1_global(
            &model,
            DomainSpec::UniformBox { radius },
            50_000,
            12,
        )
        .unwrap();
        assert!(
            (gb.sup_router_term - grid_sup).abs() <= 0.05 * grid_sup,
            "MC {} vs grid {grid_sup}",
            gb.sup_router_term
        );
    }

    #[test]
    fn empirical_lipschitz_never_exceeds_global_bound() {
        for m in 0..20 {
            let model = SmoothMoE::random(2 + (m % 3) as usize, 3, 400 + m);
            let gb = lemma1_global(&model, DomainSpec::UniformBox { radius: 5.0 }, 2000, m).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(500 + m);
            let mut emp = 0.0f64;
            for _ in 0..500 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let x2: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let dist = norm2(&vec_sub(&x, &x2));
                if dist < 1e-9 {
                    continue;
                }
                emp = emp.max((forward(&model, &x) - forward(&model, &x2)).abs() / dist);
            }
            assert!(emp <= gb.global_bound + 1e-9, "model {m}: {emp} > {}", gb.global_bound);
        }
    }
}
