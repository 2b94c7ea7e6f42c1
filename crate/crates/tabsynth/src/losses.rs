//! Training objectives and schedules.
//!
//! Each loss exists in two forms: a graph builder (`*_node`) that the
//! trainer composes into one differentiable total, and an eager function
//! over plain tensors for evaluation and tests. `kld_two_normals` is the
//! closed-form divergence between two diagonal Gaussians and doubles as an
//! independent oracle for the standard-normal fast path.

use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, NodeId, NumericsError, ParamSet, Tensor};

/// Guard used inside cosine similarity so zero vectors stay finite.
pub const COSINE_EPS: f64 = 1e-8;

/// Per-batch loss components and the weights in effect when they were
/// combined. `total = ce + beta*kld + alpha*nce + lambda*l1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub kld: f64,
    pub nce: f64,
    pub l1: f64,
    pub beta: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub total: f64,
}

/// One cyclic ramp schedule: the value climbs linearly from 0 to
/// `max_value` over the first `ratio` of each cycle and holds the maximum
/// for the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub cycles: usize,
    pub ratio: f64,
    pub max_value: f64,
    pub total_epochs: usize,
}

impl ScheduleConfig {
    pub fn new(cycles: usize, ratio: f64, max_value: f64, total_epochs: usize) -> Self {
        Self {
            cycles,
            ratio,
            max_value,
            total_epochs,
        }
    }
}

/// Cyclic annealing weight for the given epoch.
///
/// The period is `ceil(total_epochs / cycles)`; within a cycle the value is
/// `max_value * min(1, t / (ratio * period))` where `t` is the position in
/// the cycle. Epoch 0 of every cycle is exactly 0, and the plateau is
/// exactly `max_value`.
pub fn cyclic_schedule(epoch: usize, cfg: &ScheduleConfig) -> f64 {
    debug_assert!(cfg.cycles >= 1 && cfg.total_epochs >= cfg.cycles);
    debug_assert!(cfg.ratio > 0.0 && cfg.ratio <= 1.0);
    let period = cfg.total_epochs.div_ceil(cfg.cycles);
    let t = (epoch % period) as f64;
    let ramp = cfg.ratio * period as f64;
    cfg.max_value * (t / ramp).min(1.0)
}

// ── reconstruction cross-entropy ───────────────────────────────────────

/// Graph form of the reconstruction loss: per-attribute softmax
/// cross-entropy against the target indices, summed over attributes and
/// averaged over the batch. `targets[r][a]` is row r's index for attribute a.
pub fn reconstruction_ce_node(
    g: &mut Graph,
    logits: &[NodeId],
    targets: &[Vec<usize>],
) -> Result<NodeId, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::Contract("no attribute logits".into()));
    }
    let n = targets.len();
    if n == 0 {
        return Err(NumericsError::Contract("empty batch".into()));
    }
    let mut picked_sums = Vec::with_capacity(logits.len());
    for (a, &logit) in logits.iter().enumerate() {
        let lsm = g.log_softmax(logit);
        let width = g.value_shape(lsm)[1];
        // one-hot mask over this attribute's categories
        let mut mask = Tensor::zeros(vec![n, width]);
        for (r, row) in targets.iter().enumerate() {
            let idx = *row.get(a).ok_or_else(|| {
                NumericsError::Contract(format!("target row {} shorter than {} attributes", r, a + 1))
            })?;
            if idx >= width {
                return Err(NumericsError::Contract(format!(
                    "target index {} out of range for {} categories",
                    idx, width
                )));
            }
            mask.data_mut()[r * width + idx] = 1.0;
        }
        let mask = g.constant(mask);
        let picked = g.mul(lsm, mask)?;
        picked_sums.push(g.sum(picked));
    }
    let mut acc = picked_sums[0];
    for &s in &picked_sums[1..] {
        acc = g.add(acc, s)?;
    }
    g.scale(acc, -1.0 / n as f64)
}

/// Eager reconstruction cross-entropy over raw logits.
pub fn reconstruction_ce(logits: &[Tensor], targets: &[Vec<usize>]) -> Result<f64, NumericsError> {
    let mut g = Graph::new();
    let nodes: Vec<NodeId> = logits.iter().map(|t| g.constant(t.clone())).collect();
    let root = reconstruction_ce_node(&mut g, &nodes, targets)?;
    g.forward(&ParamSet::new())?;
    Ok(g.value(root).item())
}

// ── Kullback-Leibler divergences ───────────────────────────────────────

/// Divergence between two diagonal Gaussians,
/// `0.5 * [ (mu_p-mu_q)^2/var_q + var_p/var_q - ln(var_p/var_q) - 1 ]`
/// summed over dimensions. Serves as the independent oracle for
/// [`kld_standard`].
pub fn kld_two_normals(
    mu_p: &[f64],
    var_p: &[f64],
    mu_q: &[f64],
    var_q: &[f64],
) -> Result<f64, NumericsError> {
    if mu_p.len() != var_p.len() || mu_q.len() != var_q.len() || mu_p.len() != mu_q.len() {
        return Err(NumericsError::Contract(
            "mismatched distribution dimensions".into(),
        ));
    }
    if var_p.iter().chain(var_q).any(|&v| v <= 0.0) {
        return Err(NumericsError::Contract(
            "variances must be strictly positive".into(),
        ));
    }
    let mut acc = 0.0;
    for i in 0..mu_p.len() {
        let d = mu_p[i] - mu_q[i];
        acc += 0.5 * (d * d / var_q[i] + var_p[i] / var_q[i] - (var_p[i] / var_q[i]).ln() - 1.0);
    }
    Ok(acc)
}

/// Graph form of the divergence against the standard normal prior:
/// `-0.5 * sum(1 + logvar - mu^2 - exp(logvar))`, summed over latent
/// dimensions and averaged over the batch. Always non-negative.
pub fn kld_standard_node(
    g: &mut Graph,
    mu: NodeId,
    logvar: NodeId,
    batch: usize,
) -> Result<NodeId, NumericsError> {
    let one_plus = g.add_scalar(logvar, 1.0)?;
    let mu_sq = g.mul(mu, mu)?;
    let neg_mu_sq = g.scale(mu_sq, -1.0)?;
    let var = g.exp(logvar);
    let neg_var = g.scale(var, -1.0)?;
    let partial = g.add(one_plus, neg_mu_sq)?;
    let term = g.add(partial, neg_var)?;
    let total = g.sum(term);
    g.scale(total, -0.5 / batch as f64)
}

/// Eager standard-normal KLD for a batch of posterior parameters.
pub fn kld_standard(mu: &Tensor, logvar: &Tensor) -> Result<f64, NumericsError> {
    if mu.shape() != logvar.shape() {
        return Err(NumericsError::Shape {
            op: "kld_standard",
            details: format!("{:?} vs {:?}", mu.shape(), logvar.shape()),
        });
    }
    let (batch, _) = mu.view2();
    let mut g = Graph::new();
    let m = g.constant(mu.clone());
    let lv = g.constant(logvar.clone());
    let root = kld_standard_node(&mut g, m, lv, batch)?;
    g.forward(&ParamSet::new())?;
    Ok(g.value(root).item())
}

// ── InfoNCE contrastive loss ───────────────────────────────────────────

/// Graph form of InfoNCE with cosine similarity. For each anchor row the
/// positive is the matching row of `positives`; the denominator runs over
/// the positives of every row in the batch (the positive included).
pub fn info_nce_node(
    g: &mut Graph,
    anchors: NodeId,
    positives: NodeId,
    tau: f64,
) -> Result<NodeId, NumericsError> {
    let shape = g.value_shape(anchors).to_vec();
    if shape.len() != 2 || g.value_shape(positives) != shape.as_slice() {
        return Err(NumericsError::Shape {
            op: "info_nce",
            details: format!("{:?} vs {:?}", shape, g.value_shape(positives)),
        });
    }
    let n = shape[0];
    if n < 2 {
        return Err(NumericsError::Contract(
            "InfoNCE needs at least two rows for negatives".into(),
        ));
    }
    if tau <= 0.0 {
        return Err(NumericsError::Contract(
            "temperature must be positive".into(),
        ));
    }
    let za = g.row_normalize(anchors, COSINE_EPS);
    let zp = g.row_normalize(positives, COSINE_EPS);
    let zp_t = g.transpose(zp)?;
    let sims = g.matmul(za, zp_t)?;
    let logits = g.scale(sims, 1.0 / tau)?;
    let lsm = g.log_softmax(logits);
    let mut eye = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        eye.data_mut()[i * n + i] = 1.0;
    }
    let eye = g.constant(eye);
    let diag = g.mul(lsm, eye)?;
    let total = g.sum(diag);
    g.scale(total, -1.0 / n as f64)
}

/// Eager InfoNCE over latent batches.
pub fn info_nce(latents: &Tensor, positives: &Tensor, tau: f64) -> Result<f64, NumericsError> {
    let mut g = Graph::new();
    let a = g.constant(latents.clone());
    let p = g.constant(positives.clone());
    let root = info_nce_node(&mut g, a, p, tau)?;
    g.forward(&ParamSet::new())?;
    Ok(g.value(root).item())
}

// ── L1 latent sparsity ─────────────────────────────────────────────────

/// Graph form of the latent sparsity penalty: mean over batch rows of the
/// L1 norm of each latent vector.
pub fn l1_latent_node(g: &mut Graph, z: NodeId, batch: usize) -> Result<NodeId, NumericsError> {
    let norm = g.l1_norm(z);
    g.scale(norm, 1.0 / batch as f64)
}

/// Eager latent L1 penalty.
pub fn l1_latent(z: &Tensor) -> f64 {
    let (batch, _) = z.view2();
    z.data().iter().map(|v| v.abs()).sum::<f64>() / batch as f64
}

// ── total loss ─────────────────────────────────────────────────────────

/// Combines precomputed components into the weighted training objective.
pub fn total_loss(
    ce: f64,
    kld: f64,
    nce: f64,
    l1: f64,
    lambda: f64,
    beta: f64,
    alpha: f64,
) -> LossBreakdown {
    LossBreakdown {
        ce,
        kld,
        nce,
        l1,
        beta,
        alpha,
        lambda,
        total: ce + beta * kld + alpha * nce + lambda * l1,
    }
}

/// Graph form: `ce + beta*kld + alpha*nce + lambda*l1`. Optional terms are
/// skipped entirely so ablated variants never pay for them.
pub fn total_loss_node(
    g: &mut Graph,
    ce: NodeId,
    kld: NodeId,
    nce: Option<NodeId>,
    l1: Option<NodeId>,
    beta: f64,
    alpha: f64,
    lambda: f64,
) -> Result<NodeId, NumericsError> {
    let weighted_kld = g.scale(kld, beta)?;
    let mut acc = g.add(ce, weighted_kld)?;
    if let Some(nce) = nce {
        let weighted = g.scale(nce, alpha)?;
        acc = g.add(acc, weighted)?;
    }
    if let Some(l1) = l1 {
        let weighted = g.scale(l1, lambda)?;
        acc = g.add(acc, weighted)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }

    // brute-force softmax cross-entropy, independent of the graph path
    fn ce_oracle(logits: &[Tensor], targets: &[Vec<usize>]) -> f64 {
        let n = targets.len();
        let mut total = 0.0;
        for (a, t) in logits.iter().enumerate() {
            let (rows, _) = t.view2();
            for r in 0..rows {
                let row = t.row(r);
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                let p = row[targets[r][a]].exp() / z;
                total -= p.ln();
            }
        }
        total / n as f64
    }

    #[test]
    fn ce_uniform_logits_is_ln_cardinality() {
        let logits = vec![Tensor::matrix(1, 4, vec![0.0; 4]).unwrap()];
        let val = reconstruction_ce(&logits, &[vec![0]]).unwrap();
        assert_close(val, 4.0f64.ln(), 1e-12);
    }

    #[test]
    fn ce_near_one_hot_logits_is_zero() {
        let logits = vec![Tensor::matrix(1, 3, vec![1000.0, 0.0, 0.0]).unwrap()];
        let val = reconstruction_ce(&logits, &[vec![0]]).unwrap();
        assert_close(val, 0.0, 1e-12);
    }

    #[test]
    fn ce_adds_across_attributes() {
        let logits = vec![
            Tensor::matrix(1, 2, vec![0.0; 2]).unwrap(),
            Tensor::matrix(1, 3, vec![0.0; 3]).unwrap(),
        ];
        let val = reconstruction_ce(&logits, &[vec![1, 2]]).unwrap();
        assert_close(val, 2.0f64.ln() + 3.0f64.ln(), 1e-12);
    }

    #[test]
    fn ce_matches_brute_force_oracle_on_random_batches() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.gen_range(1..6);
            let attrs = rng.gen_range(1..4);
            let cards: Vec<usize> = (0..attrs).map(|_| rng.gen_range(2..6)).collect();
            let logits: Vec<Tensor> = cards
                .iter()
                .map(|&v| {
                    Tensor::matrix(n, v, (0..n * v).map(|_| rng.gen_range(-3.0..3.0)).collect())
                        .unwrap()
                })
                .collect();
            let targets: Vec<Vec<usize>> = (0..n)
                .map(|_| cards.iter().map(|&v| rng.gen_range(0..v)).collect())
                .collect();
            let got = reconstruction_ce(&logits, &targets).unwrap();
            assert_close(got, ce_oracle(&logits, &targets), 1e-10);
        }
    }

    #[test]
    fn kld_two_normals_identical_is_zero() {
        let v = kld_two_normals(&[0.3, -1.0], &[0.7, 2.0], &[0.3, -1.0], &[0.7, 2.0]).unwrap();
        assert_close(v, 0.0, 1e-15);
    }

    #[test]
    fn kld_two_normals_unit_shift_against_standard() {
        let v = kld_two_normals(&[1.0], &[1.0], &[0.0], &[1.0]).unwrap();
        assert_close(v, 0.5, 1e-15);
    }

    #[test]
    fn kld_two_normals_is_asymmetric() {
        let pq = kld_two_normals(&[0.0], &[2.0], &[0.0], &[1.0]).unwrap();
        let qp = kld_two_normals(&[0.0], &[1.0], &[0.0], &[2.0]).unwrap();
        assert!((pq - qp).abs() > 1e-3, "{} vs {}", pq, qp);
    }

    #[test]
    fn kld_two_normals_rejects_nonpositive_variance() {
        assert!(kld_two_normals(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn kld_standard_zero_at_prior() {
        let mu = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let lv = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        assert_close(kld_standard(&mu, &lv).unwrap(), 0.0, 1e-15);
    }

    #[test]
    fn kld_standard_unit_mean_single_dim() {
        let mu = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let lv = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        assert_close(kld_standard(&mu, &lv).unwrap(), 0.5, 1e-15);
    }

    #[test]
    fn kld_standard_matches_two_normals_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..200 {
            let h = rng.gen_range(1..6);
            let mu: Vec<f64> = (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let logvar: Vec<f64> = (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let var: Vec<f64> = logvar.iter().map(|v| v.exp()).collect();
            let zeros = vec![0.0; h];
            let ones = vec![1.0; h];
            let oracle = kld_two_normals(&mu, &var, &zeros, &ones).unwrap();
            let fast = kld_standard(
                &Tensor::matrix(1, h, mu.clone()).unwrap(),
                &Tensor::matrix(1, h, logvar.clone()).unwrap(),
            )
            .unwrap();
            assert_close(fast, oracle, 1e-12);
        }
    }

    #[test]
    fn kld_standard_nonnegative_with_equality_only_at_prior() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        for _ in 0..200 {
            let mu: f64 = rng.gen_range(-3.0..3.0);
            let lv: f64 = rng.gen_range(-3.0..3.0);
            let v = kld_standard(
                &Tensor::matrix(1, 1, vec![mu]).unwrap(),
                &Tensor::matrix(1, 1, vec![lv]).unwrap(),
            )
            .unwrap();
            assert!(v >= -1e-15);
            if mu.abs() > 1e-3 || lv.abs() > 1e-3 {
                assert!(v > 1e-12, "kld {} at mu={} lv={}", v, mu, lv);
            }
        }
    }

    #[test]
    fn info_nce_uniform_similarities_is_ln_n() {
        for n in [2usize, 3, 7] {
            let data: Vec<f64> = (0..n).flat_map(|_| [1.0, 2.0, 3.0]).collect();
            let z = Tensor::matrix(n, 3, data).unwrap();
            let loss = info_nce(&z, &z, 0.5).unwrap();
            assert_close(loss, (n as f64).ln(), 1e-12);
        }
    }

    #[test]
    fn info_nce_two_row_closed_form() {
        // orthogonal anchor/positive pairs: sim+ = 1, one negative at sim 0
        let anchors = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let positives = anchors.clone();
        let loss = info_nce(&anchors, &positives, 0.5).unwrap();
        assert_close(loss, (1.0 + (-2.0f64).exp()).ln(), 1e-9);
    }

    #[test]
    fn info_nce_decreases_as_positive_alignment_rises() {
        let anchors = Tensor::matrix(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let mut last = f64::INFINITY;
        for angle in [1.2f64, 0.8, 0.3] {
            let positives =
                Tensor::matrix(2, 2, vec![angle.cos(), angle.sin(), -1.0, 0.0]).unwrap();
            let loss = info_nce(&anchors, &positives, 0.5).unwrap();
            assert!(loss < last, "loss {} not below {}", loss, last);
            last = loss;
        }
    }

    #[test]
    fn info_nce_is_cosine_scale_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pos: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = Tensor::matrix(4, 3, data.clone()).unwrap();
        let p = Tensor::matrix(4, 3, pos.clone()).unwrap();
        let a2 = Tensor::matrix(4, 3, data.iter().map(|v| v * 37.5).collect()).unwrap();
        let p2 = Tensor::matrix(4, 3, pos.iter().map(|v| v * 37.5).collect()).unwrap();
        let l1 = info_nce(&a, &p, 0.5).unwrap();
        let l2 = info_nce(&a2, &p2, 0.5).unwrap();
        assert_close(l1, l2, 1e-9);
    }

    #[test]
    fn info_nce_rejects_single_row() {
        let z = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(info_nce(&z, &z, 0.5).is_err());
    }

    #[test]
    fn l1_latent_cases() {
        assert_close(
            l1_latent(&Tensor::matrix(2, 2, vec![0.0; 4]).unwrap()),
            0.0,
            1e-15,
        );
        assert_close(
            l1_latent(&Tensor::matrix(1, 3, vec![1.0, -2.0, 3.0]).unwrap()),
            6.0,
            1e-15,
        );
        let z = Tensor::matrix(2, 2, vec![0.5, -1.5, 2.0, -0.25]).unwrap();
        let z2 = Tensor::matrix(2, 2, vec![1.0, -3.0, 4.0, -0.5]).unwrap();
        assert_close(l1_latent(&z2), 2.0 * l1_latent(&z), 1e-12);
    }

    #[test]
    fn schedule_matches_paper_settings_table() {
        let cfg = ScheduleConfig::new(4, 0.9, 1.0, 200);
        for e in [0usize, 50, 100, 150] {
            assert_eq!(cyclic_schedule(e, &cfg), 0.0, "epoch {}", e);
        }
        for base in [45usize, 95, 145, 195] {
            for e in base..base + 5 {
                assert_eq!(cyclic_schedule(e, &cfg), 1.0, "epoch {}", e);
            }
        }
        assert_close(cyclic_schedule(22, &cfg), 22.0 / 45.0, 1e-12);
    }

    #[test]
    fn schedule_is_periodic_and_nondecreasing_on_ramps() {
        let cfg = ScheduleConfig::new(4, 0.9, 0.7, 200);
        for e in 0..50 {
            assert_eq!(cyclic_schedule(e, &cfg), cyclic_schedule(e + 50, &cfg));
            if e > 0 {
                assert!(cyclic_schedule(e, &cfg) >= cyclic_schedule(e - 1, &cfg));
            }
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let b = total_loss(1.0, 2.0, 3.0, 4.0, 0.001, 0.5, 0.1);
        assert_close(b.total, 2.304, 1e-12);
    }

    #[test]
    fn total_loss_ablated_to_plain_elbo() {
        let b = total_loss(1.3, 0.8, 99.0, 55.0, 0.0, 0.5, 0.0);
        assert_close(b.total, 1.3 + 0.5 * 0.8, 1e-15);
    }
}
