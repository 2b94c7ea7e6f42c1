//! The conditional VAE: per-attribute embeddings, a shared condition
//! embedding, an encoder producing (mu, logvar), reparameterized sampling,
//! and a decoder with one categorical head per attribute.
//!
//! Layer widths follow a deterministic rule from the input configuration:
//! the encoder compresses `(A+1)*E -> ceil(w/2) -> ceil(w/4)` before the
//! mu/logvar heads, and the decoder mirrors those widths from `h + E`.
//! Every stage exists both as a graph builder (for the training loss) and
//! as an eager call (for sampling and evaluation).

use thiserror::Error;

use crate::numerics::{Graph, NodeId, NumericsError, ParamId, ParamSet, Tensor};
use crate::seeds;

/// logvar is clamped to this symmetric range before exponentiation.
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ModelError {
    /// Input indices or labels outside the declared cardinalities.
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Architecture dimensions.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    /// Cardinality of each model attribute, in column order.
    pub cardinalities: Vec<usize>,
    pub embedding: usize,
    pub latent: usize,
}

impl ModelDims {
    pub fn new(cardinalities: Vec<usize>, embedding: usize, latent: usize) -> Result<Self, ModelError> {
        if embedding == 0 || latent == 0 {
            return Err(ModelError::Encoding(
                "embedding and latent sizes must be positive".into(),
            ));
        }
        if cardinalities.is_empty() {
            return Err(ModelError::Encoding("no attributes".into()));
        }
        if let Some(v) = cardinalities.iter().find(|&&v| v < 2) {
            return Err(ModelError::Encoding(format!(
                "every attribute needs at least 2 categories, found {}",
                v
            )));
        }
        Ok(Self {
            cardinalities,
            embedding,
            latent,
        })
    }

    pub fn attributes(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn encoder_input_width(&self) -> usize {
        (self.attributes() + 1) * self.embedding
    }

    pub fn decoder_input_width(&self) -> usize {
        self.latent + self.embedding
    }

    /// Hidden widths shared by encoder (in this order) and decoder (reversed).
    pub fn hidden_widths(&self) -> [usize; 2] {
        let w = self.encoder_input_width();
        [w.div_ceil(2), w.div_ceil(4)]
    }
}

/// Encoder output: one diagonal Gaussian per batch row.
#[derive(Debug, Clone)]
pub struct LatentDistribution {
    pub mu: Tensor,
    pub logvar: Tensor,
}

/// `z = mu + exp(0.5 * logvar) * eps`, elementwise.
pub fn reparameterize(dist: &LatentDistribution, eps: &Tensor) -> Tensor {
    assert_eq!(dist.mu.shape(), eps.shape(), "eps must match the latent shape");
    let data = dist
        .mu
        .data()
        .iter()
        .zip(dist.logvar.data())
        .zip(eps.data())
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect();
    Tensor::new(dist.mu.shape().to_vec(), data).expect("shapes match")
}

#[derive(Debug, Clone, Copy)]
struct LinearIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct ParamLayout {
    attr_embeddings: Vec<ParamId>,
    condition_embedding: ParamId,
    encoder: Vec<LinearIds>,
    mu_head: LinearIds,
    logvar_head: LinearIds,
    decoder: Vec<LinearIds>,
    heads: Vec<LinearIds>,
}

/// Full forward pass artifacts retained for the loss terms.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<Tensor>,
    pub dist: LatentDistribution,
    pub z: Tensor,
}

/// Nodes of the training graph built by [`CvaeModel::forward_nodes`].
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub logits: Vec<NodeId>,
    pub mu: NodeId,
    pub logvar: NodeId,
    pub z: NodeId,
}

#[derive(Debug, Clone)]
pub struct CvaeModel {
    pub dims: ModelDims,
    pub params: ParamSet,
    layout: ParamLayout,
}

impl CvaeModel {
    /// Fresh model with uniform `(-1/sqrt(fan_in), +1/sqrt(fan_in))`
    /// weights, zero biases, and embedding rows scaled by `1/sqrt(E)`.
    pub fn new(dims: ModelDims, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = seeds::derive_rng(seed, "init", &[]);
        let mut params = ParamSet::new();

        let mut table = |params: &mut ParamSet, name: String, rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            params.add(name, Tensor::matrix(rows, cols, data).expect("sized data"))
        };

        let attr_embeddings: Vec<ParamId> = dims
            .cardinalities
            .iter()
            .enumerate()
            .map(|(a, &v)| table(&mut params, format!("embed.{a}"), v, dims.embedding))
            .collect();
        let condition_embedding = table(&mut params, "embed.cond".into(), 2, dims.embedding);

        let mut rng_linear = seeds::derive_rng(seed, "init", &[1]);
        let mut linear = |params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng_linear.gen_range(-bound..bound))
                .collect();
            let w = params.add(
                format!("{name}.w"),
                Tensor::matrix(fan_in, fan_out, data).expect("sized data"),
            );
            let b = params.add(format!("{name}.b"), Tensor::zeros(vec![fan_out]));
            LinearIds { w, b }
        };

        let [w1, w2] = dims.hidden_widths();
        let enc_in = dims.encoder_input_width();
        let encoder = vec![
            linear(&mut params, "enc.0", enc_in, w1),
            linear(&mut params, "enc.1", w1, w2),
        ];
        let mu_head = linear(&mut params, "mu", w2, dims.latent);
        let logvar_head = linear(&mut params, "logvar", w2, dims.latent);
        let dec_in = dims.decoder_input_width();
        let decoder = vec![
            linear(&mut params, "dec.0", dec_in, w2),
            linear(&mut params, "dec.1", w2, w1),
        ];
        let heads = dims
            .cardinalities
            .iter()
            .enumerate()
            .map(|(a, &v)| linear(&mut params, &format!("head.{a}"), w1, v))
            .collect();

        Self {
            dims,
            params,
            layout: ParamLayout {
                attr_embeddings,
                condition_embedding,
                encoder,
                mu_head,
                logvar_head,
                decoder,
                heads,
            },
        }
    }

    fn check_batch(&self, rows: &[Vec<usize>], labels: &[u8]) -> Result<(), ModelError> {
        if rows.is_empty() {
            return Err(ModelError::Encoding("empty batch".into()));
        }
        if rows.len() != labels.len() {
            return Err(ModelError::Encoding(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        for row in rows {
            if row.len() != self.dims.attributes() {
                return Err(ModelError::Encoding(format!(
                    "row has {} attributes, model expects {}",
                    row.len(),
                    self.dims.attributes()
                )));
            }
            for (a, &idx) in row.iter().enumerate() {
                if idx >= self.dims.cardinalities[a] {
                    return Err(ModelError::Encoding(format!(
                        "index {} out of range for attribute {} ({} categories)",
                        idx, a, self.dims.cardinalities[a]
                    )));
                }
            }
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(ModelError::Encoding("labels must be 0 or 1".into()));
        }
        Ok(())
    }

    fn linear_nodes(
        &self,
        g: &mut Graph,
        x: NodeId,
        ids: LinearIds,
    ) -> Result<NodeId, NumericsError> {
        let w = g.param(&self.params, ids.w);
        let b = g.param(&self.params, ids.b);
        g.linear(x, w, b)
    }

    fn condition_nodes(&self, g: &mut Graph, labels: &[u8]) -> Result<NodeId, NumericsError> {
        let table = g.param(&self.params, self.layout.condition_embedding);
        g.gather(table, labels.iter().map(|&l| l as usize).collect())
    }

    /// Builds the encoder subgraph; returns (mu, logvar) nodes.
    pub fn encode_nodes(
        &self,
        g: &mut Graph,
        rows: &[Vec<usize>],
        labels: &[u8],
    ) -> Result<(NodeId, NodeId), ModelError> {
        self.check_batch(rows, labels)?;
        let mut parts = Vec::with_capacity(self.dims.attributes() + 1);
        for (a, &table_id) in self.layout.attr_embeddings.iter().enumerate() {
            let table = g.param(&self.params, table_id);
            let indices: Vec<usize> = rows.iter().map(|r| r[a]).collect();
            parts.push(g.gather(table, indices)?);
        }
        parts.push(self.condition_nodes(g, labels)?);
        let joined = g.concat_cols(&parts)?;

        let h1 = self.linear_nodes(g, joined, self.layout.encoder[0])?;
        let h1 = g.relu(h1);
        let h2 = self.linear_nodes(g, h1, self.layout.encoder[1])?;
        let h2 = g.relu(h2);
        let mu = self.linear_nodes(g, h2, self.layout.mu_head)?;
        let logvar_raw = self.linear_nodes(g, h2, self.layout.logvar_head)?;
        let logvar = g.clamp(logvar_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP);
        Ok((mu, logvar))
    }

    /// `z = mu + exp(0.5 * logvar) * eps` as graph nodes.
    pub fn reparameterize_nodes(
        &self,
        g: &mut Graph,
        mu: NodeId,
        logvar: NodeId,
        eps: &Tensor,
    ) -> Result<NodeId, NumericsError> {
        let half = g.scale(logvar, 0.5)?;
        let sigma = g.exp(half);
        let noise = g.constant(eps.clone());
        let scaled = g.mul(sigma, noise)?;
        g.add(mu, scaled)
    }

    /// Builds the decoder subgraph; returns one logits node per attribute.
    pub fn decode_nodes(
        &self,
        g: &mut Graph,
        z: NodeId,
        labels: &[u8],
    ) -> Result<Vec<NodeId>, ModelError> {
        let cond = self.condition_nodes(g, labels)?;
        let joined = g.concat_cols(&[z, cond])?;
        let h1 = self.linear_nodes(g, joined, self.layout.decoder[0])?;
        let h1 = g.relu(h1);
        let h2 = self.linear_nodes(g, h1, self.layout.decoder[1])?;
        let h2 = g.relu(h2);
        let mut logits = Vec::with_capacity(self.layout.heads.len());
        for &head in &self.layout.heads {
            logits.push(self.linear_nodes(g, h2, head)?);
        }
        Ok(logits)
    }

    /// Full training subgraph: encode, draw z with the supplied eps, decode.
    pub fn forward_nodes(
        &self,
        g: &mut Graph,
        rows: &[Vec<usize>],
        labels: &[u8],
        eps: &Tensor,
    ) -> Result<ForwardNodes, ModelError> {
        let (mu, logvar) = self.encode_nodes(g, rows, labels)?;
        let z = self.reparameterize_nodes(g, mu, logvar, eps)?;
        let logits = self.decode_nodes(g, z, labels)?;
        Ok(ForwardNodes {
            logits,
            mu,
            logvar,
            z,
        })
    }

    /// Eager encoder pass.
    pub fn encode(&self, rows: &[Vec<usize>], labels: &[u8]) -> Result<LatentDistribution, ModelError> {
        let mut g = Graph::new();
        let (mu, logvar) = self.encode_nodes(&mut g, rows, labels)?;
        g.forward(&self.params).map_err(ModelError::from)?;
        Ok(LatentDistribution {
            mu: g.value(mu).clone(),
            logvar: g.value(logvar).clone(),
        })
    }

    /// Eager decoder pass over an explicit latent batch.
    pub fn decode(&self, z: &Tensor, labels: &[u8]) -> Result<Vec<Tensor>, ModelError> {
        let (n, width) = z.view2();
        if n != labels.len() || width != self.dims.latent {
            return Err(ModelError::Encoding(format!(
                "latent batch {:?} does not match {} labels / latent size {}",
                z.shape(),
                labels.len(),
                self.dims.latent
            )));
        }
        let mut g = Graph::new();
        let zn = g.constant(z.clone());
        let logits = self.decode_nodes(&mut g, zn, labels)?;
        g.forward(&self.params).map_err(ModelError::from)?;
        Ok(logits.into_iter().map(|id| g.value(id).clone()).collect())
    }

    /// Eager composition of encode, reparameterize, decode.
    pub fn forward(
        &self,
        rows: &[Vec<usize>],
        labels: &[u8],
        eps: &Tensor,
    ) -> Result<ForwardPass, ModelError> {
        let dist = self.encode(rows, labels)?;
        let z = reparameterize(&dist, eps);
        let logits = self.decode(&z, labels)?;
        Ok(ForwardPass { logits, dist, z })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model() -> CvaeModel {
        let dims = ModelDims::new(vec![3, 4, 2], 4, 3).unwrap();
        CvaeModel::new(dims, 77)
    }

    fn toy_batch() -> (Vec<Vec<usize>>, Vec<u8>) {
        (vec![vec![0, 3, 1], vec![2, 0, 0]], vec![1, 0])
    }

    #[test]
    fn encode_shapes_match_contract() {
        let model = toy_model();
        let (rows, labels) = toy_batch();
        let dist = model.encode(&rows, &labels).unwrap();
        assert_eq!(dist.mu.shape(), &[2, 3]);
        assert_eq!(dist.logvar.shape(), &[2, 3]);
    }

    #[test]
    fn encode_rejects_out_of_range_index() {
        let model = toy_model();
        let err = model.encode(&[vec![0, 4, 0]], &[0]);
        assert!(matches!(err, Err(ModelError::Encoding(_))));
    }

    #[test]
    fn identical_rows_encode_identically() {
        let model = toy_model();
        let rows = vec![vec![1, 2, 1], vec![1, 2, 1]];
        let dist = model.encode(&rows, &[1, 1]).unwrap();
        assert_eq!(dist.mu.row(0), dist.mu.row(1));
        assert_eq!(dist.logvar.row(0), dist.logvar.row(1));
    }

    #[test]
    fn zero_weights_make_mu_the_bias_vector() {
        let mut model = toy_model();
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            model.params.value_mut(id).fill(0.0);
        }
        let mu_b = model.params.by_name("mu.b").unwrap();
        model
            .params
            .value_mut(mu_b)
            .data_mut()
            .copy_from_slice(&[0.4, -0.2, 0.9]);
        let (rows, labels) = toy_batch();
        let dist = model.encode(&rows, &labels).unwrap();
        for r in 0..2 {
            assert_eq!(dist.mu.row(r), &[0.4, -0.2, 0.9]);
            assert_eq!(dist.logvar.row(r), &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn reparameterize_cases() {
        let dist = LatentDistribution {
            mu: Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(),
            logvar: Tensor::matrix(1, 2, vec![2.0 * 3.0f64.ln(), 0.0]).unwrap(),
        };
        let zero = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(reparameterize(&dist, &zero).data(), dist.mu.data());
        let eps = Tensor::matrix(1, 2, vec![2.0, 1.0]).unwrap();
        let z = reparameterize(&dist, &eps);
        assert!((z.data()[0] - 7.0).abs() < 1e-12); // 1 + 3*2
        assert!((z.data()[1] - 1.0).abs() < 1e-12); // 0 + 1*1
    }

    #[test]
    fn reparameterize_is_affine_in_eps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let shape = vec![3, 4];
        let rand_tensor = |rng: &mut rand_chacha::ChaCha12Rng| {
            Tensor::new(
                shape.clone(),
                (0..12).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            )
            .unwrap()
        };
        let dist = LatentDistribution {
            mu: rand_tensor(&mut rng),
            logvar: rand_tensor(&mut rng),
        };
        let e1 = rand_tensor(&mut rng);
        let e2 = rand_tensor(&mut rng);
        let sum = Tensor::new(
            shape.clone(),
            e1.data().iter().zip(e2.data()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let zero = Tensor::zeros(shape.clone());
        let lhs: Vec<f64> = reparameterize(&dist, &e1)
            .data()
            .iter()
            .zip(reparameterize(&dist, &e2).data())
            .zip(reparameterize(&dist, &zero).data())
            .map(|((a, b), c)| a + b - c)
            .collect();
        let rhs = reparameterize(&dist, &sum);
        for (l, r) in lhs.iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_shapes_and_determinism() {
        let model = toy_model();
        let z = Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.5]).unwrap();
        let labels = vec![0, 1];
        let logits = model.decode(&z, &labels).unwrap();
        assert_eq!(logits.len(), 3);
        for (a, t) in logits.iter().enumerate() {
            assert_eq!(t.shape(), &[2, model.dims.cardinalities[a]]);
        }
        let again = model.decode(&z, &labels).unwrap();
        for (x, y) in logits.iter().zip(&again) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn zero_weights_decode_to_uniform_softmax() {
        let mut model = toy_model();
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            model.params.value_mut(id).fill(0.0);
        }
        let z = Tensor::matrix(1, 3, vec![0.3, 0.3, -0.1]).unwrap();
        let logits = model.decode(&z, &[1]).unwrap();
        for t in logits {
            let first = t.data()[0];
            assert!(t.data().iter().all(|&v| (v - first).abs() < 1e-15));
        }
    }

    #[test]
    fn conditioning_changes_the_decode() {
        let model = toy_model();
        let z = Tensor::matrix(1, 3, vec![0.2, -0.4, 0.6]).unwrap();
        let at_risk = model.decode(&z, &[1]).unwrap();
        let not_at_risk = model.decode(&z, &[0]).unwrap();
        let differs = at_risk
            .iter()
            .zip(&not_at_risk)
            .any(|(a, b)| a.data() != b.data());
        assert!(differs, "condition embedding had no effect on the decoder");
    }

    #[test]
    fn forward_composition_matches_stagewise_calls() {
        let model = toy_model();
        let (rows, labels) = toy_batch();
        let eps = Tensor::matrix(2, 3, vec![0.5, -0.5, 1.0, 0.0, 0.25, -1.0]).unwrap();
        let pass = model.forward(&rows, &labels, &eps).unwrap();
        let dist = model.encode(&rows, &labels).unwrap();
        let z = reparameterize(&dist, &eps);
        let logits = model.decode(&z, &labels).unwrap();
        assert_eq!(pass.z.data(), z.data());
        for (a, b) in pass.logits.iter().zip(&logits) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn single_row_batch_is_valid() {
        let model = toy_model();
        let eps = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        let pass = model.forward(&[vec![1, 1, 1]], &[0], &eps).unwrap();
        assert_eq!(pass.logits[0].shape()[0], 1);
    }

    #[test]
    fn gradient_reaches_used_embedding_rows() {
        let model = toy_model();
        let (rows, labels) = toy_batch();
        let eps = Tensor::matrix(2, 3, vec![0.1; 6]).unwrap();
        let mut g = Graph::new();
        let nodes = model.forward_nodes(&mut g, &rows, &labels, &eps).unwrap();
        let ce = crate::losses::reconstruction_ce_node(&mut g, &nodes.logits, &rows).unwrap();
        let mut params = model.params.clone();
        g.forward(&params).unwrap();
        g.backward(ce, &mut params).unwrap();
        let table = params.by_name("embed.0").unwrap();
        let grad = params.grad(table);
        // rows 0 and 2 of attribute 0's table were used by the batch
        let width = model.dims.embedding;
        let row0: f64 = grad.data()[0..width].iter().map(|v| v.abs()).sum();
        let row2: f64 = grad.data()[2 * width..3 * width].iter().map(|v| v.abs()).sum();
        let row1: f64 = grad.data()[width..2 * width].iter().map(|v| v.abs()).sum();
        assert!(row0 > 0.0 && row2 > 0.0);
        assert_eq!(row1, 0.0, "unused embedding row received gradient");
    }

    #[test]
    fn shape_contract_holds_for_random_dims() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(19);
        for _ in 0..10 {
            let a = rng.gen_range(1..5);
            let cards: Vec<usize> = (0..a).map(|_| rng.gen_range(2..6)).collect();
            let e = rng.gen_range(1..6);
            let h = rng.gen_range(1..6);
            let n = rng.gen_range(1..5);
            let dims = ModelDims::new(cards.clone(), e, h).unwrap();
            let model = CvaeModel::new(dims, 5);
            let rows: Vec<Vec<usize>> = (0..n)
                .map(|_| cards.iter().map(|&v| rng.gen_range(0..v)).collect())
                .collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            let eps = Tensor::matrix(n, h, vec![0.0; n * h]).unwrap();
            let pass = model.forward(&rows, &labels, &eps).unwrap();
            assert_eq!(pass.dist.mu.shape(), &[n, h]);
            assert_eq!(pass.z.shape(), &[n, h]);
            assert_eq!(pass.logits.len(), a);
            for (i, t) in pass.logits.iter().enumerate() {
                assert_eq!(t.shape(), &[n, cards[i]]);
            }
        }
    }
}
