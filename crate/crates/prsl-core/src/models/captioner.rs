//! Autoregressive toy captioner: an image MLP feature prepended to token
//! embeddings, one single-head causal self-attention block with a residual
//! connection, and an affine vocabulary head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ops::{affine, affine_backward, matmul, matvec_t, outer, relu, relu_backward, transpose};
use crate::{Gradient, ParamStore, Tensor};

use super::classifier::ImageShape;
use super::{init_uniform, insert_param};

pub const BOS_TOKEN: usize = 0;
pub const EOS_TOKEN: usize = 1;
pub const PAD_TOKEN: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionerSpec {
    pub image: ImageShape,
    /// Hidden width of the image MLP.
    pub feature_hidden: usize,
    pub embed_dim: usize,
    pub vocab: usize,
    pub context: usize,
    /// Fixed at 1.
    pub heads: usize,
}

impl Default for CaptionerSpec {
    fn default() -> Self {
        Self {
            image: ImageShape::new(12, 12, 3),
            feature_hidden: 64,
            embed_dim: 32,
            vocab: 64,
            context: 16,
            heads: 1,
        }
    }
}

impl CaptionerSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| {
            Err(CoreError::InvalidConfig { context: "captioner spec", detail })
        };
        if self.vocab < 8 {
            return fail(format!("vocabulary must be >= 8, got {}", self.vocab));
        }
        if self.context < 4 {
            return fail(format!("context length must be >= 4, got {}", self.context));
        }
        if self.heads != 1 {
            return fail(format!("attention heads fixed at 1, got {}", self.heads));
        }
        if self.embed_dim == 0 || self.feature_hidden == 0 {
            return fail("embedding and feature widths must be positive".to_string());
        }
        if self.image.pixels() == 0 {
            return fail("image has zero pixels".to_string());
        }
        Ok(())
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pixels, feat, d, vocab) = (self.image.pixels(), self.feature_hidden, self.embed_dim, self.vocab);
        let mut params = ParamStore::new();
        insert_param(&mut params, "img.w0", init_uniform(&mut rng, vec![feat, pixels], pixels))?;
        insert_param(&mut params, "img.b0", init_uniform(&mut rng, vec![feat], pixels))?;
        insert_param(&mut params, "img.w1", init_uniform(&mut rng, vec![d, feat], feat))?;
        insert_param(&mut params, "img.b1", init_uniform(&mut rng, vec![d], feat))?;
        insert_param(&mut params, "embed", init_uniform(&mut rng, vec![vocab, d], d))?;
        insert_param(&mut params, "pos", init_uniform(&mut rng, vec![self.context + 1, d], d))?;
        for name in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
            insert_param(&mut params, name, init_uniform(&mut rng, vec![d, d], d))?;
        }
        insert_param(&mut params, "head.weight", init_uniform(&mut rng, vec![vocab, d], d))?;
        insert_param(&mut params, "head.bias", init_uniform(&mut rng, vec![vocab], d))?;
        Ok(params)
    }

    fn check_input(&self, image: &Tensor, prefix: &[usize]) -> Result<()> {
        let pixels = self.image.pixels();
        let image_ok = match image.shape() {
            [n] => *n == pixels,
            [h, w, c] => h * w * c == pixels,
            _ => false,
        };
        if !image_ok {
            return Err(CoreError::InvalidInput {
                context: "captioner forward",
                detail: format!("image shape {:?} does not match spec ({pixels} pixels)", image.shape()),
            });
        }
        if prefix.is_empty() || prefix.len() > self.context {
            return Err(CoreError::InvalidInput {
                context: "captioner forward",
                detail: format!("prefix length {} outside 1..={}", prefix.len(), self.context),
            });
        }
        if let Some(&bad) = prefix.iter().find(|&&t| t >= self.vocab) {
            return Err(CoreError::InvalidInput {
                context: "captioner forward",
                detail: format!("token {bad} outside vocabulary of {}", self.vocab),
            });
        }
        Ok(())
    }
}

/// Intermediates of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct CaptionerCache {
    prefix: Vec<usize>,
    x: Tensor,
    z0: Tensor,
    h: Tensor,
    /// Sequence inputs (L x d), image feature at row 0.
    u: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Causal attention weights (L x L), zero above the diagonal.
    a: Tensor,
    c: Tensor,
    /// Post-residual sequence (L x d).
    r: Tensor,
}

/// Per-position next-token logits; row t sees the image and tokens <= t.
pub fn forward(
    image: &Tensor,
    prefix_tokens: &[usize],
    params: &ParamStore,
    spec: &CaptionerSpec,
) -> Result<Vec<Tensor>> {
    forward_cached(image, prefix_tokens, params, spec).map(|(rows, _)| rows)
}

pub fn forward_cached(
    image: &Tensor,
    prefix_tokens: &[usize],
    params: &ParamStore,
    spec: &CaptionerSpec,
) -> Result<(Vec<Tensor>, CaptionerCache)> {
    spec.check_input(image, prefix_tokens)?;
    let d = spec.embed_dim;
    let t_len = prefix_tokens.len();
    let l = t_len + 1;

    let x = Tensor::from_parts(vec![image.len()], image.data().to_vec());
    let z0 = affine(&x, params.get("img.w0")?, params.get("img.b0")?)?;
    let h = relu(&z0);
    let feat = affine(&h, params.get("img.w1")?, params.get("img.b1")?)?;

    let embed = params.get("embed")?;
    let pos = params.get("pos")?;
    let mut u = vec![0.0; l * d];
    for c in 0..d {
        u[c] = feat.data()[c] + pos.data()[c];
    }
    for (i, &tok) in prefix_tokens.iter().enumerate() {
        let row = i + 1;
        for c in 0..d {
            u[row * d + c] = embed.data()[tok * d + c] + pos.data()[row * d + c];
        }
    }
    let u = Tensor::from_parts(vec![l, d], u);

    let q = matmul(&u, params.get("attn.wq")?)?;
    let k = matmul(&u, params.get("attn.wk")?)?;
    let v = matmul(&u, params.get("attn.wv")?)?;

    // Causal row softmax of q kᵀ / sqrt(d); masked entries stay zero.
    let scale = 1.0 / (d as f64).sqrt();
    let mut a = vec![0.0; l * l];
    for i in 0..l {
        let qi = &q.data()[i * d..(i + 1) * d];
        let mut scores = Vec::with_capacity(i + 1);
        for j in 0..=i {
            let kj = &k.data()[j * d..(j + 1) * d];
            let dot: f64 = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum();
            scores.push(dot * scale);
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        for (j, s) in scores.iter().enumerate() {
            a[i * l + j] = s / total;
        }
    }
    let a = Tensor::from_parts(vec![l, l], a);

    let c = matmul(&a, &v)?;
    let o = matmul(&c, params.get("attn.wo")?)?;
    let r = u.add(&o)?;

    let head_w = params.get("head.weight")?;
    let head_b = params.get("head.bias")?;
    let mut rows = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let r_row = Tensor::from_parts(vec![d], r.data()[(t + 1) * d..(t + 2) * d].to_vec());
        rows.push(affine(&r_row, head_w, head_b)?);
    }

    let cache = CaptionerCache { prefix: prefix_tokens.to_vec(), x, z0, h, u, q, k, v, a, c, r };
    Ok((rows, cache))
}

/// Gradients with respect to all parameters and the image, given per-row
/// loss gradients at the logits.
pub fn backward(
    d_rows: &[Tensor],
    cache: &CaptionerCache,
    params: &ParamStore,
    spec: &CaptionerSpec,
) -> Result<(ParamStore, Gradient)> {
    let d = spec.embed_dim;
    let t_len = cache.prefix.len();
    let l = t_len + 1;
    if d_rows.len() != t_len {
        return Err(CoreError::InvalidSequence { logits: d_rows.len(), labels: t_len });
    }

    let head_w = params.get("head.weight")?;
    let mut d_head_w = Tensor::zeros(vec![spec.vocab, d]);
    let mut d_head_b = Tensor::zeros(vec![spec.vocab]);
    let mut d_r = vec![0.0; l * d];
    for (t, g) in d_rows.iter().enumerate() {
        let r_row = &cache.r.data()[(t + 1) * d..(t + 2) * d];
        d_head_w.axpy(1.0, &outer(g.as_vector()?, r_row))?;
        for (acc, &gi) in d_head_b.data_mut().iter_mut().zip(g.data()) {
            *acc += gi;
        }
        let dr = matvec_t(head_w, g.as_vector()?)?;
        for (c, &val) in dr.iter().enumerate() {
            d_r[(t + 1) * d + c] += val;
        }
    }
    let d_r = Tensor::from_parts(vec![l, d], d_r);

    // Residual split: r = u + c wo.
    let mut d_u = d_r.clone();
    let d_o = &d_r;
    let wo = params.get("attn.wo")?;
    let d_c = matmul(d_o, &transpose(wo)?)?;
    let d_wo = matmul(&transpose(&cache.c)?, d_o)?;

    // c = a v.
    let d_a_full = matmul(&d_c, &transpose(&cache.v)?)?;
    let d_v = matmul(&transpose(&cache.a)?, &d_c)?;

    // Row-softmax backward over the causal span of each row.
    let mut d_s = vec![0.0; l * l];
    for i in 0..l {
        let a_row = &cache.a.data()[i * l..(i + 1) * l];
        let da_row = &d_a_full.data()[i * l..(i + 1) * l];
        let inner: f64 = a_row.iter().zip(da_row).map(|(&a, &g)| a * g).sum();
        for j in 0..=i {
            d_s[i * l + j] = a_row[j] * (da_row[j] - inner);
        }
    }
    let d_s = Tensor::from_parts(vec![l, l], d_s);

    let scale = 1.0 / (d as f64).sqrt();
    let d_q = matmul(&d_s, &cache.k)?.scale(scale);
    let d_k = matmul(&transpose(&d_s)?, &cache.q)?.scale(scale);

    let wq = params.get("attn.wq")?;
    let wk = params.get("attn.wk")?;
    let wv = params.get("attn.wv")?;
    d_u.axpy(1.0, &matmul(&d_q, &transpose(wq)?)?)?;
    d_u.axpy(1.0, &matmul(&d_k, &transpose(wk)?)?)?;
    d_u.axpy(1.0, &matmul(&d_v, &transpose(wv)?)?)?;
    let ut = transpose(&cache.u)?;
    let d_wq = matmul(&ut, &d_q)?;
    let d_wk = matmul(&ut, &d_k)?;
    let d_wv = matmul(&ut, &d_v)?;

    // Split d_u into embedding, position, and image-feature gradients.
    let mut d_embed = Tensor::zeros(vec![spec.vocab, d]);
    let mut d_pos = Tensor::zeros(vec![spec.context + 1, d]);
    for row in 0..l {
        for c in 0..d {
            d_pos.data_mut()[row * d + c] += d_u.data()[row * d + c];
        }
    }
    for (i, &tok) in cache.prefix.iter().enumerate() {
        let row = i + 1;
        for c in 0..d {
            d_embed.data_mut()[tok * d + c] += d_u.data()[row * d + c];
        }
    }
    let d_feat = Tensor::from_parts(vec![d], d_u.data()[..d].to_vec());

    // Image MLP backward.
    let (d_h, d_w1, d_b1) = affine_backward(&d_feat, &cache.h, params.get("img.w1")?)?;
    let d_z0 = relu_backward(&d_h, &cache.z0)?;
    let (d_x, d_w0, d_b0) = affine_backward(&d_z0, &cache.x, params.get("img.w0")?)?;

    let mut grads = ParamStore::new();
    grads.insert("img.w0", d_w0)?;
    grads.insert("img.b0", d_b0)?;
    grads.insert("img.w1", d_w1)?;
    grads.insert("img.b1", d_b1)?;
    grads.insert("embed", d_embed)?;
    grads.insert("pos", d_pos)?;
    grads.insert("attn.wq", d_wq)?;
    grads.insert("attn.wk", d_wk)?;
    grads.insert("attn.wv", d_wv)?;
    grads.insert("attn.wo", d_wo)?;
    grads.insert("head.weight", d_head_w)?;
    grads.insert("head.bias", d_head_b)?;
    Ok((grads, d_x))
}

/// Greedy decode from BOS; stops at EOS/PAD, the context limit, or
/// `max_len` generated tokens. Returns the generated tokens without BOS
/// or the terminator.
pub fn decode_greedy(
    image: &Tensor,
    params: &ParamStore,
    spec: &CaptionerSpec,
    max_len: usize,
) -> Result<Vec<usize>> {
    let mut prefix = vec![BOS_TOKEN];
    let mut out = Vec::new();
    while out.len() < max_len && prefix.len() < spec.context {
        let rows = forward(image, &prefix, params, spec)?;
        let last = rows.last().expect("non-empty prefix");
        let mut best = 0usize;
        for (i, &v) in last.data().iter().enumerate().skip(1) {
            if v > last.data()[best] {
                best = i;
            }
        }
        if best == EOS_TOKEN || best == PAD_TOKEN {
            break;
        }
        out.push(best);
        prefix.push(best);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::losses::{sequence_prsl, sequence_prsl_grad, LossConfigBase, RankWindow};
    use crate::ops::softmax;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn tiny_spec() -> CaptionerSpec {
        CaptionerSpec {
            image: ImageShape::new(2, 2, 1),
            feature_hidden: 3,
            embed_dim: 4,
            vocab: 8,
            context: 5,
            heads: 1,
        }
    }

    fn random_image(rng: &mut ChaCha8Rng, spec: &CaptionerSpec) -> Tensor {
        let data = (0..spec.image.pixels()).map(|_| rng.random_range(0.0..1.0)).collect();
        Tensor::vector(data).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_next_token() {
        let spec = tiny_spec();
        let params = spec.init_params(0).unwrap().zeros_like();
        let image = Tensor::vector(vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let rows = forward(&image, &[BOS_TOKEN, 4, 5], &params, &spec).unwrap();
        assert_eq!(rows.len(), 3);
        for row in rows {
            let p = softmax(&row).unwrap();
            for &v in p.values() {
                assert_abs_diff_eq!(v, 1.0 / spec.vocab as f64, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn causal_rows_ignore_later_tokens() {
        let spec = tiny_spec();
        let params = spec.init_params(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let image = random_image(&mut rng, &spec);

        let base = forward(&image, &[BOS_TOKEN, 3, 4, 5], &params, &spec).unwrap();
        let changed = forward(&image, &[BOS_TOKEN, 3, 4, 7], &params, &spec).unwrap();
        for t in 0..3 {
            let bits_a: Vec<u64> = base[t].data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = changed[t].data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "row {t} depends on a later token");
        }
        assert_ne!(base[3].data(), changed[3].data());
    }

    #[test]
    fn rejects_overlong_prefix_and_bad_tokens() {
        let spec = tiny_spec();
        let params = spec.init_params(0).unwrap();
        let image = Tensor::vector(vec![0.0; 4]).unwrap();
        assert!(forward(&image, &[0; 6], &params, &spec).is_err());
        assert!(forward(&image, &[0, 99], &params, &spec).is_err());
        assert!(forward(&image, &[], &params, &spec).is_err());
    }

    #[test]
    fn sequence_loss_gradients_match_finite_differences() {
        let spec = tiny_spec();
        let params = spec.init_params(21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let image = random_image(&mut rng, &spec);
        let prefix = [BOS_TOKEN, 4, 6];
        let labels = [4usize, 6, EOS_TOKEN];
        let config = LossConfigBase::new(0.05, RankWindow::new(2, 4));

        let loss_of = |ps: &ParamStore, img: &Tensor| -> crate::Result<f64> {
            let rows = forward(img, &prefix, ps, &spec)?;
            sequence_prsl(&rows, &labels, &config).map(|b| b.total)
        };

        let (rows, cache) = forward_cached(&image, &prefix, &params, &spec).unwrap();
        let d_rows = sequence_prsl_grad(&rows, &labels, &config).unwrap();
        let (grads, d_image) = backward(&d_rows, &cache, &params, &spec).unwrap();

        let err = grad_check(|img| loss_of(&params, img), &d_image, &image, 1e-5).unwrap();
        assert!(err < 1e-6, "image rel err {err}");

        for (name, analytic) in grads.iter() {
            let point = params.get(name).unwrap().clone();
            let err = grad_check(
                |t| {
                    let mut perturbed = params.clone();
                    perturbed.values_mut(name).unwrap().copy_from_slice(t.data());
                    loss_of(&perturbed, &image)
                },
                analytic,
                &point,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{name} rel err {err}");
        }
    }

    #[test]
    fn greedy_decode_is_deterministic_and_bounded() {
        let spec = tiny_spec();
        let params = spec.init_params(9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let image = random_image(&mut rng, &spec);
        let a = decode_greedy(&image, &params, &spec, 10).unwrap();
        let b = decode_greedy(&image, &params, &spec, 10).unwrap();
        assert_eq!(a, b);
        assert!(a.len() < spec.context);
        assert!(a.iter().all(|&t| t < spec.vocab));
    }
}
