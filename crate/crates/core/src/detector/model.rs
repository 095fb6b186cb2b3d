//! Fusion classifier: tanh projections of each modality, concatenation, a
//! tanh hidden layer and a two-way softmax output. Gradients are derived by
//! hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{EmbeddingVec, Label};
use crate::error::{Error, Result};

/// Fully connected layer. `weights` is row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Dense {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform in `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`.
    fn uniform(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Dense {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weights = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Dense {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates `delta ⊗ x` into this layer (used as a gradient buffer)
    /// and returns `Wᵀ delta` computed with `weights_of`.
    fn accumulate(&mut self, weights_of: &Dense, x: &[f64], delta: &[f64]) -> Vec<f64> {
        let mut back = vec![0.0; self.in_dim];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            self.bias[o] += d;
            let row = o * self.in_dim;
            let grad_row = &mut self.weights[row..row + self.in_dim];
            let w_row = &weights_of.weights[row..row + self.in_dim];
            for i in 0..self.in_dim {
                grad_row[i] += d * x[i];
                back[i] += d * w_row[i];
            }
        }
        back
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub text: Vec<f64>,
    pub image: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub text_proj: Dense,
    pub image_proj: Dense,
    pub hidden: Dense,
    pub output: Dense,
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

fn log_softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    [z[0] - lse, z[1] - lse]
}

/// One training or evaluation example: fused text representation, image
/// features and gold label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub text: EmbeddingVec,
    pub image: EmbeddingVec,
    pub label: Label,
}

impl DetectorModel {
    /// Seeded uniform initialization of every layer.
    pub fn init(d_text: usize, d_img: usize, d_h: usize, seed: u64) -> Result<DetectorModel> {
        if d_text == 0 || d_img == 0 || d_h == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(DetectorModel {
            text_proj: Dense::uniform(d_text, d_h, &mut rng),
            image_proj: Dense::uniform(d_img, d_h, &mut rng),
            hidden: Dense::uniform(2 * d_h, d_h, &mut rng),
            output: Dense::uniform(d_h, 2, &mut rng),
        })
    }

    /// Zeroes the output layer so every input predicts (0.5, 0.5).
    pub fn zero_head(&mut self) {
        self.output.weights.fill(0.0);
        self.output.bias.fill(0.0);
    }

    pub fn zeros_like(&self) -> DetectorModel {
        DetectorModel {
            text_proj: Dense::zeros(self.text_proj.in_dim, self.text_proj.out_dim),
            image_proj: Dense::zeros(self.image_proj.in_dim, self.image_proj.out_dim),
            hidden: Dense::zeros(self.hidden.in_dim, self.hidden.out_dim),
            output: Dense::zeros(self.output.in_dim, self.output.out_dim),
        }
    }

    pub fn d_text(&self) -> usize {
        self.text_proj.in_dim
    }

    pub fn d_img(&self) -> usize {
        self.image_proj.in_dim
    }

    pub fn d_h(&self) -> usize {
        self.text_proj.out_dim
    }

    /// Checks that layer shapes line up and every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        let d_h = self.d_h();
        let layers = [&self.text_proj, &self.image_proj, &self.hidden, &self.output];
        let shapes_ok = self.image_proj.out_dim == d_h
            && self.hidden.in_dim == 2 * d_h
            && self.hidden.out_dim == d_h
            && self.output.in_dim == d_h
            && self.output.out_dim == 2
            && layers
                .iter()
                .all(|l| l.weights.len() == l.in_dim * l.out_dim && l.bias.len() == l.out_dim);
        if !shapes_ok {
            return Err(Error::invalid("inconsistent detector layer shapes"));
        }
        if !self.flat_params().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("detector has non-finite parameters"));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.text_proj.n_params()
            + self.image_proj.n_params()
            + self.hidden.n_params()
            + self.output.n_params()
    }

    fn slices(&self) -> [&Vec<f64>; 8] {
        [
            &self.text_proj.weights,
            &self.text_proj.bias,
            &self.image_proj.weights,
            &self.image_proj.bias,
            &self.hidden.weights,
            &self.hidden.bias,
            &self.output.weights,
            &self.output.bias,
        ]
    }

    fn slices_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.text_proj.weights,
            &mut self.text_proj.bias,
            &mut self.image_proj.weights,
            &mut self.image_proj.bias,
            &mut self.hidden.weights,
            &mut self.hidden.bias,
            &mut self.output.weights,
            &mut self.output.bias,
        ]
    }

    /// All parameters in a fixed order: text, image, hidden, output layers,
    /// each weights then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        self.slices().iter().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Applies `f(param, grad)` to every parameter paired with the
    /// same-shaped gradient buffer, in flat order.
    pub fn update_with(&mut self, grad: &DetectorModel, mut f: impl FnMut(usize, &mut f64, f64)) {
        let mut offset = 0;
        for (p, g) in self.slices_mut().into_iter().zip(grad.slices()) {
            for (i, (pv, gv)) in p.iter_mut().zip(g.iter()).enumerate() {
                f(offset + i, pv, *gv);
            }
            offset += g.len();
        }
    }

    fn check_dims(&self, text: &EmbeddingVec, image: &EmbeddingVec) -> Result<()> {
        if text.dim() != self.d_text() || image.dim() != self.d_img() {
            return Err(Error::invalid(format!(
                "input dimension mismatch: text {} (model {}), image {} (model {})",
                text.dim(),
                self.d_text(),
                image.dim(),
                self.d_img()
            )));
        }
        Ok(())
    }

    pub fn activations(&self, text: &EmbeddingVec, image: &EmbeddingVec) -> Result<Activations> {
        self.check_dims(text, image)?;
        let a_text: Vec<f64> = self.text_proj.affine(text.values()).into_iter().map(f64::tanh).collect();
        let a_image: Vec<f64> = self.image_proj.affine(image.values()).into_iter().map(f64::tanh).collect();
        let fused: Vec<f64> = a_text.iter().chain(&a_image).copied().collect();
        let hidden: Vec<f64> = self.hidden.affine(&fused).into_iter().map(f64::tanh).collect();
        let z = self.output.affine(&hidden);
        let logits = [z[0], z[1]];
        Ok(Activations {
            text: a_text,
            image: a_image,
            hidden,
            logits,
            probs: softmax2(logits),
        })
    }

    /// (p_real, p_fake).
    pub fn forward(&self, text: &EmbeddingVec, image: &EmbeddingVec) -> Result<[f64; 2]> {
        Ok(self.activations(text, image)?.probs)
    }

    /// Mean cross-entropy over `data`, without the weight penalty.
    pub fn cross_entropy(&self, data: &[Example]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("no examples"));
        }
        let mut total = 0.0;
        for ex in data {
            let a = self.activations(&ex.text, &ex.image)?;
            total -= log_softmax2(a.logits)[ex.label.index()];
        }
        Ok(total / data.len() as f64)
    }

    fn penalty(&self, weight_decay: f64) -> f64 {
        if weight_decay == 0.0 {
            return 0.0;
        }
        0.5 * weight_decay * self.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>()
    }

    /// Training objective: mean cross-entropy plus `weight_decay / 2 · ‖θ‖²`.
    pub fn objective(&self, data: &[Example], weight_decay: f64) -> Result<f64> {
        Ok(self.cross_entropy(data)? + self.penalty(weight_decay))
    }

    /// Objective and its gradient over `batch`.
    pub fn objective_and_grad(
        &self,
        batch: &[&Example],
        weight_decay: f64,
    ) -> Result<(f64, DetectorModel)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = self.zeros_like();
        let mut loss = 0.0;
        for ex in batch {
            let a = self.activations(&ex.text, &ex.image)?;
            let y = ex.label.index();
            loss -= log_softmax2(a.logits)[y];

            let mut d_logits = [a.probs[0] * scale, a.probs[1] * scale];
            d_logits[y] -= scale;
            let d_hidden = grad.output.accumulate(&self.output, &a.hidden, &d_logits);
            let d_hidden_pre: Vec<f64> = d_hidden
                .iter()
                .zip(&a.hidden)
                .map(|(d, h)| d * (1.0 - h * h))
                .collect();
            let fused: Vec<f64> = a.text.iter().chain(&a.image).copied().collect();
            let d_fused = grad.hidden.accumulate(&self.hidden, &fused, &d_hidden_pre);
            let (d_text, d_image) = d_fused.split_at(self.d_h());
            let d_text_pre: Vec<f64> = d_text
                .iter()
                .zip(&a.text)
                .map(|(d, t)| d * (1.0 - t * t))
                .collect();
            let d_image_pre: Vec<f64> = d_image
                .iter()
                .zip(&a.image)
                .map(|(d, v)| d * (1.0 - v * v))
                .collect();
            grad.text_proj.accumulate(&self.text_proj, ex.text.values(), &d_text_pre);
            grad.image_proj.accumulate(&self.image_proj, ex.image.values(), &d_image_pre);
        }
        if weight_decay != 0.0 {
            for (g, p) in grad.slices_mut().into_iter().zip(self.slices()) {
                for (gv, pv) in g.iter_mut().zip(p.iter()) {
                    *gv += weight_decay * pv;
                }
            }
        }
        Ok((loss * scale + self.penalty(weight_decay), grad))
    }

    /// Predicted label (ties go to `Real`) and its probability.
    pub fn predict(&self, text: &EmbeddingVec, image: &EmbeddingVec) -> Result<(Label, f64)> {
        let p = self.forward(text, image)?;
        Ok(if p[1] > p[0] {
            (Label::Fake, p[1])
        } else {
            (Label::Real, p[0])
        })
    }
}

/// Versioned checkpoint written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub d_text: usize,
    pub d_img: usize,
    pub d_h: usize,
    pub model: DetectorModel,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(model: DetectorModel, seed: u64, fold: Option<usize>) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            seed,
            fold,
            d_text: model.d_text(),
            d_img: model.d_img(),
            d_h: model.d_h(),
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        self.model.validate()?;
        if (self.d_text, self.d_img, self.d_h)
            != (self.model.d_text(), self.model.d_img(), self.model.d_h())
        {
            return Err(Error::invalid("checkpoint header does not match model shapes"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(v: &[f64]) -> EmbeddingVec {
        EmbeddingVec::new(v.to_vec()).unwrap()
    }

    #[test]
    fn probabilities_normalized() {
        let m = DetectorModel::init(3, 2, 4, 1).unwrap();
        let p = m.forward(&vec(&[0.3, -1.0, 2.0]), &vec(&[0.5, 0.1])).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|x| *x > 0.0 && *x < 1.0));
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut m = DetectorModel::init(3, 2, 4, 1).unwrap();
        m.zero_head();
        assert_eq!(m.forward(&vec(&[1.0, 2.0, 3.0]), &vec(&[1.0, 1.0])).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = DetectorModel::init(5, 3, 4, 42).unwrap();
        assert_eq!(a, DetectorModel::init(5, 3, 4, 42).unwrap());
        assert_ne!(a, DetectorModel::init(5, 3, 4, 43).unwrap());
        let bound = 1.0 / 5f64.sqrt();
        assert!(a.text_proj.weights.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn dimension_mismatch() {
        let m = DetectorModel::init(3, 2, 4, 1).unwrap();
        assert!(matches!(
            m.forward(&vec(&[1.0, 2.0]), &vec(&[1.0, 1.0])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn flat_roundtrip() {
        let m = DetectorModel::init(3, 2, 4, 1).unwrap();
        let flat = m.flat_params();
        assert_eq!(flat.len(), m.n_params());
        let mut z = m.zeros_like();
        z.set_flat_params(&flat).unwrap();
        assert_eq!(z, m);
        assert!(z.set_flat_params(&flat[1..]).is_err());
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let mut m = DetectorModel::init(2, 1, 2, 3).unwrap();
        m.output.weights = vec![500.0, 500.0, -500.0, -500.0];
        let ex = Example { text: vec(&[5.0, 5.0]), image: vec(&[5.0]), label: Label::Fake };
        let loss = m.cross_entropy(std::slice::from_ref(&ex)).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn checkpoint_validation() {
        let m = DetectorModel::init(3, 2, 4, 1).unwrap();
        let c = Checkpoint::new(m, 9, Some(2));
        assert!(c.validate().is_ok());
        let mut bad = c.clone();
        bad.d_h = 5;
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&c).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }
}
