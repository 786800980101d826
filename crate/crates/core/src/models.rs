//! Prompt context, the frozen vision-language encoder interface, a toy
//! encoder for desk-scale runs, and the trainable target classifier.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::objectives::{DiagCovariance, LogitBatch};

/// Class-name placeholder tokens dropped from prompt templates.
const CLASS_PLACEHOLDERS: [&str; 2] = ["[CLS]", "[CLASS]"];

/// Standard deviation of each coordinate of a word vector, times `1/√d`.
pub const WORD_SCALE: f64 = 0.5;

pub const DEFAULT_TEMPLATE: &str = "a photo of a [CLS].";

/// Learnable context tokens (`M × d`) shared by every class prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub tokens: Matrix,
    pub init_template: String,
}

impl PromptContext {
    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }

    /// Column mean of the token matrix.
    pub fn mean_token(&self) -> Vec<f64> {
        let m = self.tokens.rows() as f64;
        let mut mean = vec![0.0; self.width()];
        for row in self.tokens.row_iter() {
            for (a, b) in mean.iter_mut().zip(row) {
                *a += b / m;
            }
        }
        mean
    }

    pub fn content_hash(&self) -> String {
        hash_slices([self.tokens.as_slice()])
    }
}

/// Splits a template into context words, dropping the class placeholder and punctuation.
pub fn template_words(template: &str) -> Vec<String> {
    template
        .split_whitespace()
        .filter_map(|w| {
            let w = w.trim_end_matches(['.', ',', '!', '?', ';', ':']);
            let w = w.trim_matches(['\'', '"']);
            if w.is_empty() || CLASS_PLACEHOLDERS.contains(&w) {
                None
            } else {
                Some(w.to_lowercase())
            }
        })
        .collect()
}

/// Seeded embedding of one word: Gaussian with std `WORD_SCALE/√d`, drawn from a
/// ChaCha stream keyed by `SHA-256(seed_le ‖ word)`.
pub fn word_vector(word: &str, width: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(word.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    let scale = WORD_SCALE / (width as f64).sqrt();
    (0..width)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Builds the context from the template's words, truncated or zero-padded to `m` rows.
pub fn init_prompt(template: &str, m: usize, d: usize, seed: u64) -> Result<PromptContext> {
    if m == 0 || d == 0 {
        return Err(Error::Validation(format!(
            "prompt needs M >= 1 and d >= 1, got M={m}, d={d}"
        )));
    }
    let words = template_words(template);
    if words.is_empty() {
        return Err(Error::Validation(format!(
            "template {template:?} has no context words"
        )));
    }
    let mut tokens = Matrix::zeros(m, d);
    for (row, word) in words.iter().take(m).enumerate() {
        tokens.row_mut(row).copy_from_slice(&word_vector(word, d, seed));
    }
    Ok(PromptContext {
        tokens,
        init_template: template.to_string(),
    })
}

/// A frozen vision-language model queried with a learnable prompt context.
pub trait VilEncoder {
    fn input_dim(&self) -> usize;

    fn embed_dim(&self) -> usize;

    fn class_names(&self) -> &[String];

    fn num_classes(&self) -> usize {
        self.class_names().len()
    }

    /// `n × D` features to `n × d` image embeddings.
    fn image_embed(&self, images: &Matrix) -> Result<Matrix>;

    /// Pre-softmax class scores for each image under the prompt context.
    fn class_logits(&self, images: &Matrix, ctx: &PromptContext) -> Result<LogitBatch>;

    /// Gradient with respect to `ctx.tokens` of a loss whose gradient with
    /// respect to the class logits is `grad_logits`.
    fn context_grad(
        &self,
        images: &Matrix,
        ctx: &PromptContext,
        grad_logits: &Matrix,
    ) -> Result<Matrix>;

    /// Content hash of all internal parameters.
    fn parameter_hash(&self) -> String;
}

/// Logits of `enc` for `batch`, with dimension checks.
pub fn vil_class_logits(
    enc: &dyn VilEncoder,
    batch: &Matrix,
    ctx: &PromptContext,
) -> Result<LogitBatch> {
    if batch.rows() == 0 {
        return Err(Error::Validation("empty image batch".into()));
    }
    if batch.cols() != enc.input_dim() {
        return Err(Error::shape(
            format!("images of width {}", enc.input_dim()),
            format!("{}", batch.cols()),
        ));
    }
    if ctx.width() != enc.embed_dim() {
        return Err(Error::shape(
            format!("context width {}", enc.embed_dim()),
            format!("{}", ctx.width()),
        ));
    }
    enc.class_logits(batch, ctx)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyVilConfig {
    pub embed_dim: usize,
    /// Logit scale applied to cosine similarities.
    pub temperature: f64,
    /// Norm of the random perturbation added to each unit-norm anchor.
    pub anchor_noise: f64,
    /// Gain on input directions outside the span of the class prototypes
    /// (1 keeps a plain random projection).
    pub off_span_gain: f64,
    /// Norm of a random offset shared by every anchor. A shared context can cancel it.
    pub anchor_bias: f64,
}

impl Default for ToyVilConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            temperature: 10.0,
            anchor_noise: 1.0,
            off_span_gain: 0.3,
            anchor_bias: 0.0,
        }
    }
}

/// Cosine-similarity classifier standing in for a pretrained vision-language model.
///
/// Logits are `t · cos(x W_img, e_c + mean(tokens))`. All parameters are fixed
/// at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyVilEncoder {
    w_img: Matrix,
    anchors: Matrix,
    temperature: f64,
    class_names: Vec<String>,
}

impl ToyVilEncoder {
    pub fn from_parts(
        w_img: Matrix,
        anchors: Matrix,
        temperature: f64,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if w_img.cols() != anchors.cols() {
            return Err(Error::shape(
                format!("anchor width {}", w_img.cols()),
                format!("{}", anchors.cols()),
            ));
        }
        if anchors.rows() != class_names.len() || class_names.len() < 2 {
            return Err(Error::Validation(format!(
                "{} anchors for {} class names",
                anchors.rows(),
                class_names.len()
            )));
        }
        if !(temperature > 0.0) {
            return Err(Error::Validation(format!("temperature {temperature} <= 0")));
        }
        Ok(Self {
            w_img,
            anchors,
            temperature,
            class_names,
        })
    }

    /// Random projection and random anchors: a generic encoder with no class knowledge.
    pub fn random(
        input_dim: usize,
        class_names: Vec<String>,
        cfg: ToyVilConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = gaussian(&mut rng, input_dim, cfg.embed_dim, 1.0 / (cfg.embed_dim as f64).sqrt());
        let anchors = gaussian(&mut rng, class_names.len(), cfg.embed_dim, 1.0 / (cfg.embed_dim as f64).sqrt());
        Self::from_parts(w, anchors, cfg.temperature, class_names)
    }

    /// Encoder whose anchors are noisy embeddings of known class prototypes
    /// (`C × D`, one row per class), modelling external class knowledge.
    pub fn from_prototypes(
        prototypes: &Matrix,
        class_names: Vec<String>,
        cfg: ToyVilConfig,
        seed: u64,
    ) -> Result<Self> {
        let (c, dim) = prototypes.shape();
        if c != class_names.len() {
            return Err(Error::Validation(format!(
                "{c} prototypes for {} class names",
                class_names.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.embed_dim;
        let proj = gaussian(&mut rng, dim, d, 1.0 / (d as f64).sqrt());
        // shrink directions orthogonal to the prototype span by off_span_gain
        let basis = orthonormal_rows(prototypes);
        let mut filter = Matrix::zeros(dim, dim);
        for i in 0..dim {
            filter.set(i, i, cfg.off_span_gain);
        }
        for b in basis.row_iter() {
            for i in 0..dim {
                for j in 0..dim {
                    filter.add_at(i, j, (1.0 - cfg.off_span_gain) * b[i] * b[j]);
                }
            }
        }
        let w_img = filter.matmul(&proj)?;
        let mut anchors = prototypes.matmul(&w_img)?;
        let mut bias: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let bn = norm(&bias).max(1e-12);
        bias.iter_mut().for_each(|v| *v *= cfg.anchor_bias / bn);
        for i in 0..c {
            let row = anchors.row_mut(i);
            let n = norm(row).max(1e-12);
            row.iter_mut().for_each(|v| *v /= n);
            let noise: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let nn = norm(&noise).max(1e-12);
            for ((v, e), b) in row.iter_mut().zip(&noise).zip(&bias) {
                *v += cfg.anchor_noise * e / nn + b;
            }
        }
        Self::from_parts(w_img, anchors, cfg.temperature, class_names)
    }

    pub fn anchors(&self) -> &Matrix {
        &self.anchors
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Logits from precomputed image embeddings.
    pub fn logits_from_embeddings(&self, z: &Matrix, ctx: &PromptContext) -> Result<LogitBatch> {
        let text = self.text_features(ctx);
        let mut out = Matrix::zeros(z.rows(), text.rows());
        for i in 0..z.rows() {
            let zi = z.row(i);
            let zn = norm(zi).max(1e-12);
            for c in 0..text.rows() {
                let t = text.row(c);
                out.set(i, c, self.temperature * dot(zi, t) / (zn * norm(t).max(1e-12)));
            }
        }
        LogitBatch::new(out)
    }

    fn text_features(&self, ctx: &PromptContext) -> Matrix {
        let mean = ctx.mean_token();
        let mut text = self.anchors.clone();
        for c in 0..text.rows() {
            for (v, m) in text.row_mut(c).iter_mut().zip(&mean) {
                *v += m;
            }
        }
        text
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Gram–Schmidt over the rows, dropping near-dependent ones.
fn orthonormal_rows(m: &Matrix) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for row in m.row_iter() {
        let mut v = row.to_vec();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = norm(&v);
        if n > 1e-9 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    Matrix::from_rows(&basis).unwrap_or_else(|_| Matrix::zeros(0, m.cols()))
}

impl VilEncoder for ToyVilEncoder {
    fn input_dim(&self) -> usize {
        self.w_img.rows()
    }

    fn embed_dim(&self) -> usize {
        self.w_img.cols()
    }

    fn class_names(&self) -> &[String] {
        &self.class_names
    }

    fn image_embed(&self, images: &Matrix) -> Result<Matrix> {
        images.matmul(&self.w_img)
    }

    fn class_logits(&self, images: &Matrix, ctx: &PromptContext) -> Result<LogitBatch> {
        let z = self.image_embed(images)?;
        self.logits_from_embeddings(&z, ctx)
    }

    fn context_grad(
        &self,
        images: &Matrix,
        ctx: &PromptContext,
        grad_logits: &Matrix,
    ) -> Result<Matrix> {
        let z = self.image_embed(images)?;
        let text = self.text_features(ctx);
        if grad_logits.shape() != (z.rows(), text.rows()) {
            return Err(Error::shape(
                format!("{}x{}", z.rows(), text.rows()),
                format!("{}x{}", grad_logits.rows(), grad_logits.cols()),
            ));
        }
        let d = self.embed_dim();
        let mut g_mean = vec![0.0; d];
        for c in 0..text.rows() {
            let t = text.row(c);
            let tn = norm(t).max(1e-12);
            for i in 0..z.rows() {
                let g = grad_logits.get(i, c);
                if g == 0.0 {
                    continue;
                }
                let zi = z.row(i);
                let zn = norm(zi).max(1e-12);
                let cos = dot(zi, t) / (zn * tn);
                for k in 0..d {
                    g_mean[k] += g * self.temperature * (zi[k] / (zn * tn) - cos * t[k] / (tn * tn));
                }
            }
        }
        let m = ctx.len();
        let mut out = Matrix::zeros(m, d);
        for r in 0..m {
            for (o, g) in out.row_mut(r).iter_mut().zip(&g_mean) {
                *o = g / m as f64;
            }
        }
        Ok(out)
    }

    fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self
            .w_img
            .as_slice()
            .iter()
            .chain(self.anchors.as_slice())
            .chain(std::iter::once(&self.temperature))
        {
            h.update(v.to_le_bytes());
        }
        for name in &self.class_names {
            h.update(name.as_bytes());
            h.update([0]);
        }
        to_hex(&h.finalize())
    }
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// SHA-256 over the little-endian bytes of every value.
pub fn hash_slices<'a>(slices: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for s in slices {
        h.update((s.len() as u64).to_le_bytes());
        for v in s {
            h.update(v.to_le_bytes());
        }
    }
    to_hex(&h.finalize())
}

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
            bias: vec![0.0; fan_out],
        }
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weight).expect("checked upstream");
        for i in 0..y.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        y
    }
}

/// Gradients of a [`TargetModel`], in [`TargetModel::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads(pub Vec<Vec<f64>>);

impl ModelGrads {
    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Feature extractor (`tanh` MLP) followed by a linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    pub hidden: Vec<Dense>,
    pub classifier: Dense,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pub logits: Matrix,
}

impl TargetModel {
    /// `input_dim → hidden[0] → … → classes`, Glorot-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || classes < 2 || hidden.contains(&0) {
            return Err(Error::Validation(format!(
                "invalid architecture {input_dim} -> {hidden:?} -> {classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = input_dim;
        for &h in hidden {
            layers.push(Dense::init(&mut rng, fan_in, h));
            fan_in = h;
        }
        Ok(Self {
            hidden: layers,
            classifier: Dense::init(&mut rng, fan_in, classes),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .unwrap_or(&self.classifier)
            .weight
            .rows()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.weight.cols()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.hidden
            .iter()
            .chain(std::iter::once(&self.classifier))
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.classifier))
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn parameter_hash(&self) -> String {
        hash_slices(self.params())
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(
                format!("inputs of width {}", self.input_dim()),
                format!("{}", batch.cols()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ForwardCache> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut h = batch.clone();
        for layer in &self.hidden {
            let next = layer.forward(&h).map(f64::tanh);
            inputs.push(std::mem::replace(&mut h, next));
        }
        let logits = self.classifier.forward(&h);
        inputs.push(h);
        Ok(ForwardCache { inputs, logits })
    }

    pub fn logits(&self, batch: &Matrix) -> Result<LogitBatch> {
        LogitBatch::new(self.forward(batch)?.logits)
    }

    /// Backpropagates `dL/dlogits` through the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Matrix) -> ModelGrads {
        let layers: Vec<&Dense> = self
            .hidden
            .iter()
            .chain(std::iter::once(&self.classifier))
            .collect();
        let mut grads = vec![Vec::new(); 2 * layers.len()];
        let mut g = grad_logits.clone();
        for (k, layer) in layers.iter().enumerate().rev() {
            let input = &cache.inputs[k];
            grads[2 * k] = input.t_matmul(&g).expect("shapes").into_vec();
            let mut gb = vec![0.0; layer.bias.len()];
            for row in g.row_iter() {
                gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            grads[2 * k + 1] = gb;
            if k > 0 {
                let mut g_in = g.matmul_t(&layer.weight).expect("shapes");
                // input to layer k is tanh output of layer k-1
                for (gi, a) in g_in.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    *gi *= 1.0 - a * a;
                }
                g = g_in;
            }
        }
        ModelGrads(grads)
    }
}

/// Independent copy of the model; later updates to either do not affect the other.
pub fn clone_model(m: &TargetModel) -> TargetModel {
    m.clone()
}

pub const CHECKPOINT_MAGIC: &str = "causal-sfda-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized run state: target model, and optionally the learned prompt and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub class_names: Vec<String>,
    pub model: TargetModel,
    pub prompt: Option<PromptContext>,
    pub cov: Option<DiagCovariance>,
}

fn write_tensor(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    let _ = writeln!(out, "tensor {name} {rows} {cols}");
    for r in data.chunks(cols.max(1)) {
        let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "classes\t{}", self.class_names.join("\t"));
        let _ = writeln!(out, "hidden_layers {}", self.model.hidden.len());
        let layers = self
            .model
            .hidden
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("hidden{i}"), l))
            .chain(std::iter::once(("classifier".to_string(), &self.model.classifier)));
        for (name, l) in layers {
            let (r, c) = l.weight.shape();
            write_tensor(&mut out, &format!("{name}.weight"), r, c, l.weight.as_slice());
            write_tensor(&mut out, &format!("{name}.bias"), 1, l.bias.len(), &l.bias);
        }
        if let Some(p) = &self.prompt {
            let _ = writeln!(out, "template\t{}", p.init_template);
            let (r, c) = p.tokens.shape();
            write_tensor(&mut out, "prompt.tokens", r, c, p.tokens.as_slice());
        }
        if let Some(cov) = &self.cov {
            write_tensor(&mut out, "cov.sigma", 1, cov.dim(), cov.as_slice());
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
        };

        let (ln, header) = next("header")?;
        let version = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .map(str::trim)
            .ok_or_else(|| err(ln, "not a checkpoint file".into()))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(err(ln, format!("unsupported checkpoint version {version}")));
        }
        let (ln, seed) = next("seed")?;
        let seed = seed
            .strip_prefix("seed ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| err(ln, "expected `seed <u64>`".into()))?;
        let (ln, classes) = next("classes")?;
        let class_names: Vec<String> = classes
            .strip_prefix("classes\t")
            .ok_or_else(|| err(ln, "expected `classes` line".into()))?
            .split('\t')
            .map(str::to_string)
            .collect();
        let (ln, hl) = next("hidden_layers")?;
        let n_hidden: usize = hl
            .strip_prefix("hidden_layers ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| err(ln, "expected `hidden_layers <n>`".into()))?;

        let mut tensors: Vec<(String, Matrix)> = Vec::new();
        let mut template = None;
        loop {
            let (ln, line) = next("tensor or end")?;
            if line == "end" {
                break;
            }
            if let Some(t) = line.strip_prefix("template\t") {
                template = Some(t.to_string());
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (name, rows, cols) = match parts.as_slice() {
                ["tensor", name, r, c] => (
                    name.to_string(),
                    r.parse::<usize>().map_err(|e| err(ln, e.to_string()))?,
                    c.parse::<usize>().map_err(|e| err(ln, e.to_string()))?,
                ),
                _ => return Err(err(ln, format!("unexpected line {line:?}"))),
            };
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, row) = next("tensor row")?;
                for tok in row.split_whitespace() {
                    data.push(
                        tok.parse::<f64>()
                            .map_err(|_| err(ln, format!("bad number {tok:?}")))?,
                    );
                }
                if data.len() % cols.max(1) != 0 {
                    return Err(err(ln, format!("row width differs from {cols}")));
                }
            }
            let m = Matrix::from_vec(rows, cols, data).map_err(|e| err(ln, e.to_string()))?;
            tensors.push((name, m));
        }

        let mut take = |name: &str| {
            tensors
                .iter()
                .position(|(n, _)| n == name)
                .map(|i| tensors.remove(i).1)
        };
        let mut layer = |prefix: &str| -> Result<Dense> {
            let weight = take(&format!("{prefix}.weight"))
                .ok_or_else(|| err(0, format!("missing tensor {prefix}.weight")))?;
            let bias = take(&format!("{prefix}.bias"))
                .ok_or_else(|| err(0, format!("missing tensor {prefix}.bias")))?;
            if bias.cols() != weight.cols() {
                return Err(err(0, format!("{prefix}: bias width mismatch")));
            }
            Ok(Dense {
                weight,
                bias: bias.into_vec(),
            })
        };
        let hidden = (0..n_hidden)
            .map(|i| layer(&format!("hidden{i}")))
            .collect::<Result<Vec<_>>>()?;
        let classifier = layer("classifier")?;
        let model = TargetModel { hidden, classifier };
        let prompt = match (take("prompt.tokens"), template) {
            (Some(tokens), Some(init_template)) => Some(PromptContext {
                tokens,
                init_template,
            }),
            (None, None) => None,
            _ => return Err(err(0, "prompt tokens and template must appear together".into())),
        };
        let cov = take("cov.sigma")
            .map(|m| DiagCovariance::new(m.into_vec()))
            .transpose()?;
        if model.num_classes() != class_names.len() {
            return Err(err(
                0,
                format!(
                    "classifier has {} outputs but {} class names",
                    model.num_classes(),
                    class_names.len()
                ),
            ));
        }
        Ok(Self {
            seed,
            class_names,
            model,
            prompt,
            cov,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}
