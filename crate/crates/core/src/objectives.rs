//! Losses for both adaptation phases, each returning its value together with
//! analytic gradients for every learnable argument.
//!
//! Phase 1 (external factors) combines a Gaussian variational bound between
//! the vision-language logits and the target-model logits ([`vmi_loss`]) with
//! a batch-joint mutual information between the vision-language predictions
//! and their covariance-reweighted copy ([`pmi_loss`], [`reweight_fw`]).
//!
//! Phase 2 (internal factors) combines per-sample entropy with a class-balance
//! KL term ([`un_loss`]) and cross-entropy against pseudo-labels ([`sce_loss`]).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matrix::{softmax_row, softmax_row_backward, Matrix};

/// Floor applied to every probability before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Floor for covariance entries.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Gradient keys used in [`LossValue::grads`].
pub mod grad {
    pub const VIL_LOGITS: &str = "vil_logits";
    pub const COV: &str = "cov";
    pub const VIL_PROBS: &str = "vil_probs";
    pub const PSEUDO_PROBS: &str = "pseudo_probs";
    pub const TARGET_PROBS: &str = "target_probs";
}

/// `n × C` pre-softmax class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch(Matrix);

impl LogitBatch {
    pub fn new(values: Matrix) -> Result<Self> {
        let (n, c) = values.shape();
        if n < 1 || c < 2 {
            return Err(Error::shape("n >= 1, C >= 2", format!("{n}x{c}")));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("logit batch".into()));
        }
        Ok(Self(values))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> ProbBatch {
        let mut out = Matrix::zeros(self.n(), self.classes());
        for i in 0..self.n() {
            out.row_mut(i).copy_from_slice(&softmax_row(self.0.row(i)));
        }
        ProbBatch(out)
    }
}

/// `n × C` matrix whose rows lie on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch(Matrix);

impl ProbBatch {
    pub fn new(values: Matrix) -> Result<Self> {
        let (n, c) = values.shape();
        if n < 1 || c < 1 {
            return Err(Error::shape("non-empty batch", format!("{n}x{c}")));
        }
        for (i, row) in values.row_iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "row {i} is not a probability vector (sum {total})"
                )));
            }
        }
        Ok(Self(values))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Uniform rows.
    pub fn uniform(n: usize, classes: usize) -> Self {
        Self(Matrix::filled(n, classes, 1.0 / classes as f64))
    }

    /// Wraps a matrix without checking rows; used for finite-difference
    /// probes, which step off the simplex.
    pub fn unchecked(values: Matrix) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    /// Index of the largest entry of each row, ties to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        self.0.row_iter().map(argmax).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Learnable diagonal covariance `Σ_Z`, kept above [`SIGMA_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiagCovariance {
    sigma: Vec<f64>,
}

impl DiagCovariance {
    /// Entries below the floor are clamped, not rejected.
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::Validation("empty covariance".into()));
        }
        if sigma.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("covariance".into()));
        }
        let mut cov = Self { sigma };
        cov.clamp();
        Ok(cov)
    }

    /// All-ones initialization.
    pub fn identity(classes: usize) -> Self {
        Self {
            sigma: vec![1.0; classes],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sigma
    }

    /// Raw access for optimizers; call [`DiagCovariance::clamp`] afterwards.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.sigma
    }

    pub fn clamp(&mut self) {
        for s in &mut self.sigma {
            if *s < SIGMA_FLOOR {
                *s = SIGMA_FLOOR;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn log_det(&self) -> f64 {
        self.sigma.iter().map(|s| s.ln()).sum()
    }
}

/// Scalar loss with named gradients and a breakdown of its component terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grads: BTreeMap<&'static str, Matrix>,
    pub terms: BTreeMap<&'static str, f64>,
}

impl LossValue {
    fn new(value: f64) -> Self {
        Self {
            value,
            grads: BTreeMap::new(),
            terms: BTreeMap::new(),
        }
    }

    fn with_grad(mut self, name: &'static str, g: Matrix) -> Self {
        self.grads.insert(name, g);
        self
    }

    pub fn grad(&self, name: &str) -> Option<&Matrix> {
        self.grads.get(name)
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.get(name).copied()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grads.values().all(Matrix::is_finite)
    }
}

fn same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    Ok(())
}

fn check_cov(cov: &DiagCovariance, classes: usize) -> Result<()> {
    if cov.dim() != classes {
        return Err(Error::shape(
            format!("covariance of dimension {classes}"),
            format!("{}", cov.dim()),
        ));
    }
    Ok(())
}

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

fn above_clamp(p: f64) -> f64 {
    if p > LOG_CLAMP { 1.0 } else { 0.0 }
}

/// Variational MI bound between vision-language and target logits:
/// `−(1/n) Σ_i [(ô_i − a_i)ᵀ Σ⁻¹ (ô_i − a_i) + ln|Σ|]`.
///
/// Gradients: [`grad::VIL_LOGITS`] and [`grad::COV`] (shape `1 × C`).
/// Target logits are constants.
pub fn vmi_loss(
    vil_logits: &LogitBatch,
    target_logits: &LogitBatch,
    cov: &DiagCovariance,
) -> Result<LossValue> {
    let (o, a) = (vil_logits.values(), target_logits.values());
    same_shape(o, a)?;
    check_cov(cov, o.cols())?;
    let n = o.rows() as f64;
    let sigma = cov.as_slice();
    let mut quad = 0.0;
    let mut g_logits = Matrix::zeros(o.rows(), o.cols());
    let mut sq_over_sigma2 = vec![0.0; sigma.len()];
    for i in 0..o.rows() {
        for (c, &s) in sigma.iter().enumerate() {
            let r = o.get(i, c) - a.get(i, c);
            quad += r * r / s;
            sq_over_sigma2[c] += r * r / (s * s);
            g_logits.set(i, c, -2.0 * r / (s * n));
        }
    }
    let value = -(quad / n + cov.log_det());
    let g_cov: Vec<f64> = sigma
        .iter()
        .zip(&sq_over_sigma2)
        .map(|(s, q)| q / n - 1.0 / s)
        .collect();
    Ok(LossValue::new(value)
        .with_grad(grad::VIL_LOGITS, g_logits)
        .with_grad(grad::COV, Matrix::from_vec(1, sigma.len(), g_cov)?))
}

/// Covariance-weighted pseudo-label map
/// `p'_i = softmax(softmax(1/σ) ⊙ softmax(ô_i))`.
pub fn reweight_fw(vil_logits: &LogitBatch, cov: &DiagCovariance) -> Result<ProbBatch> {
    Ok(Reweight::forward(vil_logits, cov)?.output)
}

/// Cached forward pass of [`reweight_fw`] for backpropagation.
struct Reweight {
    weights: Vec<f64>,
    inner: Matrix,
    output: ProbBatch,
}

impl Reweight {
    fn forward(vil_logits: &LogitBatch, cov: &DiagCovariance) -> Result<Self> {
        check_cov(cov, vil_logits.classes())?;
        let inv: Vec<f64> = cov.as_slice().iter().map(|s| 1.0 / s).collect();
        let weights = softmax_row(&inv);
        let inner = vil_logits.softmax().0;
        let mut out = Matrix::zeros(inner.rows(), inner.cols());
        for i in 0..inner.rows() {
            let u: Vec<f64> = inner.row(i).iter().zip(&weights).map(|(s, w)| s * w).collect();
            out.row_mut(i).copy_from_slice(&softmax_row(&u));
        }
        Ok(Self {
            weights,
            inner,
            output: ProbBatch(out),
        })
    }

    /// Returns `(dL/dô, dL/dσ)` given `dL/dp'`.
    fn backward(&self, cov: &DiagCovariance, g_out: &Matrix) -> (Matrix, Vec<f64>) {
        let (n, c) = g_out.shape();
        let mut g_logits = Matrix::zeros(n, c);
        let mut g_w = vec![0.0; c];
        for i in 0..n {
            let g_u = softmax_row_backward(self.output.0.row(i), g_out.row(i));
            let s = self.inner.row(i);
            let g_s: Vec<f64> = g_u.iter().zip(&self.weights).map(|(g, w)| g * w).collect();
            for ((gw, g), si) in g_w.iter_mut().zip(&g_u).zip(s) {
                *gw += g * si;
            }
            g_logits
                .row_mut(i)
                .copy_from_slice(&softmax_row_backward(s, &g_s));
        }
        let g_inv = softmax_row_backward(&self.weights, &g_w);
        let g_sigma = g_inv
            .iter()
            .zip(cov.as_slice())
            .map(|(g, s)| -g / (s * s))
            .collect();
        (g_logits, g_sigma)
    }
}

/// Vector-Jacobian product of [`reweight_fw`]: `(dL/dô, dL/dσ)` for upstream `dL/dp'`.
pub fn reweight_fw_backward(
    vil_logits: &LogitBatch,
    cov: &DiagCovariance,
    g_out: &Matrix,
) -> Result<(Matrix, Vec<f64>)> {
    same_shape(vil_logits.values(), g_out)?;
    Ok(Reweight::forward(vil_logits, cov)?.backward(cov, g_out))
}

/// Batch-joint mutual information between paired predictions.
///
/// Builds `P = (1/n) Σ_i p̂_i p'_iᵀ`, symmetrizes and renormalizes it, and
/// returns `Σ_ab P_ab [ln P_ab − ln P_a − ln P_b]` with logs clamped at
/// [`LOG_CLAMP`]. Gradients: [`grad::VIL_PROBS`] and [`grad::PSEUDO_PROBS`].
pub fn pmi_loss(vil_probs: &ProbBatch, pseudo_probs: &ProbBatch) -> Result<LossValue> {
    let (ph, pp) = (vil_probs.values(), pseudo_probs.values());
    same_shape(ph, pp)?;
    let n = ph.rows() as f64;
    let c = ph.cols();

    let mut joint = ph.t_matmul(pp)?;
    joint.scale(1.0 / n);
    let sym = symmetrize(&joint);
    let total = sym.sum();
    let mut p = sym.clone();
    p.scale(1.0 / total);

    let rows: Vec<f64> = p.row_iter().map(|r| r.iter().sum()).collect();
    let mut cols = vec![0.0; c];
    for r in p.row_iter() {
        for (cj, v) in cols.iter_mut().zip(r) {
            *cj += v;
        }
    }

    let mut value = 0.0;
    let mut g_p = Matrix::zeros(c, c);
    for a in 0..c {
        for b in 0..c {
            let pab = p.get(a, b);
            let log_ratio = clamped_ln(pab) - clamped_ln(rows[a]) - clamped_ln(cols[b]);
            value += pab * log_ratio;
            g_p.set(
                a,
                b,
                log_ratio + above_clamp(pab) - above_clamp(rows[a]) - above_clamp(cols[b]),
            );
        }
    }

    // normalization: d(P/S)/dP_sym
    let inner: f64 = g_p
        .as_slice()
        .iter()
        .zip(p.as_slice())
        .map(|(g, v)| g * v)
        .sum();
    let mut g_sym = g_p.map(|g| (g - inner) / total);
    g_sym = symmetrize(&g_sym);
    g_sym.scale(1.0 / n);

    let g_vil = pp.matmul_t(&g_sym)?;
    let g_pseudo = ph.matmul(&g_sym)?;
    Ok(LossValue::new(value)
        .with_grad(grad::VIL_PROBS, g_vil)
        .with_grad(grad::PSEUDO_PROBS, g_pseudo))
}

fn symmetrize(m: &Matrix) -> Matrix {
    let mut out = m.transpose();
    out.add_assign(m);
    out.scale(0.5);
    out
}

/// Sign multipliers applied to the two terms of [`ec_objective`].
///
/// The objective is `pmi · L_PMI + vmi · α · L_VMI`; the defaults reproduce
/// `L_PMI − α L_VMI`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EcSigns {
    pub pmi: f64,
    pub vmi: f64,
}

impl Default for EcSigns {
    fn default() -> Self {
        Self { pmi: 1.0, vmi: -1.0 }
    }
}

/// External-causality objective `L_PMI(softmax(ô), f_w(ô)) − α L_VMI(ô, a, Σ)`.
///
/// Gradients: [`grad::VIL_LOGITS`] and [`grad::COV`]. Terms: `"pmi"`, `"vmi"`.
pub fn ec_objective(
    vil_logits: &LogitBatch,
    target_logits: &LogitBatch,
    cov: &DiagCovariance,
    alpha: f64,
    signs: EcSigns,
) -> Result<LossValue> {
    if !(alpha >= 0.0) {
        return Err(Error::Precondition(format!("alpha must be >= 0, got {alpha}")));
    }
    let vil_probs = vil_logits.softmax();
    let rw = Reweight::forward(vil_logits, cov)?;
    let pmi = pmi_loss(&vil_probs, &rw.output)?;
    let vmi = vmi_loss(vil_logits, target_logits, cov)?;

    let (n, c) = vil_logits.values().shape();
    let mut g_logits = Matrix::zeros(n, c);
    let g_vp = &pmi.grads[grad::VIL_PROBS];
    for i in 0..n {
        let g = softmax_row_backward(vil_probs.values().row(i), g_vp.row(i));
        g_logits.row_mut(i).copy_from_slice(&g);
    }
    let (g_rw_logits, g_rw_sigma) = rw.backward(cov, &pmi.grads[grad::PSEUDO_PROBS]);
    g_logits.add_assign(&g_rw_logits);
    g_logits.scale(signs.pmi);

    let k = signs.vmi * alpha;
    let mut g_vmi_logits = vmi.grads[grad::VIL_LOGITS].clone();
    g_vmi_logits.scale(k);
    g_logits.add_assign(&g_vmi_logits);

    let g_cov: Vec<f64> = g_rw_sigma
        .iter()
        .zip(vmi.grads[grad::COV].as_slice())
        .map(|(r, v)| signs.pmi * r + k * v)
        .collect();

    let mut out = LossValue::new(signs.pmi * pmi.value + k * vmi.value)
        .with_grad(grad::VIL_LOGITS, g_logits)
        .with_grad(grad::COV, Matrix::from_vec(1, c, g_cov)?);
    out.terms.insert("pmi", pmi.value);
    out.terms.insert("vmi", vmi.value);
    Ok(out)
}

/// Confidence-and-balance loss
/// `Σ_i H(p_i) + τ Σ_c ϱ_c ln(ϱ_c C)` with `ϱ = (1/n) Σ_i p_i`.
///
/// Gradient: [`grad::TARGET_PROBS`]. Terms: `"entropy"`, `"balance"`.
pub fn un_loss(target_probs: &ProbBatch, tau: f64) -> Result<LossValue> {
    un_loss_weighted(target_probs, tau, 1.0)
}

/// [`un_loss`] with the entropy sum multiplied by `entropy_weight`
/// (`1/n` turns it into a per-sample mean).
pub fn un_loss_weighted(target_probs: &ProbBatch, tau: f64, entropy_weight: f64) -> Result<LossValue> {
    if !(entropy_weight >= 0.0) {
        return Err(Error::Precondition(format!("entropy weight must be >= 0, got {entropy_weight}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::Precondition(format!("tau must be >= 0, got {tau}")));
    }
    let p = target_probs.values();
    let (n, c) = p.shape();
    let mut entropy = 0.0;
    let mut g = Matrix::zeros(n, c);
    let mut marginal = vec![0.0; c];
    for i in 0..n {
        for j in 0..c {
            let v = p.get(i, j);
            entropy -= v * clamped_ln(v);
            g.set(i, j, -entropy_weight * (clamped_ln(v) + above_clamp(v)));
            marginal[j] += v / n as f64;
        }
    }
    let ln_c = (c as f64).ln();
    let balance: f64 = marginal.iter().map(|&r| r * (clamped_ln(r) + ln_c)).sum();
    for j in 0..c {
        let r = marginal[j];
        let d = tau * (clamped_ln(r) + ln_c + above_clamp(r)) / n as f64;
        for i in 0..n {
            g.add_at(i, j, d);
        }
    }
    let mut out =
        LossValue::new(entropy_weight * entropy + tau * balance).with_grad(grad::TARGET_PROBS, g);
    out.terms.insert("entropy", entropy_weight * entropy);
    out.terms.insert("balance", balance);
    Ok(out)
}

/// Soft-label cross-entropy `−(1/n) Σ_i Σ_c q_ic ln p_ic`.
///
/// Gradient: [`grad::TARGET_PROBS`] only; pseudo-labels are constants.
pub fn sce_loss(target_probs: &ProbBatch, pseudo_labels: &ProbBatch) -> Result<LossValue> {
    let (p, q) = (target_probs.values(), pseudo_labels.values());
    same_shape(p, q)?;
    let n = p.rows() as f64;
    let mut value = 0.0;
    let mut g = Matrix::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        for j in 0..p.cols() {
            let (pv, qv) = (p.get(i, j), q.get(i, j));
            value -= qv * clamped_ln(pv);
            g.set(i, j, -qv * above_clamp(pv) / (pv.max(LOG_CLAMP) * n));
        }
    }
    Ok(LossValue::new(value / n).with_grad(grad::TARGET_PROBS, g))
}

/// Internal-causality objective `L_UN(τ) + σ_w · L_SCE`.
///
/// Gradient: [`grad::TARGET_PROBS`]. Terms: `"un"`, `"sce"`.
pub fn ic_objective(
    target_probs: &ProbBatch,
    pseudo_labels: &ProbBatch,
    tau: f64,
    sigma_w: f64,
) -> Result<LossValue> {
    ic_objective_weighted(target_probs, pseudo_labels, tau, sigma_w, 1.0)
}

/// [`ic_objective`] built on [`un_loss_weighted`].
pub fn ic_objective_weighted(
    target_probs: &ProbBatch,
    pseudo_labels: &ProbBatch,
    tau: f64,
    sigma_w: f64,
    entropy_weight: f64,
) -> Result<LossValue> {
    if !(sigma_w >= 0.0) {
        return Err(Error::Precondition(format!(
            "sigma_w must be >= 0, got {sigma_w}"
        )));
    }
    let un = un_loss_weighted(target_probs, tau, entropy_weight)?;
    let sce = sce_loss(target_probs, pseudo_labels)?;
    let mut g = un.grads[grad::TARGET_PROBS].clone();
    let mut gs = sce.grads[grad::TARGET_PROBS].clone();
    gs.scale(sigma_w);
    g.add_assign(&gs);
    let mut out = LossValue::new(un.value + sigma_w * sce.value).with_grad(grad::TARGET_PROBS, g);
    out.terms.insert("un", un.value);
    out.terms.insert("sce", sce.value);
    Ok(out)
}
