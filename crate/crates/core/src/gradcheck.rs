//! Central finite-difference checks of every analytic loss gradient.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matrix::Matrix;
use crate::objectives::{
    ec_objective, grad, ic_objective, ic_objective_weighted, pmi_loss, reweight_fw, reweight_fw_backward, sce_loss,
    un_loss, vmi_loss, DiagCovariance, EcSigns, LogitBatch, ProbBatch,
};

pub const FD_STEP: f64 = 1e-5;
pub const MAX_REL_ERROR: f64 = 1e-4;
pub const TRIALS_PER_LOSS: usize = 50;
pub const GRAD_SEED: u64 = 0x06AD_C0DE;

/// Deliberate faults used as negative controls for the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negates the analytic VMI gradients before comparison.
    FlipVmiGradSign,
}

/// Central differences of `f` at every coordinate of `x`.
pub fn central_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + step;
            let up = f(&probe);
            probe[k] = x[k] - step;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with a floor so that two vanishing gradients compare equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = crate::matrix::norm(analytic).max(crate::matrix::norm(numeric));
    diff / scale.max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub loss: &'static str,
    pub argument: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < MAX_REL_ERROR
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSuiteReport {
    pub checks: Vec<GradCheck>,
}

impl GradSuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(GradCheck::passed)
    }

    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheck> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn random_cov(rng: &mut ChaCha8Rng, c: usize) -> DiagCovariance {
    DiagCovariance::new((0..c).map(|_| rng.random_range(0.3..3.0)).collect()).expect("positive")
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize, c: usize) -> ProbBatch {
    LogitBatch::new(random_matrix(rng, n, c, 1.5)).expect("finite").softmax()
}

fn logits(m: Matrix) -> LogitBatch {
    LogitBatch::new(m).expect("finite probe")
}

fn mat_like(m: &Matrix, data: &[f64]) -> Matrix {
    Matrix::from_vec(m.rows(), m.cols(), data.to_vec()).expect("same shape")
}

fn cov_from(data: &[f64]) -> DiagCovariance {
    DiagCovariance::new(data.to_vec()).expect("probe stays positive")
}

/// Runs every loss/argument pair on `trials` random inputs.
pub fn gradient_suite(trials: usize, seed: u64, fault: Fault) -> GradSuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks: Vec<GradCheck> = Vec::new();
    let mut record = |loss: &'static str, argument: &'static str, err: f64| {
        match checks.iter_mut().find(|c| c.loss == loss && c.argument == argument) {
            Some(c) => {
                c.trials += 1;
                c.max_rel_error = c.max_rel_error.max(err);
            }
            None => checks.push(GradCheck {
                loss,
                argument,
                trials: 1,
                max_rel_error: err,
            }),
        }
    };
    let vmi_sign = if fault == Fault::FlipVmiGradSign { -1.0 } else { 1.0 };
    let alpha = 0.003;
    let (tau, sigma_w) = (1.0, 0.4);

    for _ in 0..trials {
        let n = rng.random_range(2..=8);
        let c = rng.random_range(2..=6);
        let o = random_matrix(&mut rng, n, c, 1.5);
        let a = random_matrix(&mut rng, n, c, 1.5);
        let cov = random_cov(&mut rng, c);
        let ob = logits(o.clone());
        let ab = logits(a.clone());

        // VMI
        let v = vmi_loss(&ob, &ab, &cov).expect("shapes");
        let fd = central_difference(o.as_slice(), FD_STEP, |x| {
            vmi_loss(&logits(mat_like(&o, x)), &ab, &cov).unwrap().value
        });
        let an: Vec<f64> = v.grads[grad::VIL_LOGITS].as_slice().iter().map(|g| vmi_sign * g).collect();
        record("vmi", "vil_logits", relative_error(&an, &fd));
        let fd = central_difference(cov.as_slice(), FD_STEP, |x| {
            vmi_loss(&ob, &ab, &cov_from(x)).unwrap().value
        });
        let an: Vec<f64> = v.grads[grad::COV].as_slice().iter().map(|g| vmi_sign * g).collect();
        record("vmi", "cov", relative_error(&an, &fd));

        // reweight_fw through a random linear read-out
        let probe = random_matrix(&mut rng, n, c, 1.0);
        let readout = |p: &ProbBatch| crate::matrix::dot(p.values().as_slice(), probe.as_slice());
        let (g_o, g_s) = reweight_fw_backward(&ob, &cov, &probe).expect("shapes");
        let fd = central_difference(o.as_slice(), FD_STEP, |x| {
            readout(&reweight_fw(&logits(mat_like(&o, x)), &cov).unwrap())
        });
        record("reweight_fw", "vil_logits", relative_error(g_o.as_slice(), &fd));
        let fd = central_difference(cov.as_slice(), FD_STEP, |x| {
            readout(&reweight_fw(&ob, &cov_from(x)).unwrap())
        });
        record("reweight_fw", "cov", relative_error(&g_s, &fd));

        // PMI
        let ph = random_probs(&mut rng, n, c);
        let pp = random_probs(&mut rng, n, c);
        let v = pmi_loss(&ph, &pp).expect("shapes");
        let fd = central_difference(ph.values().as_slice(), FD_STEP, |x| {
            pmi_loss(&ProbBatch::unchecked(mat_like(ph.values(), x)), &pp).unwrap().value
        });
        record("pmi", "vil_probs", relative_error(v.grads[grad::VIL_PROBS].as_slice(), &fd));
        let fd = central_difference(pp.values().as_slice(), FD_STEP, |x| {
            pmi_loss(&ph, &ProbBatch::unchecked(mat_like(pp.values(), x))).unwrap().value
        });
        record("pmi", "pseudo_probs", relative_error(v.grads[grad::PSEUDO_PROBS].as_slice(), &fd));

        // EC
        let signs = EcSigns::default();
        let v = ec_objective(&ob, &ab, &cov, alpha, signs).expect("shapes");
        let fd = central_difference(o.as_slice(), FD_STEP, |x| {
            ec_objective(&logits(mat_like(&o, x)), &ab, &cov, alpha, signs).unwrap().value
        });
        record("ec", "vil_logits", relative_error(v.grads[grad::VIL_LOGITS].as_slice(), &fd));
        let fd = central_difference(cov.as_slice(), FD_STEP, |x| {
            ec_objective(&ob, &ab, &cov_from(x), alpha, signs).unwrap().value
        });
        record("ec", "cov", relative_error(v.grads[grad::COV].as_slice(), &fd));

        // UN, SCE, IC
        let p = random_probs(&mut rng, n, c);
        let q = random_probs(&mut rng, n, c);
        let perturbed = |x: &[f64]| ProbBatch::unchecked(mat_like(p.values(), x));
        let v = un_loss(&p, tau).expect("tau");
        let fd = central_difference(p.values().as_slice(), FD_STEP, |x| {
            un_loss(&perturbed(x), tau).unwrap().value
        });
        record("un", "target_probs", relative_error(v.grads[grad::TARGET_PROBS].as_slice(), &fd));
        let v = sce_loss(&p, &q).expect("shapes");
        let fd = central_difference(p.values().as_slice(), FD_STEP, |x| {
            sce_loss(&perturbed(x), &q).unwrap().value
        });
        record("sce", "target_probs", relative_error(v.grads[grad::TARGET_PROBS].as_slice(), &fd));
        let v = ic_objective(&p, &q, tau, sigma_w).expect("shapes");
        let fd = central_difference(p.values().as_slice(), FD_STEP, |x| {
            ic_objective(&perturbed(x), &q, tau, sigma_w).unwrap().value
        });
        record("ic", "target_probs", relative_error(v.grads[grad::TARGET_PROBS].as_slice(), &fd));
        let w = 1.0 / n as f64;
        let v = ic_objective_weighted(&p, &q, tau, sigma_w, w).expect("shapes");
        let fd = central_difference(p.values().as_slice(), FD_STEP, |x| {
            ic_objective_weighted(&perturbed(x), &q, tau, sigma_w, w).unwrap().value
        });
        record("ic_mean_entropy", "target_probs", relative_error(v.grads[grad::TARGET_PROBS].as_slice(), &fd));
    }
    GradSuiteReport { checks }
}
