//! The adaptation losses on a small hand-made batch, plus the gradient suite.

use causal_sfda::gradcheck::{gradient_suite, Fault, GRAD_SEED};
use causal_sfda::objectives::{
    ec_objective, grad, ic_objective, reweight_fw, sce_loss, un_loss, DiagCovariance, EcSigns, LogitBatch,
};

fn main() -> causal_sfda::Result<()> {
    let vil = LogitBatch::from_rows(&[[2.0, 0.1, -1.0], [0.3, 1.5, 0.0], [-0.5, 0.2, 1.8], [1.0, 0.9, -0.2]])?;
    let target = LogitBatch::from_rows(&[[1.2, 0.4, 0.0], [0.1, 0.8, 0.3], [0.0, 0.0, 0.5], [0.6, 0.6, 0.1]])?;
    let cov = DiagCovariance::identity(3);

    let ec = ec_objective(&vil, &target, &cov, 0.003, EcSigns::default())?;
    println!("external objective {:.6} (pmi {:.6}, vmi {:.3})", ec.value, ec.terms["pmi"], ec.terms["vmi"]);
    println!("d/d logits row 0: {:?}", ec.grads[grad::VIL_LOGITS].row(0));

    let pseudo = reweight_fw(&vil, &cov)?;
    let p = target.softmax();
    println!("entropy term {:.6}", un_loss(&p, 1.0)?.value);
    println!("symmetric cross-entropy {:.6}", sce_loss(&p, &pseudo)?.value);
    let ic = ic_objective(&p, &pseudo, 1.0, 0.4)?;
    println!("internal objective {:.6}", ic.value);

    for c in gradient_suite(10, GRAD_SEED, Fault::None).checks {
        println!("{:<16} {:<14} max rel error {:.1e}", c.loss, c.argument, c.max_rel_error);
    }
    Ok(())
}
