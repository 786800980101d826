//! Zero-shot classification with the toy vision-language encoder, then a few
//! steps of supervised context tuning through `context_grad`.

use causal_sfda::data::{generate_domain_pair, SyntheticDomainSpec};
use causal_sfda::evaluation::accuracy;
use causal_sfda::models::{init_prompt, vil_class_logits, ToyVilConfig, ToyVilEncoder, VilEncoder, DEFAULT_TEMPLATE};
use causal_sfda::Matrix;

fn main() -> causal_sfda::Result<()> {
    let pair = generate_domain_pair(&SyntheticDomainSpec::default(), 0)?;
    let cfg = ToyVilConfig { anchor_noise: 2.0, ..Default::default() };
    let enc = ToyVilEncoder::from_prototypes(&pair.target_means, pair.target.class_names.clone(), cfg, 0)?;
    let mut ctx = init_prompt(DEFAULT_TEMPLATE, 4, enc.embed_dim(), 0)?;
    let (x, y) = (&pair.target.features, &pair.target.labels);
    println!("encoder {} frozen at {}", enc.class_names().join("/"), &enc.parameter_hash()[..12]);

    for step in 0..=40 {
        let probs = vil_class_logits(&enc, x, &ctx)?.softmax();
        if step % 10 == 0 {
            println!("step {step:>2}: accuracy {:.1}%", accuracy(&probs, y)?);
        }
        // cross-entropy gradient with respect to the logits
        let n = x.rows() as f64;
        let mut g = probs.values().clone();
        for (i, &label) in y.iter().enumerate() {
            g.add_at(i, label, -1.0);
        }
        g.scale(1.0 / n);
        let grad = enc.context_grad(x, &ctx, &g)?;
        let step_vec: Vec<f64> = grad.as_slice().iter().map(|v| -0.5 * v).collect();
        ctx.tokens.add_assign(&Matrix::from_vec(grad.rows(), grad.cols(), step_vec)?);
    }
    println!("encoder unchanged: {}", &enc.parameter_hash()[..12]);
    Ok(())
}
