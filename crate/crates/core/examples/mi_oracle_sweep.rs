//! Exact discrete mutual information and the two data-processing checks.

use causal_sfda::mi_oracle::{
    check_lemma1, check_theorem1, entropy, lemma1_sweep, mutual_information, theorem1_sweep, AlphabetMap,
    DiscreteJoint, SWEEP_SEED,
};

fn main() -> causal_sfda::Result<()> {
    // two correlated bits: mostly equal
    let j = DiscreteJoint::from_rows(&[[0.4, 0.1], [0.1, 0.4]])?;
    println!("H(X) = {:.4} nats", entropy(&j.first_marginal()));
    println!("I(X;Y) = {:.4} nats", mutual_information(&j));

    // merging three symbols into two can only lose information
    let j3 = DiscreteJoint::from_rows(&[[0.2, 0.05, 0.05], [0.05, 0.3, 0.05], [0.05, 0.05, 0.2]])?;
    let merge = AlphabetMap::new(vec![0, 1, 1], 2)?;
    let c = check_lemma1(&j3, &merge)?;
    println!("before merge {:.4}, after {:.4}, holds {}", c.lhs, c.rhs, c.holds);

    let (j_zz, j_zy) = (j3.clone(), j3.transpose());
    let t = check_theorem1(&j_zz, &j_zy, &merge)?;
    println!("bound: {:.4} <= {:.4} ({})", t.literal, t.surrogate, t.bound_holds);

    let l = lemma1_sweep(1000, SWEEP_SEED);
    let b = theorem1_sweep(1000, SWEEP_SEED);
    println!("random sweeps: {}/{} and {}/{}", l.passed, l.trials, b.passed, b.trials);
    Ok(())
}
