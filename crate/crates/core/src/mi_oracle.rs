//! Exact information measures on small discrete distributions.
//!
//! These are the ground truth against which the variational estimators in
//! [`crate::objectives`] are checked, and they make the data-processing
//! statements behind the bottleneck objective numerically testable:
//!
//! * compressing one side of a joint never increases its mutual information;
//! * a bijective relabelling leaves it unchanged.
//!
//! All quantities are in nats and `0 · ln 0 = 0`.

use rand::Rng;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

/// Largest alphabet accepted on any axis.
pub const MAX_ALPHABET: usize = 64;

/// Tolerance on the total mass of a distribution.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Slack allowed when comparing two MI values for an inequality.
pub const INEQUALITY_SLACK: f64 = 1e-10;

/// Fixed seed for the randomized oracle sweeps.
pub const SWEEP_SEED: u64 = 0x5EED_1E4A;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.len() > MAX_ALPHABET {
            return Err(Error::Validation(format!(
                "alphabet size {} outside 1..={MAX_ALPHABET}",
                probs.len()
            )));
        }
        check_mass(&probs)?;
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

fn check_mass(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Validation(format!("invalid probability {v}")));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Validation(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Joint probability table `P(a, b)` over two finite alphabets.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    rows: usize,
    cols: usize,
    table: Vec<f64>,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

impl DiscreteJoint {
    /// Builds a joint from a row-major table with numeric alphabet labels.
    pub fn new(rows: usize, cols: usize, table: Vec<f64>) -> Result<Self> {
        let row_labels = (0..rows).map(|i| i.to_string()).collect();
        let col_labels = (0..cols).map(|i| i.to_string()).collect();
        Self::with_labels(table, row_labels, col_labels)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::Validation("ragged joint table".into()));
        }
        let table = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), cols, table)
    }

    pub fn with_labels(
        table: Vec<f64>,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
    ) -> Result<Self> {
        let (rows, cols) = (row_labels.len(), col_labels.len());
        for n in [rows, cols] {
            if n == 0 || n > MAX_ALPHABET {
                return Err(Error::Validation(format!(
                    "alphabet size {n} outside 1..={MAX_ALPHABET}"
                )));
            }
        }
        if table.len() != rows * cols {
            return Err(Error::Validation(format!(
                "table has {} entries, expected {rows}x{cols}",
                table.len()
            )));
        }
        check_mass(&table)?;
        Ok(Self {
            rows,
            cols,
            table,
            row_labels,
            col_labels,
        })
    }

    /// Product joint `P(a) P(b)`.
    pub fn product(first: &DiscreteDist, second: &DiscreteDist) -> Result<Self> {
        let table = first
            .probs()
            .iter()
            .flat_map(|a| second.probs().iter().map(move |b| a * b))
            .collect();
        Self::new(first.len(), second.len(), renormalize(table))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.table[a * self.cols + b]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    fn first_marginal_raw(&self) -> Vec<f64> {
        self.table
            .chunks(self.cols)
            .map(|r| r.iter().sum())
            .collect()
    }

    fn second_marginal_raw(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in self.table.chunks(self.cols) {
            for (mj, v) in m.iter_mut().zip(r) {
                *mj += v;
            }
        }
        m
    }

    pub fn first_marginal(&self) -> DiscreteDist {
        DiscreteDist {
            probs: self.first_marginal_raw(),
        }
    }

    pub fn second_marginal(&self) -> DiscreteDist {
        DiscreteDist {
            probs: self.second_marginal_raw(),
        }
    }

    pub fn marginal(&self, axis: Axis) -> DiscreteDist {
        match axis {
            Axis::First => self.first_marginal(),
            Axis::Second => self.second_marginal(),
        }
    }

    pub fn transpose(&self) -> DiscreteJoint {
        let mut table = vec![0.0; self.table.len()];
        for a in 0..self.rows {
            for b in 0..self.cols {
                table[b * self.rows + a] = self.get(a, b);
            }
        }
        DiscreteJoint {
            rows: self.cols,
            cols: self.rows,
            table,
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
        }
    }
}

fn renormalize(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    /// Fewer output symbols than input symbols.
    Compressive,
    /// A permutation of the alphabet.
    Bijective,
    /// Anything else (same or larger output alphabet, not invertible).
    General,
}

/// Total function from an input alphabet `0..n` to an output alphabet `0..m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlphabetMap {
    targets: Vec<usize>,
    output_size: usize,
    kind: MapKind,
}

impl AlphabetMap {
    pub fn new(targets: Vec<usize>, output_size: usize) -> Result<Self> {
        if targets.is_empty() || output_size == 0 {
            return Err(Error::Validation("empty alphabet map".into()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= output_size) {
            return Err(Error::Validation(format!(
                "symbol maps to {t}, outside output alphabet of size {output_size}"
            )));
        }
        let kind = if output_size < targets.len() {
            MapKind::Compressive
        } else if output_size == targets.len() && {
            let mut seen = vec![false; output_size];
            targets.iter().all(|&t| !std::mem::replace(&mut seen[t], true))
        } {
            MapKind::Bijective
        } else {
            MapKind::General
        };
        Ok(Self {
            targets,
            output_size,
            kind,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new((0..n).collect(), n).expect("identity map is valid")
    }

    pub fn input_size(&self) -> usize {
        self.targets.len()
    }

    pub fn output_size(&self) -> usize {
        self.output_size
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn is_compressive(&self) -> bool {
        self.kind == MapKind::Compressive
    }

    pub fn is_bijective(&self) -> bool {
        self.kind == MapKind::Bijective
    }

    pub fn apply(&self, symbol: usize) -> usize {
        self.targets[symbol]
    }

    /// Inverse of a bijective map.
    pub fn inverse(&self) -> Option<AlphabetMap> {
        if !self.is_bijective() {
            return None;
        }
        let mut inv = vec![0; self.output_size];
        for (i, &t) in self.targets.iter().enumerate() {
            inv[t] = i;
        }
        AlphabetMap::new(inv, self.output_size).ok()
    }

    /// Uniformly random map into a strictly smaller alphabet.
    pub fn random_compressive<R: Rng + ?Sized>(input: usize, rng: &mut R) -> Self {
        assert!(input >= 2, "compression needs at least two input symbols");
        let out = rng.random_range(1..input);
        let targets = (0..input).map(|_| rng.random_range(0..out)).collect();
        Self::new(targets, out).expect("valid by construction")
    }

    pub fn random_bijection<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut targets: Vec<usize> = (0..n).collect();
        targets.shuffle(rng);
        Self::new(targets, n).expect("valid by construction")
    }
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 { p * p.ln() } else { 0.0 }
}

/// Shannon entropy `−Σ p ln p`.
pub fn entropy(d: &DiscreteDist) -> f64 {
    -d.probs.iter().map(|&p| plogp(p)).sum::<f64>()
}

/// Validating entropy for raw probability vectors.
pub fn entropy_of(probs: &[f64]) -> Result<f64> {
    Ok(entropy(&DiscreteDist::new(probs.to_vec())?))
}

/// `Σ P(a,b) ln[P(a,b) / (P(a) P(b))]`, clipped below at zero to absorb
/// round-off on independent tables.
pub fn mutual_information(j: &DiscreteJoint) -> f64 {
    let pa = j.first_marginal_raw();
    let pb = j.second_marginal_raw();
    let mut mi = 0.0;
    for (a, row) in j.table.chunks(j.cols).enumerate() {
        for (b, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (pa[a] * pb[b])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Joint of `(A, m(B))` (or `(m(A), B)`): each output cell sums its preimage.
pub fn push_forward(j: &DiscreteJoint, m: &AlphabetMap, axis: Axis) -> Result<DiscreteJoint> {
    let axis_len = match axis {
        Axis::First => j.rows,
        Axis::Second => j.cols,
    };
    if m.input_size() != axis_len {
        return Err(Error::Validation(format!(
            "map input alphabet has {} symbols, axis has {axis_len}",
            m.input_size()
        )));
    }
    let out = m.output_size();
    let labels: Vec<String> = (0..out).map(|i| i.to_string()).collect();
    match axis {
        Axis::First => {
            let mut table = vec![0.0; out * j.cols];
            for a in 0..j.rows {
                let t = m.apply(a);
                for b in 0..j.cols {
                    table[t * j.cols + b] += j.get(a, b);
                }
            }
            DiscreteJoint::with_labels(table, labels, j.col_labels.clone())
        }
        Axis::Second => {
            let mut table = vec![0.0; j.rows * out];
            for a in 0..j.rows {
                for b in 0..j.cols {
                    table[a * out + m.apply(b)] += j.get(a, b);
                }
            }
            DiscreteJoint::with_labels(table, j.row_labels.clone(), labels)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Check {
    pub holds: bool,
    /// `I(Z₁, X₁)`.
    pub lhs: f64,
    /// `I(Z₁, f₁(X₁))`.
    pub rhs: f64,
}

/// Checks that compressing the second variable cannot increase its MI with the first.
pub fn check_lemma1(j: &DiscreteJoint, m: &AlphabetMap) -> Result<Lemma1Check> {
    if !m.is_compressive() {
        return Err(Error::Precondition(format!(
            "map {:?} is not compressive ({} -> {})",
            m.kind(),
            m.input_size(),
            m.output_size()
        )));
    }
    let lhs = mutual_information(j);
    let rhs = mutual_information(&push_forward(j, m, Axis::Second)?);
    Ok(Lemma1Check {
        holds: lhs >= rhs - INEQUALITY_SLACK,
        lhs,
        rhs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Check {
    pub bound_holds: bool,
    /// `I(Z, Z') − I(Z', Y)`.
    pub literal: f64,
    /// `I(Z, Z') − I(Y', Y)` with `Y' = m(Z')`.
    pub surrogate: f64,
    /// For bijective maps, whether `I(Y', Y) = I(Z', Y)` within tolerance.
    /// `None` when the map is not bijective.
    pub equality_holds: Option<bool>,
}

impl Theorem1Check {
    pub fn passed(&self) -> bool {
        self.bound_holds && self.equality_holds.unwrap_or(true)
    }
}

/// Checks the bottleneck upper bound.
///
/// `j_zz` is the joint of `(Z, Z')` and `j_zy` the joint of `(Z', Y)`; the map
/// acts on the `Z'` alphabet to produce the pseudo-label `Y'`.
pub fn check_theorem1(
    j_zz: &DiscreteJoint,
    j_zy: &DiscreteJoint,
    m: &AlphabetMap,
) -> Result<Theorem1Check> {
    let from_zz = j_zz.second_marginal_raw();
    let from_zy = j_zy.first_marginal_raw();
    if from_zz.len() != from_zy.len() {
        return Err(Error::Validation(format!(
            "Z' alphabet sizes differ: {} vs {}",
            from_zz.len(),
            from_zy.len()
        )));
    }
    if let Some((i, (a, b))) = from_zz
        .iter()
        .zip(&from_zy)
        .enumerate()
        .find(|(_, (a, b))| (*a - *b).abs() > 1e-9)
    {
        return Err(Error::Validation(format!(
            "Z' marginals disagree at symbol {i}: {a} vs {b}"
        )));
    }
    let i_zz = mutual_information(j_zz);
    let i_zy = mutual_information(j_zy);
    let i_yy = mutual_information(&push_forward(j_zy, m, Axis::First)?);
    let literal = i_zz - i_zy;
    let surrogate = i_zz - i_yy;
    Ok(Theorem1Check {
        bound_holds: literal <= surrogate + INEQUALITY_SLACK,
        literal,
        surrogate,
        equality_holds: m
            .is_bijective()
            .then(|| (i_yy - i_zy).abs() <= INEQUALITY_SLACK),
    })
}

/// Dirichlet(1, …, 1) sample over `n` symbols (normalized unit exponentials).
pub fn dirichlet_ones<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    renormalize((0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect())
}

pub fn random_joint<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DiscreteJoint {
    DiscreteJoint::new(rows, cols, dirichlet_ones(rows * cols, rng)).expect("valid by construction")
}

/// Consistent pair of joints `(Z, Z')` and `(Z', Y)` sharing the `Z'` marginal.
///
/// Built from `p(z')`, `p(z | z')` and `p(y | z')`, each Dirichlet(1).
pub fn random_bottleneck_pair<R: Rng + ?Sized>(
    z: usize,
    z_prime: usize,
    y: usize,
    rng: &mut R,
) -> (DiscreteJoint, DiscreteJoint) {
    let pz_prime = dirichlet_ones(z_prime, rng);
    let mut zz = vec![0.0; z * z_prime];
    let mut zy = vec![0.0; z_prime * y];
    for (k, &pk) in pz_prime.iter().enumerate() {
        for (a, c) in dirichlet_ones(z, rng).into_iter().enumerate() {
            zz[a * z_prime + k] = pk * c;
        }
        for (b, c) in dirichlet_ones(y, rng).into_iter().enumerate() {
            zy[k * y + b] = pk * c;
        }
    }
    (
        DiscreteJoint::new(z, z_prime, renormalize(zz)).expect("valid by construction"),
        DiscreteJoint::new(z_prime, y, renormalize(zy)).expect("valid by construction"),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub trials: usize,
    pub passed: usize,
    pub records: Vec<TrialRecord>,
}

impl SweepReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.trials
    }

    pub fn failures(&self) -> impl Iterator<Item = &TrialRecord> {
        self.records.iter().filter(|r| !r.holds)
    }

    /// CSV with columns `trial,lhs_nats,rhs_nats,holds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,lhs_nats,rhs_nats,holds\n");
        for r in &self.records {
            out.push_str(&format!("{},{:e},{:e},{}\n", r.trial, r.lhs, r.rhs, r.holds));
        }
        out
    }
}

/// Alphabet sizes drawn per trial.
const SWEEP_ALPHABET: std::ops::RangeInclusive<usize> = 2..=8;

/// Random joints paired with random compressive maps; each record is `(I(Z₁,X₁), I(Z₁,Y₁))`.
pub fn lemma1_sweep(trials: usize, seed: u64) -> SweepReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<TrialRecord> = (0..trials)
        .map(|trial| {
            let rows = rng.random_range(SWEEP_ALPHABET);
            let cols = rng.random_range(SWEEP_ALPHABET);
            let j = random_joint(rows, cols, &mut rng);
            let m = AlphabetMap::random_compressive(cols, &mut rng);
            let c = check_lemma1(&j, &m).expect("compressive by construction");
            TrialRecord {
                trial,
                lhs: c.lhs,
                rhs: c.rhs,
                holds: c.holds,
            }
        })
        .collect();
    SweepReport {
        trials,
        passed: records.iter().filter(|r| r.holds).count(),
        records,
    }
}

/// Each trial draws a consistent `(Z,Z')`, `(Z',Y)` pair and checks the bound
/// under both a random compressive map and a random bijection. The record
/// carries `(literal, surrogate)` of the compressive check.
pub fn theorem1_sweep(trials: usize, seed: u64) -> SweepReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<TrialRecord> = (0..trials)
        .map(|trial| {
            let z = rng.random_range(SWEEP_ALPHABET);
            let zp = rng.random_range(SWEEP_ALPHABET);
            let y = rng.random_range(SWEEP_ALPHABET);
            let (j_zz, j_zy) = random_bottleneck_pair(z, zp, y, &mut rng);
            let compress = AlphabetMap::random_compressive(zp, &mut rng);
            let biject = AlphabetMap::random_bijection(zp, &mut rng);
            let c = check_theorem1(&j_zz, &j_zy, &compress).expect("consistent by construction");
            let b = check_theorem1(&j_zz, &j_zy, &biject).expect("consistent by construction");
            TrialRecord {
                trial,
                lhs: c.literal,
                rhs: c.surrogate,
                holds: c.passed() && b.passed(),
            }
        })
        .collect();
    SweepReport {
        trials,
        passed: records.iter().filter(|r| r.holds).count(),
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn entropy_examples() {
        assert!(close(entropy(&DiscreteDist::uniform(2).unwrap()), 2f64.ln(), 1e-15));
        assert_eq!(entropy(&DiscreteDist::new(vec![0.0, 1.0, 0.0]).unwrap()), 0.0);
        // −(0.25 ln 0.25 + 0.75 ln 0.75)
        assert!(close(entropy_of(&[0.25, 0.75]).unwrap(), 0.5623351446188083, 1e-12));
    }

    #[test]
    fn entropy_rejects_unnormalized() {
        assert!(matches!(entropy_of(&[0.5, 0.6]), Err(Error::Validation(_))));
        assert!(matches!(entropy_of(&[1.5, -0.5]), Err(Error::Validation(_))));
        assert!(DiscreteDist::new(vec![1.0 / 65.0; 65]).is_err());
    }

    #[test]
    fn mutual_information_examples() {
        let p = DiscreteDist::new(vec![0.2, 0.3, 0.5]).unwrap();
        let q = DiscreteDist::new(vec![0.6, 0.4]).unwrap();
        let prod = DiscreteJoint::product(&p, &q).unwrap();
        assert!(mutual_information(&prod) < 1e-15);

        let diag = DiscreteJoint::from_rows(&[[0.5, 0.0], [0.0, 0.5]]).unwrap();
        assert!(close(mutual_information(&diag), 2f64.ln(), 1e-15));

        let j = DiscreteJoint::from_rows(&[[0.4, 0.1], [0.1, 0.4]]).unwrap();
        assert!(close(mutual_information(&j), 0.19274475702175753, 1e-12));
    }

    #[test]
    fn joint_validation() {
        assert!(DiscreteJoint::from_rows(&[[0.5, 0.1], [0.1, 0.1]]).is_err());
        assert!(DiscreteJoint::new(2, 2, vec![0.25; 3]).is_err());
    }

    #[test]
    fn push_forward_examples() {
        let j = DiscreteJoint::from_rows(&[[0.1, 0.2, 0.05], [0.3, 0.15, 0.2]]).unwrap();
        assert_eq!(push_forward(&j, &AlphabetMap::identity(3), Axis::Second).unwrap(), j);

        let collapse = AlphabetMap::new(vec![0, 0, 0], 1).unwrap();
        let c = push_forward(&j, &collapse, Axis::Second).unwrap();
        assert_eq!(c.shape(), (2, 1));
        assert!(close(c.get(0, 0), 0.35, 1e-15));
        assert!(close(c.get(1, 0), 0.65, 1e-15));

        let merge = AlphabetMap::new(vec![0, 1, 1], 2).unwrap();
        let m = push_forward(&j, &merge, Axis::Second).unwrap();
        let expected = [[0.1, 0.25], [0.3, 0.35]];
        for (a, row) in expected.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                assert!(close(m.get(a, b), *v, 1e-15));
            }
        }
        assert!(push_forward(&j, &merge, Axis::First).is_err());
    }

    #[test]
    fn lemma1_examples() {
        let p = DiscreteDist::new(vec![0.3, 0.7]).unwrap();
        let q = DiscreteDist::new(vec![0.2, 0.3, 0.1, 0.4]).unwrap();
        let prod = DiscreteJoint::product(&p, &q).unwrap();
        let m = AlphabetMap::new(vec![0, 1, 0, 1], 2).unwrap();
        let c = check_lemma1(&prod, &m).unwrap();
        assert!(c.holds && c.lhs < 1e-15 && c.rhs < 1e-15);

        let third = 1.0 / 3.0;
        let diag = DiscreteJoint::from_rows(&[
            [third, 0.0, 0.0],
            [0.0, third, 0.0],
            [0.0, 0.0, third],
        ])
        .unwrap();
        let c = check_lemma1(&diag, &AlphabetMap::new(vec![0, 1, 1], 2).unwrap()).unwrap();
        assert!(close(c.lhs, 3f64.ln(), 1e-12));
        // H(1/3, 2/3) by enumeration
        assert!(close(c.rhs, 0.6365141682948128, 1e-12));
        assert!(c.holds);

        let err = check_lemma1(&diag, &AlphabetMap::identity(3)).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn theorem1_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (j_zz, j_zy) = random_bottleneck_pair(3, 4, 5, &mut rng);
        let bij = AlphabetMap::random_bijection(4, &mut rng);
        let c = check_theorem1(&j_zz, &j_zy, &bij).unwrap();
        assert!(close(c.literal, c.surrogate, 1e-12));
        assert_eq!(c.equality_holds, Some(true));

        // independent (Z', Y)
        let zp = j_zz.second_marginal();
        let y = DiscreteDist::new(vec![0.5, 0.25, 0.25]).unwrap();
        let indep = DiscreteJoint::product(&zp, &y).unwrap();
        let m = AlphabetMap::new(vec![0, 0, 1, 1], 2).unwrap();
        let c = check_theorem1(&j_zz, &indep, &m).unwrap();
        let i_zz = mutual_information(&j_zz);
        assert!(close(c.literal, i_zz, 1e-12) && close(c.surrogate, i_zz, 1e-12));
        assert!(c.bound_holds);

        let other = random_joint(4, 5, &mut rng);
        assert!(matches!(
            check_theorem1(&j_zz, &other, &m),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn sweeps_are_seeded() {
        assert_eq!(lemma1_sweep(20, 3), lemma1_sweep(20, 3));
        assert_ne!(lemma1_sweep(20, 3), lemma1_sweep(20, 4));
        let t = theorem1_sweep(50, SWEEP_SEED);
        assert!(t.all_passed());
        assert!(t.to_csv().starts_with("trial,lhs_nats,rhs_nats,holds\n"));
    }

    #[test]
    fn bijection_inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = AlphabetMap::random_bijection(6, &mut rng);
        let inv = m.inverse().unwrap();
        for s in 0..6 {
            assert_eq!(inv.apply(m.apply(s)), s);
        }
        assert!(AlphabetMap::new(vec![0, 0], 2).unwrap().inverse().is_none());
    }

    fn arb_joint() -> impl Strategy<Value = DiscreteJoint> {
        (1usize..=6, 1usize..=6, any::<u64>()).prop_map(|(r, c, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_joint(r, c, &mut rng)
        })
    }

    proptest! {
        #[test]
        fn mi_is_symmetric_and_nonnegative(j in arb_joint()) {
            let mi = mutual_information(&j);
            prop_assert!(mi >= 0.0);
            prop_assert!((mi - mutual_information(&j.transpose())).abs() <= 1e-12);
            let ha = entropy(&j.first_marginal());
            let hb = entropy(&j.second_marginal());
            prop_assert!(mi <= ha.min(hb) + 1e-12);
        }

        #[test]
        fn data_processing_holds(j in arb_joint(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, cols) = j.shape();
            let out = rng.random_range(1..=cols + 2);
            let targets = (0..cols).map(|_| rng.random_range(0..out)).collect();
            let m = AlphabetMap::new(targets, out).unwrap();
            let after = push_forward(&j, &m, Axis::Second).unwrap();
            prop_assert!(mutual_information(&after) <= mutual_information(&j) + 1e-12);
        }

        #[test]
        fn bijections_preserve_mi(j in arb_joint(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (rows, _) = j.shape();
            let m = AlphabetMap::random_bijection(rows, &mut rng);
            let after = push_forward(&j, &m, Axis::First).unwrap();
            prop_assert!((mutual_information(&after) - mutual_information(&j)).abs() <= 1e-12);
        }
    }
}
