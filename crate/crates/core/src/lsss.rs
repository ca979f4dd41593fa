//! Linear secret sharing over a prime field.
//!
//! [`compile_lsss`] turns a threshold gate tree into a share-generating
//! matrix by Vandermonde insertion: a `t`-of-`n` gate with label `v` hands
//! child `i` the label `v + Σ_{j<t} i^j · e_{c+j}` over `t - 1` fresh columns,
//! i.e. the evaluations at `1..=n` of a degree `t - 1` polynomial whose
//! constant term is the parent's share. A row subset can reconstruct the
//! secret iff `e1 = (1, 0, …, 0)` lies in its span.

use std::collections::{BTreeMap, BTreeSet};

use ark_ff::PrimeField;
use rand::Rng;
use thiserror::Error;

use crate::policy::NamespacedFormula;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LsssError {
    #[error("gate with {children} children needs a field larger than its order")]
    FieldTooSmall { children: usize },
    #[error("invalid gate: threshold {threshold} over {children} children")]
    InvalidGate { threshold: usize, children: usize },
    #[error("malformed matrix: {0}")]
    MalformedMatrix(String),
}

/// Share-generating matrix with its row labeling `rho`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LsssMatrix<F> {
    rows: Vec<Vec<F>>,
    rho: Vec<String>,
    width: usize,
}

impl<F: PrimeField> LsssMatrix<F> {
    /// Builds a matrix from raw parts, checking its invariants.
    pub fn from_parts(rows: Vec<Vec<F>>, rho: Vec<String>) -> Result<Self, LsssError> {
        if rows.is_empty() {
            return Err(LsssError::MalformedMatrix("no rows".into()));
        }
        if rows.len() != rho.len() {
            return Err(LsssError::MalformedMatrix(format!(
                "{} rows but {} labels",
                rows.len(),
                rho.len()
            )));
        }
        let width = rows[0].len();
        if width == 0 {
            return Err(LsssError::MalformedMatrix("zero width".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(LsssError::MalformedMatrix(format!(
                    "row {i} has length {} instead of {width}",
                    row.len()
                )));
            }
            if row.iter().all(|x| x.is_zero()) {
                return Err(LsssError::MalformedMatrix(format!("row {i} is all zero")));
            }
        }
        Ok(LsssMatrix { rows, rho, width })
    }

    pub fn rows(&self) -> &[Vec<F>] {
        &self.rows
    }

    pub fn rho(&self) -> &[String] {
        &self.rho
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Inner product of row `x` with `v`.
    pub fn row_dot(&self, x: usize, v: &[F]) -> F {
        self.rows[x].iter().zip(v).map(|(a, b)| *a * b).sum()
    }
}

/// Coefficients `c_x` with `Σ c_x · A_x = e1`; rows with a zero coefficient
/// are omitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconstructionPlan<F> {
    pub coefficients: BTreeMap<usize, F>,
}

impl<F: PrimeField> ReconstructionPlan<F> {
    /// Applies the plan to a full share vector indexed by row.
    pub fn combine(&self, shares: &[F]) -> F {
        self.coefficients.iter().map(|(x, c)| *c * shares[*x]).sum()
    }
}

fn field_smaller_than<F: PrimeField>(n: usize) -> bool {
    if F::MODULUS_BIT_SIZE > 64 {
        return false;
    }
    let modulus = F::MODULUS.as_ref()[0];
    n as u64 >= modulus
}

pub fn compile_lsss<F: PrimeField>(f: &NamespacedFormula) -> Result<LsssMatrix<F>, LsssError> {
    let mut rows = Vec::new();
    let mut rho = Vec::new();
    let mut width = 1;
    insert(f, vec![F::one()], &mut width, &mut rows, &mut rho)?;
    for row in &mut rows {
        row.resize(width, F::zero());
    }
    Ok(LsssMatrix { rows, rho, width })
}

fn insert<F: PrimeField>(
    node: &NamespacedFormula,
    label: Vec<F>,
    width: &mut usize,
    rows: &mut Vec<Vec<F>>,
    rho: &mut Vec<String>,
) -> Result<(), LsssError> {
    match node {
        NamespacedFormula::Leaf(attr) => {
            rows.push(label);
            rho.push(attr.clone());
        }
        NamespacedFormula::Threshold {
            threshold,
            children,
        } => {
            let (t, n) = (*threshold, children.len());
            if t == 0 || t > n {
                return Err(LsssError::InvalidGate {
                    threshold: t,
                    children: n,
                });
            }
            if field_smaller_than::<F>(n) {
                return Err(LsssError::FieldTooSmall { children: n });
            }
            let base = *width;
            *width += t - 1;
            for (i, child) in children.iter().enumerate() {
                let point = F::from((i + 1) as u64);
                let mut child_label = label.clone();
                child_label.resize(base + t - 1, F::zero());
                let mut power = F::one();
                for j in 0..t - 1 {
                    power *= point;
                    child_label[base + j] += power;
                }
                insert(child, child_label, width, rows, rho)?;
            }
        }
    }
    Ok(())
}

/// Solves `Σ_{x ∈ S} c_x · A_x = e1` over the rows whose label is in `subset`.
/// Returns `None` when the subset is unqualified.
///
/// Gauss-Jordan elimination on the transposed system; pivots are taken from
/// the lowest-index candidate row and free variables are set to zero, so the
/// plan is a deterministic function of the matrix and the subset.
pub fn reconstruction_coefficients<F: PrimeField>(
    m: &LsssMatrix<F>,
    subset: &BTreeSet<String>,
) -> Option<ReconstructionPlan<F>> {
    let selected: Vec<usize> = (0..m.len())
        .filter(|&x| subset.contains(&m.rho[x]))
        .collect();
    if selected.is_empty() {
        return None;
    }
    let k = selected.len();
    // One equation per column of the matrix, one unknown per selected row,
    // last entry is the right-hand side (e1).
    let mut sys: Vec<Vec<F>> = (0..m.width)
        .map(|col| {
            let mut eq: Vec<F> = selected.iter().map(|&x| m.rows[x][col]).collect();
            eq.push(if col == 0 { F::one() } else { F::zero() });
            eq
        })
        .collect();

    let mut pivots = Vec::new();
    let mut next = 0;
    for var in 0..k {
        let Some(p) = (next..sys.len()).find(|&r| !sys[r][var].is_zero()) else {
            continue;
        };
        sys.swap(next, p);
        let inv = sys[next][var].inverse().expect("pivot is non-zero");
        for v in sys[next].iter_mut() {
            *v *= inv;
        }
        let pivot_row = sys[next].clone();
        for (r, eq) in sys.iter_mut().enumerate() {
            if r == next || eq[var].is_zero() {
                continue;
            }
            let factor = eq[var];
            for (a, b) in eq.iter_mut().zip(&pivot_row) {
                *a -= factor * b;
            }
        }
        pivots.push(var);
        next += 1;
        if next == sys.len() {
            break;
        }
    }
    if sys[next..].iter().any(|eq| !eq[k].is_zero()) {
        return None;
    }
    let coefficients = pivots
        .iter()
        .enumerate()
        .filter(|(r, _)| !sys[*r][k].is_zero())
        .map(|(r, &var)| (selected[var], sys[r][k]))
        .collect();
    Some(ReconstructionPlan { coefficients })
}

/// Shares `s` with a uniformly drawn vector `v = (s, v2, …)`: `share_x = A_x · v`.
pub fn share_secret<F: PrimeField, R: Rng + ?Sized>(
    m: &LsssMatrix<F>,
    s: F,
    rng: &mut R,
) -> Vec<F> {
    let mut v = Vec::with_capacity(m.width);
    v.push(s);
    v.extend((1..m.width).map(|_| F::rand(rng)));
    share_with_vector(m, &v)
}

pub fn share_with_vector<F: PrimeField>(m: &LsssMatrix<F>, v: &[F]) -> Vec<F> {
    (0..m.len()).map(|x| m.row_dot(x, v)).collect()
}

/// Decimal representation of a field element, used for matrix entries in
/// serialized ciphertexts.
pub fn field_to_decimal<F: PrimeField>(x: &F) -> String {
    x.into_bigint().to_string()
}

/// Parses a canonical decimal representative (no leading zeros, `< p`).
pub fn field_from_decimal<F: PrimeField>(s: &str) -> Option<F> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0'))
    {
        return None;
    }
    let x = F::from_str(s).ok()?;
    (field_to_decimal(&x) == s).then_some(x)
}

#[cfg(test)]
#[allow(non_local_definitions)]
mod tests {
    use super::*;
    use ark_bls12_381::Fr;
    use ark_ff::{Fp64, MontBackend, MontConfig};
    use ark_std::UniformRand;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[derive(MontConfig)]
    #[modulus = "7"]
    #[generator = "3"]
    pub struct F7Config;
    type F7 = Fp64<MontBackend<F7Config, 1>>;

    fn leaf(s: &str) -> NamespacedFormula {
        NamespacedFormula::Leaf(s.into())
    }

    fn gate(t: usize, children: Vec<NamespacedFormula>) -> NamespacedFormula {
        NamespacedFormula::Threshold {
            threshold: t,
            children,
        }
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn fr(rows: &[&[u64]]) -> Vec<Vec<Fr>> {
        rows.iter()
            .map(|r| r.iter().map(|&x| Fr::from(x)).collect())
            .collect()
    }

    #[test]
    fn and_gate_matrix() {
        let m: LsssMatrix<Fr> = compile_lsss(&gate(2, vec![leaf("x@A"), leaf("y@B")])).unwrap();
        assert_eq!(m.rows(), fr(&[&[1, 1], &[1, 2]]).as_slice());
        assert_eq!(m.rho(), ["x@A", "y@B"]);
        // 2·(1,1) − 1·(1,2) = (1,0)
        let plan = reconstruction_coefficients(&m, &set(&["x@A", "y@B"])).unwrap();
        let expected: BTreeMap<usize, Fr> = [(0, Fr::from(2u64)), (1, -Fr::from(1u64))].into();
        assert_eq!(plan.coefficients, expected);
    }

    #[test]
    fn or_gate_adds_no_columns() {
        let m: LsssMatrix<Fr> = compile_lsss(&gate(1, vec![leaf("x@A"), leaf("y@B")])).unwrap();
        assert_eq!(m.width(), 1);
        assert_eq!(m.rows(), fr(&[&[1], &[1]]).as_slice());
        let shares = share_secret(&m, Fr::from(42u64), &mut ChaCha20Rng::seed_from_u64(1));
        assert!(shares.iter().all(|s| *s == Fr::from(42u64)));
    }

    #[test]
    fn two_of_four_threshold() {
        let children = ["a@A", "a@B", "a@C", "a@D"].map(leaf).to_vec();
        let m: LsssMatrix<Fr> = compile_lsss(&gate(2, children)).unwrap();
        assert_eq!(
            m.rows(),
            fr(&[&[1, 1], &[1, 2], &[1, 3], &[1, 4]]).as_slice()
        );
        let attrs = ["a@A", "a@B", "a@C", "a@D"];
        for a in attrs {
            assert!(reconstruction_coefficients(&m, &set(&[a])).is_none());
        }
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(reconstruction_coefficients(&m, &set(&[attrs[i], attrs[j]])).is_some());
            }
        }
    }

    #[test]
    fn nested_width_counts_fresh_columns() {
        // 1 + (3-1) + (2-1) + 0
        let f = gate(
            3,
            vec![
                gate(2, vec![leaf("a@A"), leaf("b@A"), leaf("c@A")]),
                leaf("d@A"),
                gate(1, vec![leaf("e@A"), leaf("f@A")]),
            ],
        );
        let m: LsssMatrix<Fr> = compile_lsss(&f).unwrap();
        assert_eq!(m.width(), 4);
        assert_eq!(m.len(), 6);
        // first child of the root gets (1, 1, 1), then its own column 3 at points 1..3
        assert_eq!(m.rows()[0], fr(&[&[1, 1, 1, 1]])[0]);
        assert_eq!(m.rows()[2], fr(&[&[1, 1, 1, 3]])[0]);
        assert_eq!(m.rows()[3], fr(&[&[1, 2, 4, 0]])[0]);
        assert_eq!(m.rows()[5], fr(&[&[1, 3, 9, 0]])[0]);
    }

    #[test]
    fn empty_subset_is_unqualified() {
        let m: LsssMatrix<Fr> = compile_lsss(&gate(1, vec![leaf("x@A"), leaf("y@B")])).unwrap();
        assert!(reconstruction_coefficients(&m, &BTreeSet::new()).is_none());
    }

    #[test]
    fn zero_secret_with_zero_vector() {
        let m: LsssMatrix<Fr> = compile_lsss(&gate(2, vec![leaf("x@A"), leaf("y@B")])).unwrap();
        assert_eq!(
            share_with_vector(&m, &[Fr::from(0u64); 2]),
            vec![Fr::from(0u64); 2]
        );
    }

    #[test]
    fn field_too_small() {
        let children = (0..7).map(|i| leaf(&format!("a{i}@A"))).collect();
        assert_eq!(
            compile_lsss::<F7>(&gate(2, children)),
            Err(LsssError::FieldTooSmall { children: 7 })
        );
        let children = (0..6).map(|i| leaf(&format!("a{i}@A"))).collect();
        assert!(compile_lsss::<F7>(&gate(2, children)).is_ok());
    }

    #[test]
    fn invalid_gates_are_rejected() {
        assert!(matches!(
            compile_lsss::<Fr>(&gate(3, vec![leaf("a@A"), leaf("b@A")])),
            Err(LsssError::InvalidGate {
                threshold: 3,
                children: 2
            })
        ));
        assert!(compile_lsss::<Fr>(&gate(0, vec![leaf("a@A")])).is_err());
    }

    #[test]
    fn repeated_attributes_are_allowed() {
        let f = gate(
            2,
            vec![leaf("a@A"), gate(1, vec![leaf("a@A"), leaf("b@A")])],
        );
        let m: LsssMatrix<Fr> = compile_lsss(&f).unwrap();
        assert!(reconstruction_coefficients(&m, &set(&["a@A"])).is_some());
    }

    #[test]
    fn from_parts_checks_invariants() {
        assert!(LsssMatrix::<Fr>::from_parts(vec![], vec![]).is_err());
        assert!(
            LsssMatrix::from_parts(fr(&[&[1, 0], &[1]]), vec!["a".into(), "b".into()]).is_err()
        );
        assert!(LsssMatrix::from_parts(fr(&[&[0, 0]]), vec!["a".into()]).is_err());
        assert!(LsssMatrix::from_parts(fr(&[&[1, 0]]), vec![]).is_err());
        assert!(LsssMatrix::from_parts(fr(&[&[1, 5]]), vec!["a".into()]).is_ok());
    }

    #[test]
    fn decimal_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = Fr::rand(&mut rng);
            assert_eq!(field_from_decimal::<Fr>(&field_to_decimal(&x)), Some(x));
        }
        assert_eq!(field_to_decimal(&Fr::from(0u64)), "0");
        assert_eq!(field_to_decimal(&-Fr::from(1u64)).len(), 77);
        assert_eq!(field_from_decimal::<Fr>("007"), None);
        assert_eq!(field_from_decimal::<Fr>("12a"), None);
        // p itself is not a reduced representative
        let p = field_to_decimal(&-Fr::from(1u64));
        let p_plus = format!(
            "{}{}",
            &p[..p.len() - 1],
            (p.as_bytes()[p.len() - 1] - b'0' + 1)
        );
        assert_eq!(field_from_decimal::<Fr>(&p_plus), None);
    }
}
