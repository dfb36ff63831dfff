//! Two-pass agreement: exact match, Cohen's κ and agreement matrices.

use serde::{Deserialize, Serialize};

use super::{Axis, LabelStore};
use crate::corpus::WindowKey;
use crate::error::{Error, Result};

/// Label indices of two passes aligned by window key.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedLabels {
    pub axis: Axis,
    pub keys: Vec<WindowKey>,
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// Align two passes; both must label exactly the same key set.
pub fn pair_passes(store: &LabelStore, pass1: u32, pass2: u32, axis: Axis) -> Result<PairedLabels> {
    let a = store.pass(pass1);
    let b = store.pass(pass2);
    let ka: Vec<&WindowKey> = a.iter().map(|x| &x.key).collect();
    let kb: Vec<&WindowKey> = b.iter().map(|x| &x.key).collect();
    if ka != kb {
        let only_a = ka.iter().filter(|k| !kb.contains(k)).count();
        let only_b = kb.iter().filter(|k| !ka.contains(k)).count();
        return Err(Error::invalid(format!(
            "passes {pass1} and {pass2} cover different windows ({only_a} only in {pass1}, {only_b} only in {pass2})"
        )));
    }
    Ok(PairedLabels {
        axis,
        keys: ka.into_iter().cloned().collect(),
        first: a.iter().map(|x| x.label_index(axis)).collect(),
        second: b.iter().map(|x| x.label_index(axis)).collect(),
    })
}

fn check_pair(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    if a.is_empty() {
        return Err(Error::invalid("agreement over an empty item set"));
    }
    Ok(())
}

/// Fraction of items on which both passes chose the same label.
pub fn exact_agreement(a: &[usize], b: &[usize]) -> Result<f64> {
    check_pair(a, b)?;
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// Cohen's κ = (p_o − p_e)/(1 − p_e), with p_e from each pass' own marginals.
///
/// When chance agreement is certain (p_e = 1) the ratio is undefined; κ is
/// reported as 1 if the passes also agree everywhere and is an error otherwise.
pub fn cohens_kappa(a: &[usize], b: &[usize], n_classes: usize) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let po = exact_agreement(a, b)?;
    let mut ma = vec![0usize; n_classes];
    let mut mb = vec![0usize; n_classes];
    for (&x, &y) in a.iter().zip(b) {
        if x >= n_classes || y >= n_classes {
            return Err(Error::invalid(format!("label index beyond {n_classes} classes")));
        }
        ma[x] += 1;
        mb[y] += 1;
    }
    let pe: f64 = ma.iter().zip(&mb).map(|(&x, &y)| (x as f64 / n) * (y as f64 / n)).sum();
    if (1.0 - pe).abs() < 1e-12 {
        return if po == 1.0 { Ok(1.0) } else { Err(Error::Undefined("kappa with chance agreement 1".into())) };
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Fixed-shape square count matrix over one vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub labels: Vec<String>,
    /// `counts[i][j]`: row label `i` (first pass / truth), column `j`.
    pub counts: Vec<Vec<u64>>,
}

impl CountMatrix {
    pub fn tally(labels: Vec<String>, rows: &[usize], cols: &[usize]) -> Result<Self> {
        let n = labels.len();
        if rows.len() != cols.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), actual: cols.len() });
        }
        let mut counts = vec![vec![0u64; n]; n];
        for (&r, &c) in rows.iter().zip(cols) {
            if r >= n || c >= n {
                return Err(Error::invalid(format!("label index beyond {n} classes")));
            }
            counts[r][c] += 1;
        }
        Ok(Self { labels, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Rows divided by their sums; all-zero rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect()
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let n = self.counts.len();
        let counts = (0..n).map(|i| (0..n).map(|j| self.counts[j][i]).collect()).collect();
        Self { labels: self.labels.clone(), counts }
    }

    pub fn to_csv(&self, normalized: bool) -> String {
        let mut s = String::from("label");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        let norm = self.row_normalized();
        for ((l, counts), shares) in self.labels.iter().zip(&self.counts).zip(&norm) {
            s.push_str(l);
            for (c, share) in counts.iter().zip(shares) {
                if normalized {
                    s.push_str(&format!(",{share:.4}"));
                } else {
                    s.push_str(&format!(",{c}"));
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Cell (i, j) counts items with pass-1 label i and pass-2 label j.
pub fn agreement_matrix(paired: &PairedLabels, row_normalize: bool) -> (CountMatrix, Option<Vec<Vec<f64>>>) {
    let m = CountMatrix::tally(
        paired.axis.vocabulary().into_iter().map(String::from).collect(),
        &paired.first,
        &paired.second,
    )
    .expect("paired labels are in vocabulary");
    let norm = row_normalize.then(|| m.row_normalized());
    (m, norm)
}

#[derive(Debug, Clone, Serialize)]
pub struct AxisAgreement {
    pub axis: Axis,
    pub n_items: usize,
    pub exact_agreement: f64,
    /// `None` when κ is undefined for the pair.
    pub kappa: Option<f64>,
    pub matrix: CountMatrix,
    pub matrix_row_normalized: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgreementSummary {
    pub pass1: u32,
    pub pass2: u32,
    pub context: AxisAgreement,
    pub activity: AxisAgreement,
}

impl AgreementSummary {
    pub fn compute(store: &LabelStore, pass1: u32, pass2: u32) -> Result<Self> {
        let axis = |axis: Axis| -> Result<AxisAgreement> {
            let p = pair_passes(store, pass1, pass2, axis)?;
            let (matrix, norm) = agreement_matrix(&p, true);
            Ok(AxisAgreement {
                axis,
                n_items: p.first.len(),
                exact_agreement: exact_agreement(&p.first, &p.second)?,
                kappa: cohens_kappa(&p.first, &p.second, axis.n_labels()).ok(),
                matrix_row_normalized: norm.expect("requested"),
                matrix,
            })
        };
        Ok(Self { pass1, pass2, context: axis(Axis::Context)?, activity: axis(Axis::Activity)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_agreement_examples() {
        assert_eq!(exact_agreement(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(exact_agreement(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert_eq!(exact_agreement(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert!(exact_agreement(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn kappa_examples() {
        assert!((cohens_kappa(&[0, 1, 0, 1], &[0, 1, 0, 1], 4).unwrap() - 1.0).abs() < 1e-12);
        // p_o = 0.75, p_e = 0.5·0.25 + 0.5·0.75 = 0.5
        assert!((cohens_kappa(&[0, 0, 1, 1], &[0, 1, 1, 1], 4).unwrap() - 0.5).abs() < 1e-12);
        assert!(cohens_kappa(&[0, 0, 1, 1], &[0, 0, 0, 0], 4).unwrap().abs() < 1e-12);
        assert_eq!(cohens_kappa(&[2, 2], &[2, 2], 4).unwrap(), 1.0);
        assert!(cohens_kappa(&[2, 3], &[2, 2], 4).is_ok());
    }

    #[test]
    fn matrix_examples() {
        let p = PairedLabels { axis: Axis::Context, keys: vec![], first: vec![0, 0, 1, 1], second: vec![0, 1, 1, 1] };
        let (m, norm) = agreement_matrix(&p, true);
        let norm = norm.unwrap();
        assert_eq!(m.counts[0], vec![1, 1, 0, 0]);
        assert_eq!(norm[0], vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(norm[1], vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(norm[3], vec![0.0; 4], "unused label keeps an all-zero row");
    }

    proptest! {
        #[test]
        fn kappa_properties(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let acc = exact_agreement(&a, &b).unwrap();
            if let Ok(k) = cohens_kappa(&a, &b, 4) {
                prop_assert!(k <= acc + 1e-12);
                let swapped = cohens_kappa(&b, &a, 4).unwrap();
                prop_assert!((k - swapped).abs() < 1e-12);
            }
            let m = CountMatrix::tally(vec!["a".into(), "b".into(), "c".into(), "d".into()], &a, &b).unwrap();
            let mt = CountMatrix::tally(m.labels.clone(), &b, &a).unwrap();
            prop_assert_eq!(m.transpose(), mt);
            for row in m.row_normalized() {
                let s: f64 = row.iter().sum();
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn kappa_one_iff_identical(a in proptest::collection::vec(0usize..4, 2..40)) {
            let distinct = a.iter().collect::<std::collections::BTreeSet<_>>().len();
            prop_assume!(distinct >= 2);
            prop_assert!((cohens_kappa(&a, &a, 4).unwrap() - 1.0).abs() < 1e-12);
            let mut b = a.clone();
            b[0] = (b[0] + 1) % 4;
            prop_assert!(cohens_kappa(&a, &b, 4).map_or(true, |k| k < 1.0 - 1e-12));
        }
    }
}
