use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    InDistribution,
    OutOfDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Class indices in `[0, n_classes)`.
    Hard(Vec<usize>),
    /// One probability vector per row.
    Soft(Matrix),
    Unlabeled,
}

/// Feature matrix plus labels and an in/out-of-distribution tag.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    x: Matrix,
    labels: Labels,
    origin: Origin,
    n_classes: usize,
}

impl LabeledSet {
    pub fn hard(x: Matrix, labels: Vec<usize>, n_classes: usize, origin: Origin) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::config(format!(
                "{} labels for {} rows",
                labels.len(),
                x.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::config(format!(
                "label {bad} is not below the class count {n_classes}"
            )));
        }
        Ok(LabeledSet {
            x,
            labels: Labels::Hard(labels),
            origin,
            n_classes,
        })
    }

    pub fn soft(x: Matrix, y: Matrix, origin: Origin) -> Result<Self> {
        if y.rows() != x.rows() {
            return Err(Error::config(format!(
                "{} soft labels for {} rows",
                y.rows(),
                x.rows()
            )));
        }
        for (i, row) in y.iter_rows().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&v| v < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::domain(format!(
                    "soft label row {i} is not a probability vector"
                )));
            }
        }
        let n_classes = y.cols();
        Ok(LabeledSet {
            x,
            labels: Labels::Soft(y),
            origin,
            n_classes,
        })
    }

    pub fn unlabeled(x: Matrix, origin: Origin) -> Self {
        LabeledSet {
            x,
            labels: Labels::Unlabeled,
            origin,
            n_classes: 0,
        }
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn hard_labels(&self) -> Option<&[usize]> {
        match &self.labels {
            Labels::Hard(y) => Some(y),
            _ => None,
        }
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    /// Class count the labels refer to (0 for unlabeled sets).
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    /// Rows `indices`, in order, with their labels.
    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        let labels = match &self.labels {
            Labels::Hard(y) => Labels::Hard(indices.iter().map(|&i| y[i]).collect()),
            Labels::Soft(y) => Labels::Soft(y.select_rows(indices)),
            Labels::Unlabeled => Labels::Unlabeled,
        };
        LabeledSet {
            x: self.x.select_rows(indices),
            labels,
            origin: self.origin,
            n_classes: self.n_classes,
        }
    }

    /// First `n` rows (all of them when `n ≥ len`).
    pub fn truncate(&self, n: usize) -> LabeledSet {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Same labels and origin over a replacement feature matrix (e.g. penultimate features).
    pub fn with_x(&self, x: Matrix) -> Result<LabeledSet> {
        if x.rows() != self.len() {
            return Err(Error::config(format!(
                "{} feature rows for {} examples",
                x.rows(),
                self.len()
            )));
        }
        Ok(LabeledSet {
            x,
            labels: self.labels.clone(),
            origin: self.origin,
            n_classes: self.n_classes,
        })
    }

    /// Drops the labels, keeping features and origin.
    pub fn without_labels(&self) -> LabeledSet {
        LabeledSet::unlabeled(self.x.clone(), self.origin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_are_checked() {
        let x = Matrix::zeros(2, 3);
        assert!(LabeledSet::hard(x.clone(), vec![0, 4], 4, Origin::InDistribution).is_err());
        assert!(LabeledSet::hard(x.clone(), vec![0], 4, Origin::InDistribution).is_err());
        let bad = Matrix::from_rows(&[vec![0.5, 0.6], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            LabeledSet::soft(x.clone(), bad, Origin::InDistribution),
            Err(Error::Domain(_))
        ));
        let good = Matrix::from_rows(&[vec![0.25, 0.75], vec![0.5, 0.5]]).unwrap();
        let s = LabeledSet::soft(x, good, Origin::OutOfDistribution).unwrap();
        assert_eq!(s.n_classes(), 2);
    }

    #[test]
    fn subset_keeps_labels_aligned() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let d = LabeledSet::hard(x, vec![2, 0, 1], 3, Origin::InDistribution).unwrap();
        let s = d.subset(&[2, 0]);
        assert_eq!(s.x().data(), &[2.0, 0.0]);
        assert_eq!(s.hard_labels().unwrap(), &[1, 2]);
    }
}
