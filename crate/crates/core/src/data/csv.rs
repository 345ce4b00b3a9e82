use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{LabeledSet, Labels, Origin};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Header `x0,…,x{n−1},label`; the label field is empty for unlabeled sets.
pub fn to_csv(set: &LabeledSet) -> Result<String> {
    let labels = match set.labels() {
        Labels::Hard(y) => Some(y.as_slice()),
        Labels::Unlabeled => None,
        Labels::Soft(_) => return Err(Error::usage("soft labels cannot be exported to CSV")),
    };
    let mut s = String::new();
    for j in 0..set.n_features() {
        let _ = write!(s, "x{j},");
    }
    s.push_str("label\n");
    for (i, row) in set.x().iter_rows().enumerate() {
        for v in row {
            let _ = write!(s, "{v},");
        }
        if let Some(y) = labels {
            let _ = write!(s, "{}", y[i]);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_csv(set: &LabeledSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_csv(set)?)?;
    Ok(())
}

/// Inverse of [`to_csv`]. Rows with an empty label field make the whole set unlabeled.
pub fn parse_csv(text: &str, origin: Origin) -> Result<LabeledSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::format("CSV is empty"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_label = cols.last() == Some(&"label");
    let n_features = cols.len() - usize::from(has_label);
    let mut data = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::format(format!(
                "line {}: {} fields, header has {}",
                lineno + 1,
                fields.len(),
                cols.len()
            )));
        }
        for f in &fields[..n_features] {
            let v: f64 = f.parse().map_err(|_| {
                Error::format(format!("line {}: '{f}' is not a number", lineno + 1))
            })?;
            data.push(v);
        }
        if has_label {
            let f = fields[n_features];
            labels.push(if f.is_empty() {
                None
            } else {
                Some(
                    f.parse().map_err(|_| {
                        Error::format(format!("line {}: bad label '{f}'", lineno + 1))
                    })?,
                )
            });
        }
    }
    let x = Matrix::new(
        labels.len().max(data.len() / n_features.max(1)),
        n_features,
        data,
    )?;
    match labels.iter().copied().collect::<Option<Vec<usize>>>() {
        Some(y) if has_label && !y.is_empty() => {
            let c = y.iter().max().map_or(0, |m| m + 1);
            LabeledSet::hard(x, y, c, origin)
        }
        _ => Ok(LabeledSet::unlabeled(x, origin)),
    }
}

pub fn read_csv(path: impl AsRef<Path>, origin: Origin) -> Result<LabeledSet> {
    parse_csv(&std::fs::read_to_string(path)?, origin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let x = Matrix::from_rows(&[vec![0.1, -2.5], vec![1e-17, 3.0]]).unwrap();
        let d = LabeledSet::hard(x.clone(), vec![1, 0], 2, Origin::InDistribution).unwrap();
        let text = to_csv(&d).unwrap();
        assert!(text.starts_with("x0,x1,label\n0.1,-2.5,1\n"));
        assert_eq!(parse_csv(&text, Origin::InDistribution).unwrap(), d);
        let u = LabeledSet::unlabeled(x, Origin::OutOfDistribution);
        assert_eq!(
            parse_csv(&to_csv(&u).unwrap(), Origin::OutOfDistribution).unwrap(),
            u
        );
    }

    #[test]
    fn bad_rows_are_format_errors() {
        assert!(matches!(
            parse_csv("x0,label\n1,2,3\n", Origin::InDistribution),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_csv("x0,label\nabc,1\n", Origin::InDistribution),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_csv("", Origin::InDistribution),
            Err(Error::Format(_))
        ));
    }
}
