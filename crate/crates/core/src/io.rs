//! Matrix and parameter file formats.
//!
//! Matrices come either as CSV of real entries, one row per line, or as a
//! JSON array of rows whose entries are `[re, im]` pairs. Parameter files are
//! JSON: a flat array of free angles, or an object with `q_blocks`, `alpha`
//! and optionally `beta` (omitted means tied).

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Deserialize;

use crate::ansatz::{AnsatzParams, AnsatzShape};
use crate::error::{Error, Result};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<Complex64>> {
    parse_matrix(&read_text(path)?)
}

/// Picks the format from the first non-blank character.
pub fn parse_matrix(text: &str) -> Result<DMatrix<Complex64>> {
    if text.trim_start().starts_with('[') {
        parse_structured(text)
    } else {
        parse_csv(text)
    }
}

fn from_rows(rows: Vec<Vec<Complex64>>) -> Result<DMatrix<Complex64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(Error::Input("matrix is empty".into()));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Input(format!(
            "row {i} has {} entries, expected {cols}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn parse_csv(text: &str) -> Result<DMatrix<Complex64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Input(format!("csv: {e}")))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field
                    .parse::<f64>()
                    .map(|x| Complex64::new(x, 0.0))
                    .map_err(|_| Error::Input(format!("entry ({i}, {j}) = {field:?} is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    from_rows(rows)
}

pub fn parse_structured(text: &str) -> Result<DMatrix<Complex64>> {
    let rows: Vec<Vec<[f64; 2]>> =
        serde_json::from_str(text).map_err(|e| Error::Input(format!("structured matrix: {e}")))?;
    from_rows(
        rows.into_iter()
            .map(|r| r.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
            .collect(),
    )
}

#[derive(Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum ParamsFile {
    Flat(Vec<f64>),
    Blocks {
        q_blocks: usize,
        alpha: Vec<f64>,
        #[serde(default)]
        beta: Option<Vec<f64>>,
    },
}

pub fn read_params(path: &Path, shape: AnsatzShape) -> Result<AnsatzParams> {
    parse_params(&read_text(path)?, shape)
}

/// A flat array is read against `shape`; the object form carries its own
/// block count and tie mode and only takes `n` from `shape`.
pub fn parse_params(text: &str, shape: AnsatzShape) -> Result<AnsatzParams> {
    let file: ParamsFile =
        serde_json::from_str(text).map_err(|e| Error::Input(format!("params file: {e}")))?;
    let params = match file {
        ParamsFile::Flat(free) => AnsatzParams::from_free(shape, &free),
        ParamsFile::Blocks { q_blocks, alpha, beta: Some(beta) } => {
            AnsatzParams::independent(shape.n, q_blocks, alpha, beta)
        }
        ParamsFile::Blocks { q_blocks, alpha, beta: None } => AnsatzParams::tied(shape.n, q_blocks, alpha),
    };
    let params = params.map_err(|e| Error::Input(format!("params file: {e}")))?;
    if params.alpha().iter().chain(params.beta()).any(|x| !x.is_finite()) {
        return Err(Error::Input("params file: non-finite angle".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::TieMode;

    #[test]
    fn csv_with_comments_and_spaces() {
        let m = parse_matrix("# a\n 1, 2.5\n-3 ,4e-1\n\n").unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m[(0, 1)], Complex64::new(2.5, 0.0));
        assert_eq!(m[(1, 0)], Complex64::new(-3.0, 0.0));
        assert_eq!(m[(1, 1)], Complex64::new(0.4, 0.0));
    }

    #[test]
    fn csv_rectangular() {
        let m = parse_csv("1,2,3\n4,5,6\n").unwrap();
        assert_eq!(m.shape(), (2, 3));
    }

    #[test]
    fn csv_errors() {
        for bad in ["", "1,2\n3\n", "1,x\n3,4\n", "\n\n"] {
            assert!(matches!(parse_matrix(bad), Err(Error::Input(_))), "{bad:?}");
        }
    }

    #[test]
    fn structured_pairs() {
        let m = parse_matrix("[[[1, 0], [0, 2]], [[0.5, -1], [0, 0]]]").unwrap();
        assert_eq!(m[(0, 1)], Complex64::new(0.0, 2.0));
        assert_eq!(m[(1, 0)], Complex64::new(0.5, -1.0));
        assert!(parse_matrix("[[[1, 0]], [[1, 0], [2, 0]]]").is_err());
        assert!(parse_matrix("[[[1, 0, 3]]]").is_err());
        assert!(parse_matrix("[[1, 2]]").is_err());
    }

    #[test]
    fn params_forms() {
        let shape = AnsatzShape::new(1, 2, TieMode::Independent);
        let p = parse_params("[0.1, 0.2, 0.3, 0.4]", shape).unwrap();
        assert_eq!(p.alpha(), &[0.1, 0.2]);
        assert_eq!(p.beta(), &[0.3, 0.4]);

        let p = parse_params(r#"{"q_blocks": 1, "alpha": [0.5], "beta": [0.25]}"#, shape).unwrap();
        assert_eq!(p.q_blocks(), 1);
        assert_eq!(p.beta(), &[0.25]);

        let p = parse_params(r#"{"q_blocks": 3, "alpha": [1, 2, 3]}"#, shape).unwrap();
        assert_eq!(p.tie_mode(), TieMode::Tied);
        assert_eq!(p.beta(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn params_errors() {
        let shape = AnsatzShape::new(1, 2, TieMode::Independent);
        for bad in ["[0.1, 0.2]", "{", r#"{"alpha": [1]}"#, r#"{"q_blocks": 2, "alpha": [1]}"#, "\"x\""] {
            assert!(matches!(parse_params(bad, shape), Err(Error::Input(_))), "{bad}");
        }
    }
}
