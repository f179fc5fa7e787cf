//! Plain-text matrix files and the reference robot-arm bound matrices.
//!
//! File format: one matrix row per line, entries separated by whitespace,
//! `#` starts a comment. The reference matrices ship in `fixtures/reference/`
//! and are also compiled into the library.

use std::fs;
use std::path::Path;

use crate::analyzer::SystemBounds;
use crate::error::{Error, Result};
use crate::matrix::{Mat, SymMat};

/// Parses the plain-text matrix format.
pub fn parse_matrix_text(text: &str) -> Result<Mat> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let row = content
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Parse { line: ln + 1, msg: format!("`{t}` is not a number") })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: format!("row has {} entries, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no matrix rows".into() });
    }
    Mat::from_rows(&rows)
}

/// Writes a matrix in the plain-text format (shortest round-trip decimals).
pub fn format_matrix_text(m: &Mat) -> String {
    m.to_rows()
        .iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

pub fn read_matrix_file(path: &Path) -> Result<Mat> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    parse_matrix_text(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

/// The bound matrices F, W, S and M₁..M₄ of the robot-arm case study.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BoundMatrices {
    pub f: Mat,
    pub w: Mat,
    pub s: SymMat,
    pub m: Vec<Mat>,
}

impl BoundMatrices {
    /// The reference matrices, compiled in.
    pub fn reference() -> Self {
        let parse = |t: &str| parse_matrix_text(t).expect("bundled fixture parses");
        Self {
            f: parse(include_str!("../fixtures/reference/F.txt")),
            w: parse(include_str!("../fixtures/reference/W.txt")),
            s: SymMat::new(parse(include_str!("../fixtures/reference/S.txt"))).expect("S fixture is symmetric"),
            m: vec![
                parse(include_str!("../fixtures/reference/M1.txt")),
                parse(include_str!("../fixtures/reference/M2.txt")),
                parse(include_str!("../fixtures/reference/M3.txt")),
                parse(include_str!("../fixtures/reference/M4.txt")),
            ],
        }
    }

    /// Reads `F.txt`, `W.txt`, `S.txt` and `M1.txt`.. `M4.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let s = SymMat::new(read_matrix_file(&dir.join("S.txt"))?)?;
        Ok(Self {
            f: read_matrix_file(&dir.join("F.txt"))?,
            w: read_matrix_file(&dir.join("W.txt"))?,
            s,
            m: (1..=4).map(|k| read_matrix_file(&dir.join(format!("M{k}.txt")))).collect::<Result<_>>()?,
        })
    }

    /// Bounds with every delay bound equal to `r`.
    pub fn with_uniform_delay(&self, r: f64) -> Result<SystemBounds> {
        SystemBounds::new(self.f.clone(), self.w.clone(), self.s.clone(), self.m.clone(), vec![r; self.m.len()])
    }

    /// Bounds for control cycle `t`: each channel delay is below `2t`.
    pub fn for_control_cycle(&self, t: f64) -> Result<SystemBounds> {
        self.with_uniform_delay(2.0 * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_matrices_have_reference_entries() {
        let b = BoundMatrices::reference();
        assert_eq!(b.f.get(1, 0), 3.16);
        assert_eq!(b.w.get(1, 1), 0.2074);
        assert_eq!(b.s.get(3, 3), 0.8035);
        assert_eq!(b.m[0].to_rows()[1], vec![29.7955, 13.6, 0.0, 0.0]);
        assert_eq!(b.m[2].to_rows()[3], vec![0.0, 0.0, 308.842, 20.4]);
    }

    #[test]
    fn text_round_trip() {
        let m = Mat::from_rows(&[[1.5, -2.0], [0.1, 3e-7]]).unwrap();
        assert_eq!(parse_matrix_text(&format_matrix_text(&m)).unwrap(), m);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_matrix_text("1 2\n3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_matrix_text("# only a comment\n").is_err());
        assert!(parse_matrix_text("1 x\n").is_err());
    }

    #[test]
    fn directory_matches_compiled_copy() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/reference");
        assert_eq!(BoundMatrices::load_dir(&dir).unwrap(), BoundMatrices::reference());
    }
}
