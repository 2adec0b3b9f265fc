//! Text embedding files: one entry per line, `token v1 v2 ... vd`,
//! space-separated decimal floats. The dimension is inferred from the first
//! line; duplicate tokens keep their first occurrence with a warning.

use std::path::Path;

use crate::error::{Error, Result};
use crate::text::EmbeddingTable;

pub fn parse_embeddings(content: &str, path: &str) -> Result<EmbeddingTable> {
    let mut entries: Vec<(String, Vec<f32>)> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut seen = std::collections::HashSet::new();
    for (line_no, line) in content.lines().enumerate() {
        let line_no = line_no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields
            .next()
            .ok_or_else(|| Error::malformed_line(path, line_no, "empty entry"))?
            .to_string();
        let mut vector = Vec::new();
        for field in fields {
            let value: f32 = field.parse().map_err(|_| {
                Error::malformed_line(path, line_no, format!("non-numeric field {field:?}"))
            })?;
            if !value.is_finite() {
                return Err(Error::malformed_line(path, line_no, "non-finite value"));
            }
            vector.push(value);
        }
        if vector.is_empty() {
            return Err(Error::malformed_line(path, line_no, "no vector values"));
        }
        match dim {
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(Error::malformed_line(
                    path,
                    line_no,
                    format!("dimension {} differs from table dimension {d}", vector.len()),
                ))
            }
            _ => {}
        }
        if !seen.insert(token.clone()) {
            eprintln!("warning: {path}:{line_no}: duplicate token {token:?}, keeping first");
        }
        entries.push((token, vector));
    }
    if entries.is_empty() {
        return Err(Error::bad_format(path, "no embedding entries"));
    }
    EmbeddingTable::new(entries)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let bytes = std::fs::read(path)?;
    let content = String::from_utf8(bytes)
        .map_err(|_| Error::bad_format(path.display().to_string(), "not valid UTF-8"))?;
    parse_embeddings(&content, &path.display().to_string())
}

/// Writes a table-shaped list of entries in the text layout. Used by the toy
/// generator; float formatting round-trips exactly.
pub fn save_embeddings(path: &Path, entries: &[(String, Vec<f32>)]) -> Result<()> {
    let mut out = String::new();
    for (token, vector) in entries {
        out.push_str(token);
        for v in vector {
            out.push(' ');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_line_file_infers_dimension() {
        let table = parse_embeddings("cat 1 2 3 4\ndog 5 6 7 8\n", "mem").unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.dim(), 4);
        assert_eq!(table.row("dog").unwrap(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn non_numeric_field_names_the_line() {
        let err = parse_embeddings("cat 1 2\ndog x 2\n", "mem").unwrap_err();
        match err {
            Error::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn inconsistent_dimension_is_rejected() {
        let err = parse_embeddings("cat 1 2\ndog 1 2 3\n", "mem").unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn duplicate_token_keeps_first() {
        let table = parse_embeddings("cat 1 2\ncat 9 9\n", "mem").unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.row("cat").unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let entries = vec![
            ("alpha".to_string(), vec![0.125f32, -3.5, 1.0e-7]),
            ("beta".to_string(), vec![2.0, 0.0, -0.0078125]),
        ];
        save_embeddings(&path, &entries).unwrap();
        let table = load_embeddings(&path).unwrap();
        assert_eq!(table.row("alpha").unwrap(), entries[0].1.as_slice());
        assert_eq!(table.row("beta").unwrap(), entries[1].1.as_slice());
    }
}
