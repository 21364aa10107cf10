//! OFF mesh reader and writer.
//!
//! Accepts the common malformation where the counts follow `OFF` on the
//! same line (`OFF4 4 0`). Polygons with more than three vertices are fan
//! triangulated. Never panics: every input yields a mesh or an [`OffError`].

use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::Point;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OffError {
    #[error("line {line}: missing OFF header")]
    MissingHeader { line: usize },

    #[error("line {line}: malformed counts: {detail}")]
    BadCounts { line: usize, detail: String },

    #[error("line {line}: '{token}' is not a finite number")]
    BadNumber { line: usize, token: String },

    #[error("line {line}: {detail}")]
    BadFace { line: usize, detail: String },

    #[error("line {line}: vertex index {index} out of range for {vertices} vertices")]
    IndexOutOfRange { line: usize, index: usize, vertices: usize },

    #[error("unexpected end of file: expected {expected} {what}, found {found}")]
    Truncated { what: &'static str, expected: usize, found: usize },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn triangle_area(&self, f: usize) -> f64 {
        let x = self.face_cross(f);
        0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
    }

    /// Unit normal of face `f` by its winding; `None` when degenerate.
    pub fn face_normal(&self, f: usize) -> Option<[f64; 3]> {
        let x = self.face_cross(f);
        let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        (n > 0.0 && n.is_finite()).then(|| x.map(|v| v / n))
    }

    fn face_cross(&self, f: usize) -> [f64; 3] {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
    }
}

/// Content lines with their 1-based line numbers; comments and blanks
/// dropped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("").trim();
        (!body.is_empty()).then_some((i + 1, body))
    })
}

fn parse_count(line: usize, tok: &str) -> Result<usize, OffError> {
    tok.parse::<usize>().map_err(|_| OffError::BadCounts { line, detail: format!("'{tok}' is not a non-negative integer") })
}

fn parse_real(line: usize, tok: &str) -> Result<f64, OffError> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(OffError::BadNumber { line, token: tok.chars().take(32).collect() }),
    }
}

pub fn parse_off(bytes: &[u8]) -> Result<Mesh, OffError> {
    let text = String::from_utf8_lossy(bytes);
    let mut lines = content_lines(&text);

    let Some((hline, header)) = lines.next() else {
        return Err(OffError::MissingHeader { line: 1 });
    };
    let Some(rest) = header.strip_prefix("OFF") else {
        return Err(OffError::MissingHeader { line: hline });
    };
    let (cline, counts) = if rest.trim().is_empty() {
        match lines.next() {
            Some(l) => l,
            None => return Err(OffError::BadCounts { line: hline + 1, detail: "missing counts".into() }),
        }
    } else {
        (hline, rest.trim())
    };
    let toks: Vec<&str> = counts.split_whitespace().collect();
    if !(2..=3).contains(&toks.len()) {
        return Err(OffError::BadCounts { line: cline, detail: format!("expected 'V F [E]', got {} fields", toks.len()) });
    }
    let nv = parse_count(cline, toks[0])?;
    let nf = parse_count(cline, toks[1])?;
    if let Some(e) = toks.get(2) {
        parse_count(cline, e)?;
    }

    // Counts are untrusted: grow as lines arrive instead of reserving.
    let mut vertices = Vec::new();
    while vertices.len() < nv {
        let Some((line, body)) = lines.next() else {
            return Err(OffError::Truncated { what: "vertices", expected: nv, found: vertices.len() });
        };
        let vals: Vec<&str> = body.split_whitespace().collect();
        if vals.len() < 3 {
            return Err(OffError::BadNumber { line, token: body.chars().take(32).collect() });
        }
        vertices.push([parse_real(line, vals[0])?, parse_real(line, vals[1])?, parse_real(line, vals[2])?]);
    }

    let mut faces = Vec::new();
    let mut seen = 0;
    while seen < nf {
        let Some((line, body)) = lines.next() else {
            return Err(OffError::Truncated { what: "faces", expected: nf, found: seen });
        };
        let toks: Vec<&str> = body.split_whitespace().collect();
        let arity = toks[0]
            .parse::<usize>()
            .map_err(|_| OffError::BadFace { line, detail: format!("'{}' is not a vertex count", toks[0]) })?;
        if arity < 3 {
            return Err(OffError::BadFace { line, detail: format!("polygon with {arity} vertices") });
        }
        if toks.len() < arity + 1 {
            return Err(OffError::BadFace { line, detail: format!("expected {arity} indices, found {}", toks.len() - 1) });
        }
        let mut idx = Vec::with_capacity(arity.min(toks.len()));
        for t in &toks[1..=arity] {
            let i = t.parse::<usize>().map_err(|_| OffError::BadFace { line, detail: format!("'{t}' is not a vertex index") })?;
            if i >= nv {
                return Err(OffError::IndexOutOfRange { line, index: i, vertices: nv });
            }
            idx.push(i);
        }
        for j in 1..arity - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
        seen += 1;
    }
    Ok(Mesh { vertices, faces })
}

/// Writes a triangle mesh; values use the shortest representation that
/// parses back exactly.
pub fn write_off(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "OFF\n{} {} 0", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA: &str = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";

    #[test]
    fn tetrahedron() {
        let m = parse_off(TETRA.as_bytes()).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.faces.len(), 4);
        assert_eq!(m.faces[3], [1, 2, 3]);
    }

    #[test]
    fn glued_header_parses_identically() {
        let glued = TETRA.replacen("OFF\n4 4 0", "OFF4 4 0", 1);
        assert_eq!(parse_off(glued.as_bytes()).unwrap(), parse_off(TETRA.as_bytes()).unwrap());
    }

    #[test]
    fn comments_quads_and_extra_columns() {
        let text = "# a comment\nOFF\n4 1 0\n0 0 0 255 0 0\n1 0 0\n1 1 0\n0 1 0 # trailing\n4 0 1 2 3 9 9 9\n";
        let m = parse_off(text.as_bytes()).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn structured_errors_carry_lines() {
        assert_eq!(parse_off(b""), Err(OffError::MissingHeader { line: 1 }));
        assert_eq!(parse_off(b"PLY\n"), Err(OffError::MissingHeader { line: 1 }));
        assert!(matches!(parse_off(b"OFF\nx 1 0\n"), Err(OffError::BadCounts { line: 2, .. })));
        assert!(matches!(parse_off(b"OFF\n1 0 0\n0 zero 0\n"), Err(OffError::BadNumber { line: 3, .. })));
        assert!(matches!(
            parse_off(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n"),
            Err(OffError::IndexOutOfRange { line: 6, index: 7, vertices: 3 })
        ));
        assert!(matches!(parse_off(b"OFF\n3 1 0\n0 0 0\n"), Err(OffError::Truncated { what: "vertices", .. })));
        assert!(matches!(parse_off(b"OFF\n1 1 0\n0 0 0\n2 0 0\n"), Err(OffError::BadFace { line: 4, .. })));
        assert!(matches!(parse_off(b"OFF\n1 0 0\nnan 0 0\n"), Err(OffError::BadNumber { .. })));
    }

    #[test]
    fn huge_counts_do_not_allocate() {
        let e = parse_off(b"OFF\n18446744073709551615 18446744073709551615 0\n0 0 0\n").unwrap_err();
        assert!(matches!(e, OffError::Truncated { found: 1, .. }));
    }
}
