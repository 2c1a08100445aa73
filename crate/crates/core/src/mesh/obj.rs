//! Wavefront OBJ geometry subset: `v` and `f` records only.

use std::fmt::Write as _;
use std::path::Path;

use super::{Face, TriangleMesh};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

pub fn load_obj<T: Scalar>(path: impl AsRef<Path>) -> Result<TriangleMesh<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

/// Parses OBJ text; `origin` is only used in error messages.
pub fn parse_obj<T: Scalar>(text: &str, origin: &Path) -> Result<TriangleMesh<T>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut vertices = Vec::new();
    let mut faces: Vec<(usize, Face)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [T::zero(); 3];
                for slot in &mut p {
                    let tok = it
                        .next()
                        .ok_or_else(|| err(line_no, "vertex needs 3 coordinates".into()))?;
                    let x: f64 = tok
                        .parse()
                        .map_err(|_| err(line_no, format!("bad coordinate {tok:?}")))?;
                    if !x.is_finite() {
                        return Err(err(line_no, format!("non-finite coordinate {tok:?}")));
                    }
                    *slot = lit(x);
                }
                vertices.push(p);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| err(line_no, format!("bad face index {tok:?}")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(err(line_no, "face index 0 is invalid".into()));
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(err(
                            line_no,
                            format!(
                                "face index {i} out of range ({} vertices so far)",
                                vertices.len()
                            ),
                        ));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(err(line_no, "face needs at least 3 vertices".into()));
                }
                for j in 1..idx.len() - 1 {
                    let f = [idx[0], idx[j], idx[j + 1]];
                    if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                        return Err(err(line_no, "degenerate face".into()));
                    }
                    faces.push((line_no, f));
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces.into_iter().map(|(_, f)| f).collect())
}

/// OBJ text with 6 decimal places and 1-based indices.
pub fn write_obj<T: Scalar>(mesh: &TriangleMesh<T>) -> String {
    let mut s = String::new();
    for v in mesh.vertices() {
        let p = v.map(|c| c.to_f64().unwrap_or(f64::NAN));
        let _ = writeln!(s, "v {:.6} {:.6} {:.6}", p[0], p[1], p[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn save_obj<T: Scalar>(mesh: &TriangleMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_obj(mesh)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<TriangleMesh<f64>> {
        parse_obj(text, Path::new("test.obj"))
    }

    #[test]
    fn single_triangle() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.vertices().len(), 3);
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn quad_fan_triangulation_and_ignored_records() {
        let text = "# comment\no thing\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nusemtl x\nf 1/1/1 2/2/1 3//1 4\n";
        let m = parse(text).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn negative_indices() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse("v 0 0 0\nv 1 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 4\n") {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 5);
                assert!(msg.contains("out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("v a b c\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn writer_format() {
        let m = parse("v 0.5 0 -1.25\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(
            write_obj(&m),
            "v 0.500000 0.000000 -1.250000\nv 1.000000 0.000000 0.000000\nv 0.000000 1.000000 0.000000\nf 1 2 3\n"
        );
    }
}
