//! Wavefront OBJ subset: `v`, `vn` and triangulated `f` records.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use car_core::mesh::TriMesh;
use car_core::Vec3;

use crate::error::{CarError, IoContext, Result};

/// OBJ text for `mesh`. Vertex normals are written when present, and faces
/// then use the `a//a` form.
pub fn to_obj_string(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 48 + mesh.faces.len() * 24);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    let with_normals = mesh
        .normals
        .as_ref()
        .is_some_and(|n| n.len() == mesh.vertices.len());
    if with_normals {
        for n in mesh.normals.as_ref().unwrap() {
            let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
        }
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| i + 1);
        if with_normals {
            let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
        } else {
            let _ = writeln!(s, "f {a} {b} {c}");
        }
    }
    s
}

pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<()> {
    fs::write(path, to_obj_string(mesh)).at(path)
}

/// Parses OBJ text. Polygons are fan-triangulated; texture coordinates and
/// other records are ignored. Normals are kept only when every vertex has
/// exactly one.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    let bad = |line: usize, msg: &str| CarError::format(path, format!("line {}: {msg}", line + 1));
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") | Some("vn") => {
                let mut c = [0.0; 3];
                for x in &mut c {
                    *x = it
                        .next()
                        .and_then(|t| t.parse::<f64>().ok())
                        .ok_or_else(|| bad(ln, "expected three numbers"))?;
                }
                let p = Vec3::from_array(c);
                if !p.is_finite() {
                    return Err(bad(ln, "non-finite coordinate"));
                }
                if line.starts_with("vn") {
                    normals.push(p);
                } else {
                    vertices.push(p);
                }
            }
            Some("f") => {
                let mut idx = Vec::with_capacity(4);
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| bad(ln, "bad face index"))?;
                    let n = vertices.len() as i64;
                    let i = if i < 0 { n + i } else { i - 1 };
                    if i < 0 || i >= n {
                        return Err(bad(ln, "face index out of range"));
                    }
                    idx.push(i as u32);
                }
                if idx.len() < 3 {
                    return Err(bad(ln, "face with fewer than three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let mut mesh = TriMesh::new(vertices, faces);
    if !normals.is_empty() && normals.len() == mesh.vertices.len() {
        mesh.normals = Some(normals);
    }
    Ok(mesh)
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = fs::read_to_string(path).at(path)?;
    parse_obj(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let m = TriMesh::uv_sphere(Vec3::new(0.1, -0.3, 1e-7), 0.77, 5, 7).with_vertex_normals();
        let back = parse_obj(&to_obj_string(&m), Path::new("mem")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn quads_are_fanned_and_junk_skipped() {
        let text = "# c\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1 4/1\n";
        let m = parse_obj(text, Path::new("mem")).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn bad_index_is_reported() {
        let err = parse_obj("v 0 0 0\nf 1 2 3\n", Path::new("x.obj")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
