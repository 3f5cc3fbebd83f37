//! `x0,...,x{d-1},kind,n0,...,n{d-1}` node set files.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{Domain, NodeKind, NodeSet, NodeSetError};
use crate::scalar::Real;

pub fn write_nodes_csv<T: Real, W: Write>(
    nodes: &NodeSet<T>,
    mut w: W,
) -> Result<(), NodeSetError> {
    let d = nodes.dim();
    let mut line = String::new();
    let cols: Vec<String> = (0..d)
        .map(|a| format!("x{a}"))
        .chain(std::iter::once("kind".to_string()))
        .chain((0..d).map(|a| format!("n{a}")))
        .collect();
    writeln!(w, "{}", cols.join(","))?;
    for i in 0..nodes.len() {
        line.clear();
        for &x in nodes.point(i) {
            write!(line, "{:.16e},", x.as_f64()).unwrap();
        }
        match nodes.normal(i) {
            None => {
                line.push('I');
                for _ in 0..d {
                    line.push(',');
                }
            }
            Some(n) => {
                line.push('B');
                for &v in n {
                    write!(line, ",{:.16e}", v.as_f64()).unwrap();
                }
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads a node set written by [`write_nodes_csv`]. Normals and boundary
/// conditions are recomputed from `domain`; the file's normals are only
/// checked for shape.
pub fn read_nodes_csv<T: Real, R: BufRead>(
    domain: Domain<T>,
    h: T,
    r: R,
) -> Result<NodeSet<T>, NodeSetError> {
    let d = domain.dim();
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| NodeSetError::Csv("empty file".into()))??;
    if header.split(',').count() != 2 * d + 1 {
        return Err(NodeSetError::Csv(format!(
            "header `{header}` does not match dimension {d}"
        )));
    }
    let mut coords = Vec::new();
    let mut kinds = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 * d + 1 {
            return Err(NodeSetError::Csv(format!(
                "line {}: expected {} fields",
                lineno + 2,
                2 * d + 1
            )));
        }
        for f in &fields[..d] {
            let v: f64 = f.trim().parse().map_err(|_| {
                NodeSetError::Csv(format!("line {}: bad coordinate `{f}`", lineno + 2))
            })?;
            coords.push(T::lit(v));
        }
        kinds.push(match fields[d].trim() {
            "I" => NodeKind::Interior,
            "B" => NodeKind::Boundary,
            other => {
                return Err(NodeSetError::Csv(format!(
                    "line {}: unknown kind `{other}`",
                    lineno + 2
                )))
            }
        });
    }
    NodeSet::from_parts(domain, h, coords, kinds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let domain = Domain::<f64>::mixed(2).unwrap();
        let nodes = NodeSet::generate(domain, 0.1, 3).unwrap();
        let mut buf = Vec::new();
        write_nodes_csv(&nodes, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,kind,n0,n1\n"));
        let back = read_nodes_csv(domain, 0.1, buf.as_slice()).unwrap();
        assert_eq!(back, nodes);
    }

    #[test]
    fn rejects_unknown_kind() {
        let domain = Domain::<f64>::unit(1).unwrap();
        let err = read_nodes_csv(domain, 0.5, "x0,kind,n0\n0.5,Q,\n".as_bytes()).unwrap_err();
        assert!(matches!(err, NodeSetError::Csv(_)));
    }
}
