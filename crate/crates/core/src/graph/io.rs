use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::SparseGraph;
use crate::error::{Result, SgpError};

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)
        .map_err(|e| SgpError::MissingArtifact(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, line: u64) -> Result<T> {
    let raw = record
        .get(idx)
        .ok_or_else(|| SgpError::InvalidInput(format!("line {line}: missing column {idx}")))?;
    raw.parse()
        .map_err(|_| SgpError::InvalidInput(format!("line {line}: cannot parse `{raw}`")))
}

/// Reads `src,dst,weight` lines (0-based, optional header).
///
/// When `num_nodes` is `None` the node count is one past the largest index.
pub fn read_edge_list(path: &Path, num_nodes: Option<usize>) -> Result<SparseGraph> {
    let mut edges = Vec::new();
    for (row, record) in reader(path)?.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(row as u64 + 1, |p| p.line());
        if row == 0 && record.get(0).is_some_and(|f| f.parse::<usize>().is_err()) {
            continue;
        }
        if record.len() != 3 {
            return Err(SgpError::InvalidInput(format!(
                "line {line}: expected `src,dst,weight`, got {} fields",
                record.len()
            )));
        }
        let src: usize = parse_field(&record, 0, line)?;
        let dst: usize = parse_field(&record, 1, line)?;
        let w: f64 = parse_field(&record, 2, line)?;
        edges.push((src, dst, w));
    }
    let inferred = edges.iter().map(|&(s, d, _)| s.max(d) + 1).max().unwrap_or(0);
    let n = match num_nodes {
        Some(n) if inferred > n => {
            return Err(SgpError::Index(format!(
                "edge list references node {} but the dataset has {n} nodes",
                inferred - 1
            )))
        }
        Some(n) => n,
        None => inferred,
    };
    SparseGraph::from_edges(n, edges)
}

pub fn write_edge_list(path: &Path, graph: &SparseGraph) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "src,dst,weight")?;
    for (i, j, w) in graph.edges() {
        writeln!(out, "{i},{j},{w}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a `node_id,lat,lon` file into an `N×2` matrix indexed by node id.
pub fn read_coordinates(path: &Path) -> Result<Array2<f64>> {
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for (row, record) in reader(path)?.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(row as u64 + 1, |p| p.line());
        if row == 0 && record.get(0).is_some_and(|f| f.parse::<usize>().is_err()) {
            continue;
        }
        rows.push((
            parse_field(&record, 0, line)?,
            parse_field(&record, 1, line)?,
            parse_field(&record, 2, line)?,
        ));
    }
    let n = rows.len();
    let mut coords = Array2::from_elem((n, 2), f64::NAN);
    for (id, lat, lon) in rows {
        if id >= n || !coords[[id, 0]].is_nan() {
            return Err(SgpError::Index(format!(
                "coordinate ids must be a permutation of 0..{n}, saw {id}"
            )));
        }
        coords[[id, 0]] = lat;
        coords[[id, 1]] = lon;
    }
    Ok(coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_list_round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.csv");
        let g = SparseGraph::from_edges(4, vec![(0, 1, 0.25), (3, 2, 1.5), (1, 0, 0.1)]).unwrap();
        write_edge_list(&path, &g).unwrap();
        assert_eq!(read_edge_list(&path, Some(4)).unwrap(), g);
        assert!(matches!(read_edge_list(&path, Some(3)), Err(SgpError::Index(_))));
    }

    #[test]
    fn edge_list_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.csv");
        std::fs::write(&path, "0,1,2.0\n1,0,2.0\n").unwrap();
        let g = read_edge_list(&path, None).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_edges(), 2);
        std::fs::write(&path, "0,1\n").unwrap();
        assert!(read_edge_list(&path, None).is_err());
    }

    #[test]
    fn coordinates_are_indexed_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coords.csv");
        std::fs::write(&path, "node_id,lat,lon\n1,3.0,4.0\n0,1.0,2.0\n").unwrap();
        let c = read_coordinates(&path).unwrap();
        assert_eq!(c, ndarray::array![[1.0, 2.0], [3.0, 4.0]]);
        std::fs::write(&path, "0,1.0,2.0\n0,1.0,2.0\n").unwrap();
        assert!(read_coordinates(&path).is_err());
    }
}
