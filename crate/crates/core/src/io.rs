//! CSV ingestion of node/edge tables and writers for result artifacts.
//!
//! Nodes: header `id,y,d,x1..xk,z1..zm`. Edges: header `src,dst` referring
//! to node ids. Floats are written in shortest round-trip form.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::effects::{EffectInputs, MerRow};
use crate::error::{Error, Result};
use crate::exposure::ExposureLabel;
use crate::gmm::GmmResult;
use crate::graph::Graph;
use crate::harness::McSummary;
use crate::moments::Layout;

/// A dataset ingested from disk with its network and original node ids.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub graph: Graph,
    pub data: Dataset,
    pub ids: Vec<String>,
}

fn parse_err(path: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        message: message.into(),
    }
}

fn parse_f64(path: &str, row: usize, col: &str, s: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| {
        parse_err(
            path,
            format!("row {row}: column {col}: cannot parse {s:?} as a number"),
        )
    })?;
    if !v.is_finite() {
        return Err(parse_err(
            path,
            format!("row {row}: column {col}: non-finite value"),
        ));
    }
    Ok(v)
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r)
}

/// Column layout of a nodes header: indices of `x*` and `z*` columns.
fn node_columns(path: &str, header: &csv::StringRecord) -> Result<(Vec<usize>, Vec<usize>)> {
    let expect = |i: usize, name: &str| -> Result<()> {
        match header.get(i) {
            Some(h) if h == name => Ok(()),
            other => Err(parse_err(
                path,
                format!(
                    "header column {} must be {name:?}, found {:?}",
                    i + 1,
                    other.unwrap_or("")
                ),
            )),
        }
    };
    expect(0, "id")?;
    expect(1, "y")?;
    expect(2, "d")?;
    let mut xs = Vec::new();
    let mut zs = Vec::new();
    for (i, h) in header.iter().enumerate().skip(3) {
        let numbered = |prefix: char| {
            h.strip_prefix(prefix)
                .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
        };
        if numbered('x') && zs.is_empty() {
            xs.push(i);
        } else if numbered('z') {
            zs.push(i);
        } else {
            return Err(parse_err(
                path,
                format!("unexpected header column {h:?}; expected x1..xk then z1..zm"),
            ));
        }
    }
    Ok((xs, zs))
}

struct NodeTable {
    ids: Vec<String>,
    y: Vec<f64>,
    d: Vec<u8>,
    x: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
}

fn read_nodes<R: Read>(path: &str, r: R) -> Result<NodeTable> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    let (xs, zs) = node_columns(path, &header)?;
    let mut t = NodeTable {
        ids: Vec::new(),
        y: Vec::new(),
        d: Vec::new(),
        x: Vec::new(),
        z: Vec::new(),
    };
    let mut seen = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| parse_err(path, format!("row {row}: {e}")))?;
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                format!(
                    "row {row}: expected {} fields, found {}",
                    header.len(),
                    rec.len()
                ),
            ));
        }
        let id = rec[0].to_string();
        if seen.insert(id.clone(), row).is_some() {
            return Err(parse_err(
                path,
                format!("row {row}: duplicate node id {id:?}"),
            ));
        }
        let y = parse_f64(path, row, "y", &rec[1])?;
        let d = match &rec[2] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(parse_err(
                    path,
                    format!("row {row}: column d must be 0 or 1, found {other:?}"),
                ))
            }
        };
        let x = xs
            .iter()
            .map(|&c| parse_f64(path, row, &header[c], &rec[c]))
            .collect::<Result<Vec<_>>>()?;
        let z = zs
            .iter()
            .map(|&c| parse_f64(path, row, &header[c], &rec[c]))
            .collect::<Result<Vec<_>>>()?;
        t.ids.push(id);
        t.y.push(y);
        t.d.push(d);
        t.x.push(x);
        t.z.push(z);
    }
    Ok(t)
}

fn read_edges<R: Read>(
    path: &str,
    r: R,
    index: &HashMap<&str, usize>,
) -> Result<Vec<(usize, usize)>> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    if header.len() != 2 || &header[0] != "src" || &header[1] != "dst" {
        return Err(parse_err(path, "header must be \"src,dst\""));
    }
    let mut edges = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| parse_err(path, format!("row {row}: {e}")))?;
        let lookup = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| parse_err(path, format!("row {row}: unknown node id {s:?}")))
        };
        let a = lookup(&rec[0])?;
        let b = lookup(&rec[1])?;
        if a == b {
            return Err(parse_err(
                path,
                format!("row {row}: self-loop on node {:?}", &rec[0]),
            ));
        }
        edges.push((a, b));
    }
    Ok(edges)
}

/// Parses node and edge tables from readers. `nodes_name` and `edges_name`
/// are used in error messages.
pub fn ingest_from<R1: Read, R2: Read>(
    nodes_name: &str,
    nodes: R1,
    edges_name: &str,
    edges: R2,
) -> Result<Ingested> {
    let t = read_nodes(nodes_name, nodes)?;
    let n = t.ids.len();
    if n == 0 {
        return Err(parse_err(nodes_name, "no nodes"));
    }
    let index: HashMap<&str, usize> = t
        .ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let edge_list = read_edges(edges_name, edges, &index)?;
    let graph = Graph::from_edges(n, edge_list)?;
    let kx = t.x.first().map_or(0, Vec::len);
    let kz = t.z.first().map_or(0, Vec::len);
    let x = DMatrix::from_fn(n, kx, |i, j| t.x[i][j]);
    let z = DMatrix::from_fn(n, kz, |i, j| t.z[i][j]);
    let data = Dataset::new(&graph, t.y, t.d, &x, &z)?;
    Ok(Ingested {
        graph,
        data,
        ids: t.ids,
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn ingest(nodes: &Path, edges: &Path) -> Result<Ingested> {
    ingest_from(
        &nodes.display().to_string(),
        open(nodes)?,
        &edges.display().to_string(),
        open(edges)?,
    )
}

/// Writes the node and edge tables for a dataset; ids are `0..n`.
pub fn write_dataset(nodes: &Path, edges: &Path, g: &Graph, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(nodes)?;
    let mut header = vec!["id".to_string(), "y".into(), "d".into()];
    header.extend((1..=data.covariate_count()).map(|k| format!("x{k}")));
    header.extend((1..=data.instrument_count()).map(|k| format!("z{k}")));
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec = vec![i.to_string(), data.y[i].to_string(), data.d[i].to_string()];
        rec.extend((1..data.x.ncols()).map(|k| data.x[(i, k)].to_string()));
        rec.extend((1..data.z.ncols()).map(|k| data.z[(i, k)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(edges)?;
    w.write_record(["src", "dst"])?;
    for (a, b) in g.edges() {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_estimates_with(
    path: &Path,
    names: &[String],
    estimates: &[f64],
    std_err: &[f64],
    ci: &[(f64, f64)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["param", "estimate", "std_error", "ci_lower", "ci_upper"])?;
    for j in 0..names.len() {
        w.write_record([
            names[j].clone(),
            estimates[j].to_string(),
            std_err[j].to_string(),
            ci[j].0.to_string(),
            ci[j].1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_estimates(path: &Path, res: &GmmResult, level: f64) -> Result<()> {
    let ci = crate::gmm::confidence_interval(res, level);
    write_estimates_with(path, &res.names, &res.estimates, &res.std_err, &ci)
}

/// Covariance of the estimates, one row per parameter, header `param,<names>`.
pub fn write_covariance(path: &Path, names: &[String], cov: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["param".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (j, name) in names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend((0..names.len()).map(|k| cov[(j, k)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Recovers the layout from the parameter names it generates.
pub fn layout_from_names(names: &[String]) -> Result<Layout> {
    let beta_d_len = names.iter().take_while(|n| n.starts_with("beta_D")).count();
    let lambda_free = names.get(beta_d_len).is_some_and(|n| n == "lambda");
    let mut present = [false; 4];
    for t in ExposureLabel::ALL {
        present[t.index()] = names.iter().any(|n| *n == format!("beta_p{t}"));
    }
    let cells = present.iter().filter(|&&p| p).count();
    let first = beta_d_len + lambda_free as usize;
    let beta_x_len = (names.len() - first)
        .checked_div(cells)
        .map_or(0, |k| k.saturating_sub(1));
    let layout = Layout {
        beta_d_len,
        beta_x_len,
        lambda_free,
        fixed_lambda: 0.0,
        present,
    };
    if layout.names() != names {
        return Err(Error::InvalidInput(
            "parameter names do not form a valid layout".into(),
        ));
    }
    Ok(layout)
}

/// Reads `estimates.csv` and `covariance.csv` written by an estimation run.
pub fn read_effect_inputs(estimates: &Path, covariance: &Path) -> Result<EffectInputs> {
    let est_name = estimates.display().to_string();
    let mut rdr = reader(open(estimates)?);
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(&est_name, format!("row {}: {e}", k + 2)))?;
        names.push(rec[0].to_string());
        values.push(parse_f64(&est_name, k + 2, "estimate", &rec[1])?);
    }
    let layout = layout_from_names(&names).map_err(|e| parse_err(&est_name, e.to_string()))?;

    let cov_name = covariance.display().to_string();
    let mut rdr = reader(open(covariance)?);
    let header = rdr.headers()?.clone();
    if header.iter().skip(1).ne(names.iter().map(String::as_str)) {
        return Err(parse_err(
            &cov_name,
            "covariance header does not match the estimates",
        ));
    }
    let d = names.len();
    let mut cov = DMatrix::zeros(d, d);
    let mut rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| parse_err(&cov_name, format!("row {row}: {e}")))?;
        if k >= d || rec.len() != d + 1 || rec[0] != names[k] {
            return Err(parse_err(&cov_name, format!("row {row}: unexpected row")));
        }
        for c in 0..d {
            cov[(k, c)] = parse_f64(&cov_name, row, &names[c], &rec[c + 1])?;
        }
        rows += 1;
    }
    if rows != d {
        return Err(parse_err(
            &cov_name,
            format!("expected {d} rows, found {rows}"),
        ));
    }
    Ok(EffectInputs {
        layout,
        estimates: values,
        covariance: cov,
    })
}

pub fn write_mer(path: &Path, rows: &[MerRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t_own",
        "t_neigh",
        "p",
        "estimate",
        "std_error",
        "ci_lower",
        "ci_upper",
    ])?;
    for r in rows {
        w.write_record([
            (r.label.own as u8).to_string(),
            (r.label.neigh as u8).to_string(),
            r.p.to_string(),
            r.estimate.to_string(),
            r.std_err.to_string(),
            r.ci_lower.to_string(),
            r.ci_upper.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_mc_summary(path: &Path, s: &McSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "name",
        "truth",
        "mean",
        "bias",
        "sd",
        "rmse",
        "coverage",
        "mean_se",
        "wald_rejection",
    ])?;
    for r in &s.rows {
        w.write_record([
            r.name.clone(),
            r.truth.to_string(),
            r.mean.to_string(),
            r.bias.to_string(),
            opt(r.sd),
            r.rmse.to_string(),
            r.coverage.to_string(),
            r.mean_se.to_string(),
            opt(r.wald_rejection),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a short plain-text run report.
pub fn write_report(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = File::create(path)?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ring;

    const NODES: &str = "id,y,d,x1,z1\na,1.5,1,0.25,-1\nb,2,0,1e-3,0.5\nc,-0.5,1,3,2\n";

    #[test]
    fn ingest_maps_ids() {
        let edges = "src,dst\na,b\nc,b\n";
        let ing = ingest_from("n", NODES.as_bytes(), "e", edges.as_bytes()).unwrap();
        assert_eq!(ing.ids, ["a", "b", "c"]);
        assert!(ing.graph.has_edge(0, 1) && ing.graph.has_edge(2, 1));
        assert!(!ing.graph.has_edge(0, 2));
        assert_eq!(ing.data.x[(1, 1)], 1e-3);
        assert_eq!(ing.data.z[(0, 1)], -1.0);
        assert_eq!(ing.data.d, [1, 0, 1]);
    }

    #[test]
    fn self_loop_reports_row() {
        let edges = "src,dst\na,b\nc,c\n";
        let err = ingest_from("n", NODES.as_bytes(), "edges.csv", edges.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("edges.csv") && msg.contains("row 3") && msg.contains("self-loop"),
            "{msg}"
        );
    }

    #[test]
    fn bad_values_report_row() {
        let nodes = "id,y,d,x1,z1\na,1,2,0,0\n";
        let msg = ingest_from("nodes.csv", nodes.as_bytes(), "e", "src,dst\n".as_bytes())
            .unwrap_err()
            .to_string();
        assert!(msg.contains("row 2") && msg.contains("column d"), "{msg}");
        let nodes = "id,y,d,x1,z1\na,1,0,oops,0\n";
        let msg = ingest_from("nodes.csv", nodes.as_bytes(), "e", "src,dst\n".as_bytes())
            .unwrap_err()
            .to_string();
        assert!(msg.contains("x1"), "{msg}");
        let msg = ingest_from("n", NODES.as_bytes(), "e", "src,dst\na,q\n".as_bytes())
            .unwrap_err()
            .to_string();
        assert!(msg.contains("unknown node id"), "{msg}");
    }

    #[test]
    fn dataset_round_trip() {
        let g = ring(12).unwrap();
        let x = DMatrix::from_fn(12, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0));
        let z = DMatrix::from_fn(12, 1, |i, _| (i as f64).sin());
        let d: Vec<u8> = (0..12).map(|i| (i % 3 == 0) as u8).collect();
        let y: Vec<f64> = (0..12).map(|i| 1.0 / (i as f64 + 7.0)).collect();
        let data = Dataset::new(&g, y, d, &x, &z).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (np, ep) = (dir.path().join("nodes.csv"), dir.path().join("edges.csv"));
        write_dataset(&np, &ep, &g, &data).unwrap();
        let back = ingest(&np, &ep).unwrap();
        assert_eq!(back.data, data);
        assert_eq!(back.graph, g);
    }

    #[test]
    fn layout_names_round_trip() {
        let mut l = Layout::full(2, 2);
        assert_eq!(layout_from_names(&l.names()).unwrap(), l);
        l.present[1] = false;
        l.lambda_free = false;
        assert_eq!(layout_from_names(&l.names()).unwrap(), l);
        assert!(layout_from_names(&["bogus".to_string()]).is_err());
    }
}
