//! Reader and writer for the TUDataset plain-text layout.
//!
//! ```text
//! <DS>_A.txt               "u, v" per line, 1-indexed global node ids
//! <DS>_graph_indicator.txt graph id (1-indexed) of node i on line i
//! <DS>_graph_labels.txt    one label per graph
//! <DS>_node_labels.txt     optional, one label per node
//! ```
//!
//! The files may sit directly under `root` or under `root/<DS>/`.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::{GraphDataset, InputGraph};
use crate::error::{Error, Result};

fn resolve_dir(root: &Path, name: &str) -> PathBuf {
    let marker = format!("{name}_A.txt");
    if root.join(&marker).is_file() {
        root.to_path_buf()
    } else if root.join(name).join(&marker).is_file() {
        root.join(name)
    } else {
        root.to_path_buf()
    }
}

/// Reads non-empty trimmed lines, keeping 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            path: path.to_path_buf(),
        },
        _ => Error::io(path, e),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() {
            out.push((i + 1, t.to_string()));
        }
    }
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn parse_int(path: &Path, line: usize, tok: &str) -> Result<i64> {
    tok.trim().parse::<i64>().map_err(|_| Error::Parse {
        file: file_name(path),
        line,
        message: format!("expected an integer, found '{tok}'"),
    })
}

fn read_int_column(path: &Path) -> Result<Vec<(usize, i64)>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            // some releases carry extra comma-separated columns; the first is the value
            let tok = text.split(',').next().unwrap_or("");
            parse_int(path, line, tok).map(|v| (line, v))
        })
        .collect()
}

/// Sorted distinct values and a lookup into their contiguous index.
fn remap(values: impl Iterator<Item = i64>) -> (Vec<i64>, impl Fn(i64) -> usize) {
    let distinct: Vec<i64> = values.collect::<BTreeSet<_>>().into_iter().collect();
    let table = distinct.clone();
    (distinct, move |v| table.binary_search(&v).expect("value collected above"))
}

pub fn parse_tudataset(root: impl AsRef<Path>, dataset_name: &str) -> Result<GraphDataset> {
    let dir = resolve_dir(root.as_ref(), dataset_name);
    let path_of = |suffix: &str| dir.join(format!("{dataset_name}_{suffix}.txt"));
    let a_path = path_of("A");
    let ind_path = path_of("graph_indicator");
    let gl_path = path_of("graph_labels");
    let nl_path = path_of("node_labels");

    for p in [&a_path, &ind_path, &gl_path] {
        if !p.is_file() {
            return Err(Error::MissingFile { path: p.clone() });
        }
    }

    let graph_labels = read_int_column(&gl_path)?;
    let num_graphs = graph_labels.len();
    let indicator = read_int_column(&ind_path)?;
    let num_nodes = indicator.len();

    // global node (0-based) -> (graph, local index)
    let mut node_graph = Vec::with_capacity(num_nodes);
    let mut node_local = Vec::with_capacity(num_nodes);
    let mut graph_sizes = vec![0usize; num_graphs];
    for &(line, gid) in &indicator {
        if gid < 1 || gid as usize > num_graphs {
            return Err(Error::Integrity {
                file: file_name(&ind_path),
                line,
                message: format!("graph id {gid} outside 1..={num_graphs}"),
            });
        }
        let g = gid as usize - 1;
        node_graph.push(g);
        node_local.push(graph_sizes[g]);
        graph_sizes[g] += 1;
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (line, text) in read_lines(&a_path)? {
        let mut parts = text.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                file: file_name(&a_path),
                line,
                message: format!("expected 'u, v', found '{text}'"),
            });
        };
        let u = parse_int(&a_path, line, a)?;
        let v = parse_int(&a_path, line, b)?;
        let in_range = |x: i64| x >= 1 && x as usize <= num_nodes;
        if !in_range(u) || !in_range(v) {
            return Err(Error::Integrity {
                file: file_name(&a_path),
                line,
                message: format!("edge ({u}, {v}) references a node outside 1..={num_nodes}"),
            });
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        if node_graph[u] != node_graph[v] {
            return Err(Error::Integrity {
                file: file_name(&a_path),
                line,
                message: format!(
                    "edge ({}, {}) crosses graphs {} and {}",
                    u + 1,
                    v + 1,
                    node_graph[u] + 1,
                    node_graph[v] + 1
                ),
            });
        }
        edges[node_graph[u]].push((node_local[u], node_local[v]));
    }

    let (class_values, class_of) = remap(graph_labels.iter().map(|&(_, v)| v));

    let node_labels = if nl_path.is_file() {
        let raw = read_int_column(&nl_path)?;
        if raw.len() != num_nodes {
            return Err(Error::Integrity {
                file: file_name(&nl_path),
                line: raw.len() + 1,
                message: format!("{} node labels for {num_nodes} nodes", raw.len()),
            });
        }
        Some(raw)
    } else {
        None
    };

    let mut graphs = Vec::with_capacity(num_graphs);
    for (g, graph_edges) in edges.into_iter().enumerate() {
        let label = class_of(graph_labels[g].1);
        graphs.push(InputGraph::new(g, graph_sizes[g], graph_edges, Some(label))?);
    }

    let mut node_label_values = Vec::new();
    if let Some(raw) = node_labels {
        let (values, of) = remap(raw.iter().map(|&(_, v)| v));
        let mut per_graph: Vec<Vec<usize>> = graph_sizes.iter().map(|&n| Vec::with_capacity(n)).collect();
        for (node, &(_, v)) in raw.iter().enumerate() {
            per_graph[node_graph[node]].push(of(v));
        }
        for (g, labels) in graphs.iter_mut().zip(per_graph) {
            g.node_labels = Some(labels);
        }
        node_label_values = values;
    }

    let num_classes = class_values.len();
    let mut ds = GraphDataset::new(graphs, num_classes)?;
    ds.class_values = class_values;
    if !node_label_values.is_empty() {
        ds.num_node_labels = Some(node_label_values.len());
        ds.node_label_values = node_label_values;
    }
    log::debug!(
        "parsed {dataset_name}: {} graphs, {} classes, {num_nodes} nodes",
        ds.len(),
        ds.num_classes
    );
    Ok(ds)
}

/// Writes `dataset` in TUDataset layout under `dir`. Each undirected edge is
/// emitted in both directions, as the public releases do. Labels are written
/// back with their original values.
pub fn write_tudataset(dataset: &GraphDataset, dir: impl AsRef<Path>, dataset_name: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |suffix: &str| -> Result<(PathBuf, BufWriter<File>)> {
        let p = dir.join(format!("{dataset_name}_{suffix}.txt"));
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        Ok((p, BufWriter::new(f)))
    };
    let (a_path, mut a) = open("A")?;
    let (ind_path, mut ind) = open("graph_indicator")?;
    let (gl_path, mut gl) = open("graph_labels")?;
    let write_nl = dataset.graphs.iter().all(|g| g.node_labels.is_some()) && !dataset.is_empty();
    let mut nl = if write_nl { Some(open("node_labels")?) } else { None };

    let mut offset = 0usize;
    for (gi, g) in dataset.graphs.iter().enumerate() {
        for &(u, v) in g.edges() {
            writeln!(a, "{}, {}", offset + u + 1, offset + v + 1).map_err(|e| Error::io(&a_path, e))?;
            writeln!(a, "{}, {}", offset + v + 1, offset + u + 1).map_err(|e| Error::io(&a_path, e))?;
        }
        for _ in 0..g.size() {
            writeln!(ind, "{}", gi + 1).map_err(|e| Error::io(&ind_path, e))?;
        }
        let label = g
            .label
            .ok_or_else(|| Error::EmptyInput(format!("graph {} has no label to write", g.id)))?;
        let value = dataset.class_values.get(label).copied().unwrap_or(label as i64);
        writeln!(gl, "{value}").map_err(|e| Error::io(&gl_path, e))?;
        if let (Some((p, w)), Some(labels)) = (nl.as_mut(), g.node_labels.as_ref()) {
            for &l in labels {
                let value = dataset.node_label_values.get(l).copied().unwrap_or(l as i64);
                writeln!(w, "{value}").map_err(|e| Error::io(&*p, e))?;
            }
        }
        offset += g.size();
    }
    a.flush().map_err(|e| Error::io(&a_path, e))?;
    ind.flush().map_err(|e| Error::io(&ind_path, e))?;
    gl.flush().map_err(|e| Error::io(&gl_path, e))?;
    if let Some((p, mut w)) = nl {
        w.flush().map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
