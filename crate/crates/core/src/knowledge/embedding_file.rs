//! Text embedding tables: a `<count> <dim>` header followed by
//! `<token> <v1> ... <vd>` rows.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::diffmath::Tensor;
use crate::error::{Error, Result};

pub fn write_embeddings(mut out: impl Write, names: &[String], table: &Tensor) -> std::io::Result<()> {
    writeln!(out, "{} {}", names.len(), table.cols())?;
    for (i, name) in names.iter().enumerate() {
        write!(out, "{name}")?;
        for v in table.row(i) {
            // `{:?}` keeps the shortest round-trip representation
            write!(out, " {v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_embeddings(path: impl AsRef<Path>, names: &[String], table: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_embeddings(&mut w, names, table).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(reader: impl BufRead) -> Result<(Vec<String>, Tensor)> {
    let mut lines = reader.lines().enumerate();
    let (count, dim) = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::parse(1, e.to_string()))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(1, "bad header"));
            match parts.as_slice() {
                [c, d] => (parse(c)?, parse(d)?),
                _ => return Err(Error::parse(1, "header must be `<count> <dim>`")),
            }
        }
        None => return Err(Error::Domain("empty embedding file".into())),
    };
    let mut names = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for (i, line) in lines {
        let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let name = parts.next().unwrap_or_default().to_string();
        let values: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if values.len() != dim {
            return Err(Error::parse(
                i + 1,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        names.push(name);
        data.extend(values);
    }
    if names.len() != count {
        return Err(Error::Domain(format!(
            "header declares {count} rows, found {}",
            names.len()
        )));
    }
    Ok((names, Tensor::matrix(count, dim, data)?))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(Vec<String>, Tensor)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file))
}

/// Reorders loaded rows to follow `vocab`; every vocabulary entry must be present.
pub fn align_embeddings(vocab: &[String], names: &[String], table: &Tensor) -> Result<Tensor> {
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let dim = table.cols();
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for name in vocab {
        let row = index
            .get(name.as_str())
            .ok_or_else(|| Error::Domain(format!("no embedding for `{name}`")))?;
        data.extend_from_slice(table.row(*row));
    }
    Tensor::matrix(vocab.len(), dim, data)
}
