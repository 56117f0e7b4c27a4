//! Plain-text bag files.
//!
//! One file per bag, named `<bag_id>.bag.csv`. The first line is
//! `bag_id,label,T,d`; it is followed by `T` rows of `d` comma-separated
//! reals.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::Bag;
use crate::error::{Error, Result};

pub const BAG_FILE_SUFFIX: &str = ".bag.csv";

fn bag_path(dir: &Path, bag_id: &str) -> PathBuf {
    dir.join(format!("{bag_id}{BAG_FILE_SUFFIX}"))
}

pub fn write_bag(dir: &Path, bag: &Bag) -> Result<PathBuf> {
    if bag.bag_id.is_empty()
        || bag
            .bag_id
            .chars()
            .any(|c| c == ',' || c == '/' || c == '\\' || c.is_whitespace())
    {
        return Err(Error::contract(format!(
            "bag id `{}` cannot be used as a file name",
            bag.bag_id
        )));
    }
    let path = bag_path(dir, &bag.bag_id);
    let mut out = String::with_capacity(bag.tiles.len() * 20);
    out.push_str(&format!(
        "{},{},{},{}\n",
        bag.bag_id,
        bag.label,
        bag.n_tiles(),
        bag.feature_dim()
    ));
    for row in bag.tiles.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn write_bag_dir(dir: &Path, bags: &[Bag]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for bag in bags {
        write_bag(dir, bag)?;
    }
    Ok(())
}

pub fn read_bag(path: &Path) -> Result<Bag> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let what = format!("bag file {}", path.display());
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(&what, "missing header"))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(Error::format(
            &what,
            "header must be `bag_id,label,T,d`",
        ));
    }
    let parse_usize = |s: &str, field: &str| {
        s.parse::<usize>()
            .map_err(|e| Error::format(&what, format!("header field {field}: {e}")))
    };
    let label = parse_usize(fields[1], "label")?;
    let n_tiles = parse_usize(fields[2], "T")?;
    let dim = parse_usize(fields[3], "d")?;

    let mut values = Vec::with_capacity(n_tiles * dim);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for cell in line.split(',') {
            let v = cell
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::format(&what, format!("row {}: {e}", i + 1)))?;
            values.push(v);
        }
        if values.len() - before != dim {
            return Err(Error::format(
                &what,
                format!("row {} has {} values, expected {dim}", i + 1, values.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != n_tiles {
        return Err(Error::format(
            &what,
            format!("header announces {n_tiles} tiles, found {rows}"),
        ));
    }
    let tiles = Array2::from_shape_vec((n_tiles, dim), values).map_err(|e| Error::format(&what, e))?;
    Bag::new(fields[0], label, tiles)
}

/// Reads every `*.bag.csv` in `dir`, ordered by file name.
pub fn read_bag_dir(dir: &Path) -> Result<Vec<Bag>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(BAG_FILE_SUFFIX))
        {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(
            format!("bag directory {}", dir.display()),
            "no bag files found",
        ));
    }
    paths.iter().map(|p| read_bag(p)).collect()
}
