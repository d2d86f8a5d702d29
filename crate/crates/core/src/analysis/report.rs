//! Tab-separated tables and heatmap images.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{save_image, GrayImage};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::shape(format!(
                "row has {} fields, table has {} columns",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Header row then data rows, tab-separated, LF line endings.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let _ = writeln!(s, "{}", row.join("\t"));
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Min-max normalise `values` into an 8-bit image; also returns the raw range.
pub fn heatmap(values: &[f64], height: usize, width: usize) -> Result<(GrayImage, f64, f64)> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let span = hi - lo;
    let img = GrayImage::new(
        height,
        width,
        values
            .iter()
            .map(|&v| if span > 0.0 && v.is_finite() { (v - lo) / span } else { 0.0 })
            .collect(),
    )?;
    Ok((img, lo, hi))
}

/// Path of the sidecar file holding a heatmap's raw range.
pub fn range_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".range.tsv");
    PathBuf::from(s)
}

/// Write a heatmap PGM plus its `min`/`max` sidecar.
pub fn write_heatmap(path: impl AsRef<Path>, values: &[f64], height: usize, width: usize) -> Result<()> {
    let path = path.as_ref();
    let (img, lo, hi) = heatmap(values, height, width)?;
    save_image(path, &img)?;
    let mut t = Table::new(&["min", "max"]);
    t.push(vec![format!("{lo}"), format!("{hi}")])?;
    t.write(range_sidecar(path))
}
