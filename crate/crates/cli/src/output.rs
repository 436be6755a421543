//! CSV emission with round-trip-exact decimal rendering.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mselab_core::ScalarField;

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Columns `x1,x2,<name>...`, one row per grid node; an empty list writes
/// the coordinate header only.
pub fn emit_plot_data(fields: &[(&str, &ScalarField)], path: &Path) -> Result<()> {
    let mut text = String::from("x1,x2");
    for (name, _) in fields {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    if let Some((_, first)) = fields.first() {
        let grid = *first.grid();
        for (name, f) in fields {
            if *f.grid() != grid {
                bail!("field '{name}' lives on a different grid");
            }
        }
        for k in 0..grid.len() {
            let (x, y) = grid.xy(k);
            let _ = write!(text, "{},{}", num(x), num(y));
            for (_, f) in fields {
                let _ = write!(text, ",{}", num(f.values()[k]));
            }
            text.push('\n');
        }
    }
    write_file(path, &text)
}

/// Header and numeric rows of a file written by [`emit_plot_data`] or [`write_table`].
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty file")?.split(',').map(str::to_owned).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().with_context(|| format!("bad number '{v}'"))).collect())
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

/// A CSV with free-form cells (already rendered).
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    write_file(path, &text)
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
