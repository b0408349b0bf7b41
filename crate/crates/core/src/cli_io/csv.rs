//! Plot-ready CSV emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::grid::{Polyline, ScalarField};

use super::IoError;

/// One row per grid node: coordinates followed by each named field.
pub fn fields_csv(columns: &[(&str, &ScalarField)]) -> Result<String, IoError> {
    let Some((_, first)) = columns.first() else {
        return Err(IoError::Format("no fields to write".into()));
    };
    let grid = first.grid();
    if columns.iter().any(|(_, f)| !f.same_grid(first)) {
        return Err(IoError::Format("fields live on different grids".into()));
    }
    let mut out = String::new();
    let coords: Vec<String> = (1..=grid.ndim()).map(|d| format!("x{d}")).collect();
    out.push_str(&coords.join(","));
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let mut x = vec![0.0; grid.ndim()];
    for k in 0..grid.len() {
        grid.point_into(k, &mut x);
        let row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        for (_, f) in columns {
            let _ = write!(out, ",{}", f.get(k));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Contour vertices as `contour,x1,x2`; closed contours repeat their first
/// vertex so that line plots close up.
pub fn contours_csv(contours: &[Polyline]) -> String {
    let mut out = String::from("contour,x1,x2\n");
    for (i, c) in contours.iter().enumerate() {
        let closing = if c.closed { c.points.first() } else { None };
        for p in c.points.iter().chain(closing) {
            let _ = writeln!(out, "{i},{},{}", p[0], p[1]);
        }
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|e| IoError::path(path, e))
}
