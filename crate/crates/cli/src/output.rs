//! CSV and JSON writers.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use graphmfg::grid::Path as GridPath;
use serde::Serialize;

/// 17 significant digits; non-finite values are left empty.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        String::new()
    }
}

fn quote(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

pub fn csv_table(header: Vec<String>, rows: Vec<Vec<f64>>) -> String {
    let mut out = String::new();
    let head: Vec<String> = header.iter().map(|h| quote(h)).collect();
    out.push_str(&head.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_float).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// Rows `[t_k, paths[0][k].., paths[1][k]..]`; all paths share the first path's grid.
pub fn path_rows(paths: &[&GridPath]) -> Vec<Vec<f64>> {
    let grid = paths[0].grid;
    (0..=grid.steps)
        .map(|k| {
            let mut row = vec![grid.node(k)];
            for p in paths {
                row.extend(&p.values[k]);
            }
            row
        })
        .collect()
}

pub fn write_json(path: &Path, value: &impl Serialize) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_csv() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_float(f64::NAN), "");
    }

    #[test]
    fn header_cells_with_commas_are_quoted() {
        let t = csv_table(vec!["s".into(), "m_(1,2)".into()], vec![vec![0.0, 1.0]]);
        let mut lines = t.lines();
        assert_eq!(lines.next(), Some("s,\"m_(1,2)\""));
        assert_eq!(lines.next(), Some("0.0000000000000000e0,1.0000000000000000e0"));
    }
}
