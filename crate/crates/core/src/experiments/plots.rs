//! Gnuplot scripts written next to the CSV outputs. Each script reads its CSV
//! by relative name and renders a PNG of the same stem.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

fn preamble(csv: &str, stem: &str) -> String {
    format!(
        "set datafile separator ','\nset datafile commentschars '#'\nset key autotitle columnhead\n\
         set terminal pngcairo size 900,600\nset output '{stem}.png'\nfile = '{csv}'\n"
    )
}

fn body(stem: &str) -> &'static str {
    if stem.starts_with("var_decay") {
        "set logscale xy\nset xlabel 'N'\nset ylabel 'variance'\n\
         plot for [c=2:6] file using 1:c with linespoints\n"
    } else if stem.starts_with("error_bound") {
        "set style data boxplot\nset ylabel 'violation fraction'\nset xtics ('first' 1, 'second' 2)\n\
         plot file using (1):2, '' using (2):3\n"
    } else if stem.ends_with("regions") {
        "set size ratio -1\nset xlabel 'x_1'\nset ylabel 'x_2'\n\
         plot file using 1:2:($3 + 2*$4 + 4*$5) with points pt 5 ps 0.3 palette\n"
    } else if stem.ends_with("sweep") {
        "set logscale y\nset xlabel 'training points'\n\
         plot file using 1:2 with linespoints, '' using 1:3 with linespoints\n"
    } else if stem.ends_with("task") {
        "set size ratio -1\nset xlabel 'x'\nset ylabel 'y'\n\
         plot file using 2:3 with lines, '' using 4:5 with lines dt 2\n"
    } else if stem.ends_with("region") {
        "set size ratio -1\nset xlabel 'x'\nset ylabel 'y'\n\
         plot file using 4:5:1 with lines palette\n"
    } else {
        "set xlabel 't'\nset ylabel 'value'\n\
         plot file using 1:(column('lyap')) with lines, '' using 1:(column('ub')) with lines dt 2\n"
    }
}

/// Write one `.gp` script beside each CSV, replacing any existing script.
pub fn emit_plots(csvs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::with_capacity(csvs.len());
    for csv in csvs {
        if !csv.is_file() {
            return Err(Error::io(
                csv,
                std::io::Error::new(std::io::ErrorKind::NotFound, "CSV output not found"),
            ));
        }
        let stem = csv
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::invalid(format!("bad file name {}", csv.display())))?;
        let name = csv.file_name().and_then(|s| s.to_str()).unwrap_or(stem);
        let script = csv.with_extension("gp");
        fs::write(&script, preamble(name, stem) + body(stem)).map_err(|e| Error::io(&script, e))?;
        out.push(script);
    }
    Ok(out)
}

pub fn script_path(csv: &Path) -> PathBuf {
    csv.with_extension("gp")
}
