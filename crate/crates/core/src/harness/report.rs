//! CSV tables, `key = value` summaries and the gnuplot script.

use std::path::Path;

use crate::error::{LmaError, Result};
use crate::grid::fmt_f64;

/// Writes a CSV with a header row. Floats should be formatted with
/// [`fmt_f64`] so reruns are byte-identical.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| LmaError::io(path, e))?;
    Ok(())
}

pub fn f(v: f64) -> String {
    fmt_f64(v)
}

/// Sections of `key = value` lines under `[name]` headers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    sections: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, name: &str, block: impl Into<String>) {
        let mut b: String = block.into();
        if !b.is_empty() && !b.ends_with('\n') {
            b.push('\n');
        }
        self.sections.push((name.to_string(), b));
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, (name, block)) in self.sections.iter().enumerate() {
            if i > 0 {
                s.push('\n');
            }
            s += &format!("[{name}]\n{block}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| LmaError::io(path, e))
    }
}

/// gnuplot script for the tables the pipeline wrote.
pub fn plot_script(tables: &[&str]) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,700\n");
    if tables.contains(&"holder.csv") {
        s += "\nset output 'holder.png'\nset logscale xy\nset xlabel 'h'\nset ylabel 'osc'\nplot 'holder.csv' using 4:5:1 with linespoints lc variable title 'osc over S(x0,h)'\nunset logscale\n";
    }
    if tables.contains(&"levels.csv") {
        s += "\nset output 'levels.png'\nset xlabel 'k'\nset ylabel 'omega(k)'\nplot 'levels.csv' using 1:2 with steps title '|{u > k}|'\n";
    }
    if tables.contains(&"chain.csv") {
        s += "\nset output 'chain.png'\nset xlabel 'k'\nset ylabel 'energy'\nplot 'chain.csv' using 1:3 with linespoints title 'lhs', '' using 1:4 with linespoints title 'rhs'\n";
    }
    if tables.contains(&"sobolev.csv") {
        s += "\nset output 'sobolev.png'\nset xlabel 'trial'\nset ylabel 'ratio'\nplot 'sobolev.csv' using 1:2 with points title 'L^{2*} / Phi-energy'\n";
    }
    if tables.contains(&"paths.csv") {
        s += "\nset output 'paths.png'\nset xlabel 'x1'\nset ylabel 'x2'\nset view map\nsplot 'paths.csv' using 3:4:7 with points palette pt 5 ps 0.5 title 'direct - pulled back'\n";
    }
    s
}
