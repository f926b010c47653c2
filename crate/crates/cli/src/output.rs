use std::fmt::Write as _;
use std::path::Path;

use nlmpm::geometry::CellRegion;
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Plain PGM, top row first, 0 outside and 255 inside.
pub fn pgm(mask: &CellRegion) -> String {
    let (nx, ny) = mask.dims();
    let mut s = format!("P2\n{nx} {ny}\n255\n");
    for j in (0..ny).rev() {
        let row: Vec<&str> = (0..nx).map(|i| if mask.contains_ij(i, j) { "255" } else { "0" }).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_pgm(dir: &Path, name: &str, mask: &CellRegion) -> std::io::Result<()> {
    std::fs::write(dir.join(name), pgm(mask))
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { text: format!("{}\n", header.join(",")) }
    }

    pub fn row(&mut self, cells: &[String]) {
        let quoted: Vec<String> = cells
            .iter()
            .map(|c| if c.contains([',', '"', '\n']) { format!("\"{}\"", c.replace('"', "\"\"")) } else { c.clone() })
            .collect();
        let _ = writeln!(self.text, "{}", quoted.join(","));
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, &self.text)
    }
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    command: &'a str,
    config: &'a ExperimentConfig,
    seed: Option<u64>,
    results: &'a T,
}

/// Results file embedding the config it was produced from.
pub fn write_results<T: Serialize>(
    path: &Path,
    command: &str,
    config: &ExperimentConfig,
    results: &T,
) -> std::io::Result<()> {
    let seed = config.noise.as_ref().map(|n| n.seed);
    let doc = Document { command, config, seed, results };
    let mut text = serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_rows_run_top_down() {
        let mask = CellRegion::rect(3, 2, 0, 0, 1, 1).unwrap();
        assert_eq!(pgm(&mask), "P2\n3 2\n255\n0 0 0\n255 0 0\n");
    }
}
