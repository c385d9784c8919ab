//! File formats: transmission grids as CSV with a JSON header block or as
//! JSON, and JSON reports. Floats are written in shortest round-trip form,
//! so reading a written grid reproduces it bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::microwave::{CAxis, TransmissionGrid};

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const GRID_FORMAT: &str = "pcswitch-grid";
pub const GRID_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("grid schema error: {0}")]
    Schema(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn schema(msg: impl Into<String>) -> IoError {
    IoError::Schema(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisInfo {
    pub name: String,
    pub unit: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub format: String,
    pub format_version: u32,
    pub software_version: String,
    pub config_hash: String,
    pub frequency_hz: f64,
    pub c_mode: CAxis,
    /// Row axis first (`i_z`), then the column axis (`c`).
    pub axes: [AxisInfo; 2],
    pub tau_unit: String,
}

/// A grid together with the header that identifies its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub header: GridHeader,
    pub grid: TransmissionGrid,
}

impl GridFile {
    pub fn new(grid: TransmissionGrid, config_hash: &str) -> Self {
        let header = GridHeader {
            format: GRID_FORMAT.into(),
            format_version: GRID_FORMAT_VERSION,
            software_version: SOFTWARE_VERSION.into(),
            config_hash: config_hash.into(),
            frequency_hz: grid.frequency,
            c_mode: grid.c_mode.clone(),
            axes: [
                AxisInfo {
                    name: "i_z".into(),
                    unit: "A".into(),
                    count: grid.rows(),
                },
                AxisInfo {
                    name: match grid.c_mode {
                        CAxis::Trapped { .. } => "i_trg",
                        CAxis::Continuous => "i_c",
                        CAxis::Flux { .. } => "phi_ext",
                    }
                    .into(),
                    unit: grid.c_mode.unit().into(),
                    count: grid.cols(),
                },
            ],
            tau_unit: "1".into(),
        };
        Self { header, grid }
    }

    /// CSV body: one row per cell in row-major order,
    /// `i_z,c,tau_re,tau_im,flagged[,j]`, preceded by `# ` header lines.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut out = String::new();
        let header = serde_json::to_string(&self.header).expect("header serializes");
        writeln!(out, "# {header}").unwrap();
        let with_j = g.j.is_some();
        out.push_str("i_z,c,tau_re,tau_im,flagged");
        out.push_str(if with_j { ",j\n" } else { "\n" });
        let cols = g.cols();
        for (idx, t) in g.tau.iter().enumerate() {
            let (r, c) = (idx / cols, idx % cols);
            write!(out, "{},{},{},{},{}", g.i_z_axis[r], g.c_axis[c], t.re, t.im, g.flagged[idx] as u8).unwrap();
            if let Some(j) = &g.j {
                write!(out, ",{}", j[c]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, IoError> {
        let mut header_json = String::new();
        let mut lines = text.lines().peekable();
        while let Some(l) = lines.peek() {
            match l.strip_prefix('#') {
                Some(rest) => {
                    header_json.push_str(rest.trim_start());
                    header_json.push('\n');
                    lines.next();
                }
                None => break,
            }
        }
        if header_json.trim().is_empty() {
            return Err(schema("missing `#` JSON header block"));
        }
        let header: GridHeader = serde_json::from_str(&header_json).map_err(|e| schema(format!("header: {e}")))?;
        if header.format != GRID_FORMAT {
            return Err(schema(format!("unknown format `{}`", header.format)));
        }
        if header.format_version > GRID_FORMAT_VERSION {
            return Err(schema(format!("unsupported format version {}", header.format_version)));
        }
        let columns = lines.next().ok_or_else(|| schema("missing column line"))?;
        let names: Vec<&str> = columns.split(',').map(str::trim).collect();
        let with_j = match names.as_slice() {
            ["i_z", "c", "tau_re", "tau_im", "flagged"] => false,
            ["i_z", "c", "tau_re", "tau_im", "flagged", "j"] => true,
            _ => return Err(schema(format!("unexpected columns `{columns}`"))),
        };
        let (rows, cols) = (header.axes[0].count, header.axes[1].count);
        if rows == 0 || cols == 0 {
            return Err(schema("empty axes"));
        }
        let mut grid = TransmissionGrid {
            i_z_axis: vec![0.0; rows],
            c_axis: vec![0.0; cols],
            c_mode: header.c_mode.clone(),
            frequency: header.frequency_hz,
            tau: Vec::with_capacity(rows * cols),
            flagged: Vec::with_capacity(rows * cols),
            j: with_j.then(|| vec![0; cols]),
        };
        let mut count = 0usize;
        for (k, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let line_no = k + 2 + header_json.lines().count();
            let bad = |what: &str| schema(format!("line {line_no}: {what}"));
            if count >= rows * cols {
                return Err(bad("more cells than the header declares"));
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != names.len() {
                return Err(bad("wrong field count"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
            let (r, c) = (count / cols, count % cols);
            let (iz, cv) = (num(f[0])?, num(f[1])?);
            if c == 0 {
                grid.i_z_axis[r] = iz;
            } else if grid.i_z_axis[r].to_bits() != iz.to_bits() {
                return Err(bad("i_z changes within a row"));
            }
            if r == 0 {
                grid.c_axis[c] = cv;
            } else if grid.c_axis[c].to_bits() != cv.to_bits() {
                return Err(bad("c changes within a column"));
            }
            grid.tau.push(Complex64::new(num(f[2])?, num(f[3])?));
            grid.flagged.push(match f[4].trim() {
                "0" => false,
                "1" => true,
                s => return Err(bad(&format!("bad flag `{s}`"))),
            });
            if let Some(j) = grid.j.as_mut() {
                let v: i64 = f[5].trim().parse().map_err(|_| bad("bad fluxoid index"))?;
                if r == 0 {
                    j[c] = v;
                } else if j[c] != v {
                    return Err(bad("j changes within a column"));
                }
            }
            count += 1;
        }
        if count != rows * cols {
            return Err(schema(format!("expected {} cells, found {count}", rows * cols)));
        }
        Ok(Self { header, grid })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        let g: GridFile = serde_json::from_str(text)?;
        g.grid.check_shape().map_err(schema)?;
        Ok(g)
    }

    /// Reads CSV or JSON, chosen by extension (`.json`) or content.
    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = read_text(path)?;
        if text.trim().is_empty() {
            return Err(schema(format!("{} is empty", path.display())));
        }
        let json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        if json {
            Self::from_json(&text)
        } else {
            Self::from_csv(&text)
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), IoError> {
        write_text(path, &self.to_csv())
    }

    pub fn write_json(&self, path: &Path) -> Result<(), IoError> {
        write_text(path, &self.to_json())
    }
}

/// Envelope for every JSON artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub command: String,
    pub software_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub data: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &str, config_hash: &str, seed: u64, data: T) -> Self {
        Self {
            command: command.into(),
            software_version: SOFTWARE_VERSION.into(),
            config_hash: config_hash.into(),
            seed,
            data,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_text(path, &serde_json::to_string_pretty(self)?)
    }
}

/// CSV table with a `# ` JSON metadata line.
pub fn write_table(path: &Path, meta: &serde_json::Value, columns: &[&str], rows: &[Vec<f64>]) -> Result<(), IoError> {
    let mut out = format!("# {}\n{}\n", serde_json::to_string(meta)?, columns.join(","));
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let err = |source| IoError::File {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(err)?;
    }
    fs::write(path, text).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trap::TrapProtocol;
    use proptest::prelude::*;

    fn grid(rows: usize, cols: usize, mode: CAxis, seed: u64) -> TransmissionGrid {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            f64::from_bits((x >> 12) | 0x3ff0_0000_0000_0000) - 1.5
        };
        let j = match mode {
            CAxis::Continuous => None,
            _ => Some((0..cols as i64).map(|k| k - 3).collect()),
        };
        TransmissionGrid {
            i_z_axis: (0..rows).map(|_| next() * 1e-3).collect(),
            c_axis: (0..cols).map(|_| next() * 1e-5).collect(),
            c_mode: mode,
            frequency: 5.1e9,
            tau: (0..rows * cols).map(|_| Complex64::new(next() / 3.0, next() * 1e-7)).collect(),
            flagged: (0..rows * cols).map(|k| k % 7 == 3).collect(),
            j,
        }
    }

    fn bits(g: &TransmissionGrid) -> Vec<u64> {
        g.i_z_axis
            .iter()
            .chain(&g.c_axis)
            .cloned()
            .chain(g.tau.iter().flat_map(|t| [t.re, t.im]))
            .map(f64::to_bits)
            .collect()
    }

    #[test]
    fn single_cell_csv() {
        let g = grid(1, 1, CAxis::Continuous, 1);
        let f = GridFile::new(g, "abc");
        let text = f.to_csv();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(GridFile::from_csv(&text).unwrap(), f);
    }

    #[test]
    fn csv_rejects_truncation_and_garbage() {
        let f = GridFile::new(grid(3, 4, CAxis::Flux { j: 2 }, 2), "h");
        let text = f.to_csv();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(GridFile::from_csv(&cut), Err(IoError::Schema(_))));
        assert!(matches!(GridFile::from_csv(""), Err(IoError::Schema(_))));
        assert!(GridFile::from_csv(&text.replace("tau_re", "x")).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = TrapProtocol::default();
        let f = GridFile::new(grid(4, 5, CAxis::Trapped { protocol: p }, 3), "h");
        let back = GridFile::from_json(&f.to_json()).unwrap();
        assert_eq!(bits(&back.grid), bits(&f.grid));
        assert_eq!(back, f);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn csv_round_trip_is_bit_exact(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>(), mode in 0u8..3) {
            let mode = match mode {
                0 => CAxis::Continuous,
                1 => CAxis::Flux { j: -4 },
                _ => CAxis::Trapped { protocol: TrapProtocol::default() },
            };
            let f = GridFile::new(grid(rows, cols, mode, seed), "0123");
            let back = GridFile::from_csv(&f.to_csv()).unwrap();
            prop_assert_eq!(bits(&back.grid), bits(&f.grid));
            prop_assert_eq!(back, f);
        }
    }
}
