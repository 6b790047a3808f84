//! On-disk formats: solve records, grayscale images and history tables.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const RECORD_MAGIC: &[u8; 4] = b"TDTO";
pub const RECORD_VERSION: u8 = 1;

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!("truncated input at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// One optimized problem: setting parameters, design, compliance, compliance
/// sensitivity and the number of equilibrium solves it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRecord {
    pub setting: Vec<f64>,
    pub x: Vec<f64>,
    pub f: f64,
    pub sensitivity: Vec<f64>,
    pub fea_count: u64,
}

impl SolveRecord {
    /// `TDTO`, version byte, N (u64), setting dimension (u64), then
    /// little-endian f64 values: setting, x, f, sensitivity, fea count.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.x.len();
        let mut out = Vec::with_capacity(21 + 8 * (self.setting.len() + 2 * n + 2));
        out.extend_from_slice(RECORD_MAGIC);
        out.push(RECORD_VERSION);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(self.setting.len() as u64).to_le_bytes());
        let count = self.fea_count as f64;
        let values = self
            .setting
            .iter()
            .chain(&self.x)
            .chain(std::iter::once(&self.f))
            .chain(&self.sensitivity)
            .chain(std::iter::once(&count));
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != RECORD_MAGIC {
            return Err(Error::Format("bad magic, not a record file".into()));
        }
        let version = r.u8()?;
        if version != RECORD_VERSION {
            return Err(Error::Format(format!("unsupported record version {version}")));
        }
        let n = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let expected = n.checked_mul(2).and_then(|v| v.checked_add(dim + 2)).unwrap_or(usize::MAX);
        if expected.checked_mul(8) != Some(r.remaining()) {
            return Err(Error::Format(format!("payload has {} bytes, expected {} values", r.remaining(), expected)));
        }
        let mut read = |k: usize| (0..k).map(|_| r.f64()).collect::<Result<Vec<f64>>>();
        let setting = read(dim)?;
        let x = read(n)?;
        let f = read(1)?[0];
        let sensitivity = read(n)?;
        let count = read(1)?[0];
        if !(count >= 0.0 && count.fract() == 0.0) {
            return Err(Error::Format(format!("invalid solve count {count}")));
        }
        Ok(Self { setting, x, f, sensitivity, fea_count: count as u64 })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Element densities as a binary PGM (P5, maxval 255), top row first.
/// `rho[ix * ny + iy]` is the element in column `ix`, row `iy` from the bottom.
pub fn pgm_bytes(rho: &[f64], nx: usize, ny: usize) -> Result<Vec<u8>> {
    if rho.len() != nx * ny {
        return Err(Error::DimensionMismatch { expected: nx * ny, actual: rho.len() });
    }
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for row in (0..ny).rev() {
        for col in 0..nx {
            let v = rho[col * ny + row];
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("density of element {}", col * ny + row)));
            }
            out.push((255.0 * v.clamp(0.0, 1.0)).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, rho: &[f64], nx: usize, ny: usize) -> Result<()> {
    std::fs::write(path, pgm_bytes(rho, nx, ny)?)?;
    Ok(())
}

/// Inverse of [`pgm_bytes`]: returns `(rho, nx, ny)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(Vec<f64>, usize, usize)> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated image header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Format("not a binary PGM".into()));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()?.parse().map_err(|_| Error::Format(format!("bad image {what}")))
    };
    let nx = num("width")?;
    let ny = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    let data = bytes.get(pos + 1..).unwrap_or(&[]);
    if data.len() != nx * ny {
        return Err(Error::Format(format!("pixel block has {} bytes, expected {}", data.len(), nx * ny)));
    }
    let mut rho = vec![0.0; nx * ny];
    for (r, row) in (0..ny).rev().enumerate() {
        for col in 0..nx {
            rho[col * ny + row] = data[r * nx + col] as f64 / 255.0;
        }
    }
    Ok((rho, nx, ny))
}

pub fn read_pgm(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    parse_pgm(&std::fs::read(path)?)
}

/// One line of an acquisition history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub remaining_budget: u64,
    pub chosen_setting: Vec<f64>,
    pub score: f64,
    pub test_metric: f64,
}

pub const HISTORY_HEADER: &str = "iteration,remaining_budget,chosen_setting,score,test_metric";

impl HistoryEntry {
    /// Setting parameters are joined with `;` inside one column. Floats use
    /// the shortest round-trip representation.
    pub fn csv_line(&self) -> String {
        let setting = self.chosen_setting.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(";");
        format!("{},{},{},{:?},{:?}", self.iteration, self.remaining_budget, setting, self.score, self.test_metric)
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != 5 {
            return Err(Error::Format(format!("history line has {} columns", cols.len())));
        }
        let bad = |c: &str| Error::Format(format!("bad history field '{c}'"));
        let setting = if cols[2].is_empty() {
            Vec::new()
        } else {
            cols[2].split(';').map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?
        };
        Ok(Self {
            iteration: cols[0].parse().map_err(|_| bad(cols[0]))?,
            remaining_budget: cols[1].parse().map_err(|_| bad(cols[1]))?,
            chosen_setting: setting,
            score: cols[3].parse().map_err(|_| bad(cols[3]))?,
            test_metric: cols[4].parse().map_err(|_| bad(cols[4]))?,
        })
    }
}

pub fn history_csv(entries: &[HistoryEntry]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for e in entries {
        let _ = writeln!(s, "{}", e.csv_line());
    }
    s
}

/// Appends history lines as they arrive, flushing after each so an
/// interrupted run leaves every completed iteration on disk.
pub struct HistoryWriter {
    file: std::fs::File,
}

impl HistoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{HISTORY_HEADER}")?;
        file.flush()?;
        Ok(Self { file })
    }

    pub fn append(&mut self, entry: &HistoryEntry) -> Result<()> {
        writeln!(self.file, "{}", entry.csv_line())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryEntry>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(Error::Format("missing history header".into()));
    }
    lines.filter(|l| !l.is_empty()).map(HistoryEntry::parse_csv_line).collect()
}
