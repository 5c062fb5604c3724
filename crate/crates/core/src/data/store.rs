//! Binary files for preprocessed windows and materialised pretext samples.
//!
//! Both formats start with an 8-byte magic and a u32 version, followed by
//! u32 count, u32 N, u32 M. All numbers are little endian.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::signal::Window;
use crate::transforms::PretextSample;

const WINDOWS_MAGIC: &[u8; 8] = b"PSSLWIN\0";
const PRETEXT_MAGIC: &[u8; 8] = b"PSSLPTX\0";
const VERSION: u32 = 1;
const NO_LABEL: u32 = u32::MAX;

fn header(magic: &[u8; 8], count: usize, n: usize, m: usize) -> Vec<u8> {
    let mut b = magic.to_vec();
    for v in [VERSION, count as u32, n as u32, m as u32] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

fn push_values(b: &mut Vec<u8>, values: &Array2<f64>) {
    for &v in values.iter() {
        b.extend_from_slice(&v.to_le_bytes());
    }
}

fn shape_of<'a>(mut it: impl Iterator<Item = &'a Array2<f64>>) -> Result<(usize, usize)> {
    let Some(first) = it.next() else { return Ok((0, 0)) };
    let dim = first.dim();
    if let Some(other) = it.find(|a| a.dim() != dim) {
        return Err(Error::ShapeMismatch {
            name: "window".into(),
            expected: vec![dim.0, dim.1],
            found: vec![other.nrows(), other.ncols()],
        });
    }
    Ok(dim)
}

pub fn encode_windows(windows: &[Window]) -> Result<Vec<u8>> {
    let (n, m) = shape_of(windows.iter().map(|w| &w.values))?;
    let mut b = header(WINDOWS_MAGIC, windows.len(), n, m);
    for w in windows {
        let id = w.subject_id.as_bytes();
        b.extend_from_slice(&(id.len() as u16).to_le_bytes());
        b.extend_from_slice(id);
        b.extend_from_slice(&w.label.unwrap_or(NO_LABEL).to_le_bytes());
        b.extend_from_slice(&w.t_start.to_le_bytes());
        push_values(&mut b, &w.values);
    }
    Ok(b)
}

pub fn encode_pretext(samples: &[PretextSample]) -> Result<Vec<u8>> {
    let (n, m) = shape_of(samples.iter().map(|s| &s.values))?;
    let mut b = header(PRETEXT_MAGIC, samples.len(), n, m);
    for s in samples {
        if s.transform_labels.len() != m {
            return Err(Error::input("pretext sample needs one label per modality"));
        }
        b.extend_from_slice(&(s.source_window_id as u32).to_le_bytes());
        b.extend(s.transform_labels.iter().map(|&l| l as u8));
        push_values(&mut b, &s.values);
    }
    Ok(b)
}

struct Cursor<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < k {
            return Err(Error::input(format!("{}: truncated at byte {}", self.path.display(), self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn values(&mut self, n: usize, m: usize) -> Result<Array2<f64>> {
        let raw = self.take(n * m * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Array2::from_shape_vec((n, m), data).expect("length checked"))
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<(usize, usize, usize)> {
        if self.take(8)? != magic {
            return Err(Error::input(format!("{}: unexpected file type", self.path.display())));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(Error::input(format!("{}: unsupported version {v}", self.path.display())));
        }
        Ok((self.u32()? as usize, self.u32()? as usize, self.u32()? as usize))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::input(format!("{}: trailing bytes", self.path.display())));
        }
        Ok(())
    }
}

pub fn decode_windows(path: &Path, buf: &[u8]) -> Result<Vec<Window>> {
    let mut c = Cursor { path, buf, pos: 0 };
    let (count, n, m) = c.header(WINDOWS_MAGIC)?;
    let mut out = Vec::with_capacity(count.min(buf.len()));
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let subject_id = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::input(format!("{}: subject id is not UTF-8", path.display())))?;
        let label = Some(c.u32()?).filter(|&l| l != NO_LABEL);
        let t_start = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
        let values = c.values(n, m)?;
        out.push(Window { values, subject_id, label, t_start });
    }
    c.finish()?;
    Ok(out)
}

pub fn decode_pretext(path: &Path, buf: &[u8]) -> Result<Vec<PretextSample>> {
    let mut c = Cursor { path, buf, pos: 0 };
    let (count, n, m) = c.header(PRETEXT_MAGIC)?;
    let mut out = Vec::with_capacity(count.min(buf.len()));
    for _ in 0..count {
        let source_window_id = c.u32()? as usize;
        let transform_labels = c.take(m)?.iter().map(|&l| l as usize).collect();
        let values = c.values(n, m)?;
        out.push(PretextSample { values, transform_labels, source_window_id });
    }
    c.finish()?;
    Ok(out)
}

/// Write `windows.bin` plus a `windows.csv` index into `dir`.
pub fn write_windows(dir: &Path, windows: &[Window]) -> Result<()> {
    write_atomic(&dir.join("windows.bin"), &encode_windows(windows)?)?;
    let mut csv = String::from("window_id,subject_id,label,t_start\n");
    for (i, w) in windows.iter().enumerate() {
        let label = w.label.map(|l| l.to_string()).unwrap_or_default();
        csv.push_str(&format!("{i},{},{label},{}\n", w.subject_id, w.t_start));
    }
    write_atomic(&dir.join("windows.csv"), csv.as_bytes())
}

pub fn read_windows(dir: &Path) -> Result<Vec<Window>> {
    let path = dir.join("windows.bin");
    let buf = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    decode_windows(&path, &buf)
}

/// Write `pretext.bin` plus an `index.csv` (`sample_id,window_id,label`) into `dir`.
///
/// The label column joins per-modality labels with `|` when they differ.
pub fn write_pretext(dir: &Path, samples: &[PretextSample]) -> Result<()> {
    write_atomic(&dir.join("pretext.bin"), &encode_pretext(samples)?)?;
    let mut csv = String::from("sample_id,window_id,label\n");
    for (i, s) in samples.iter().enumerate() {
        let label = if s.transform_labels.iter().all(|&l| l == s.transform_labels[0]) {
            s.transform_labels[0].to_string()
        } else {
            s.transform_labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("|")
        };
        csv.push_str(&format!("{i},{},{label}\n", s.source_window_id));
    }
    write_atomic(&dir.join("index.csv"), csv.as_bytes())
}

pub fn read_pretext(dir: &Path) -> Result<Vec<PretextSample>> {
    let path = dir.join("pretext.bin");
    let buf = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    decode_pretext(&path, &buf)
}
