//! LSEF1 field files: a `LSEF1` magic line, a `dim points half_width`
//! header line, then `points^dim` little-endian `f64` values in row-major
//! order (last axis fastest).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub const MAGIC: &str = "LSEF1";

/// Serializes `u` into the LSEF1 byte layout.
pub fn encode_field(grid: &Grid, u: &Field) -> Result<Vec<u8>> {
    grid.ensure_same(u.grid())?;
    let header = format!(
        "{MAGIC}\n{} {} {}\n",
        grid.dim(),
        grid.points_per_dim(),
        grid.half_width()
    );
    let mut bytes = Vec::with_capacity(header.len() + 8 * u.len());
    bytes.extend_from_slice(header.as_bytes());
    for x in u.values() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    Ok(bytes)
}

fn take_line<'a>(bytes: &'a [u8], what: &str) -> Result<(&'a str, &'a [u8])> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format(format!("missing {what} line")))?;
    let line = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Format(format!("{what} line is not UTF-8")))?;
    Ok((line, &bytes[end + 1..]))
}

/// Header grid of an LSEF1 byte stream and the payload that follows it.
fn decode_header(bytes: &[u8]) -> Result<(Grid, &[u8])> {
    if !bytes.starts_with(MAGIC.as_bytes()) {
        let shown = String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned();
        return Err(Error::Format(format!(
            "bad magic {shown:?}, expected {MAGIC:?}"
        )));
    }
    let (magic, rest) = take_line(bytes, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let (header, payload) = take_line(rest, "header")?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.len() != 3 {
        return Err(Error::Format(format!(
            "header {header:?} should read `dim points half_width`"
        )));
    }
    let bad = |what: &str| Error::Format(format!("header field {what} unreadable in {header:?}"));
    let dim: usize = parts[0].parse().map_err(|_| bad("dim"))?;
    let points: usize = parts[1].parse().map_err(|_| bad("points"))?;
    let half_width: f64 = parts[2].parse().map_err(|_| bad("half_width"))?;
    Ok((Grid::new(dim, half_width, points)?, payload))
}

/// Inverse of `encode_field`.
pub fn decode_field(bytes: &[u8]) -> Result<(Grid, Field)> {
    let (grid, payload) = decode_header(bytes)?;
    let expected = grid.len() * 8;
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "truncated payload: {} bytes, header {} implies {expected}",
            payload.len(),
            grid.describe()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "dimension mismatch: payload holds {} bytes, header {} implies {expected}",
            payload.len(),
            grid.describe()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let field = Field::new(grid, values)?;
    Ok((grid, field))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn write_field(path: impl AsRef<Path>, grid: &Grid, u: &Field) -> Result<()> {
    write_atomic(path.as_ref(), &encode_field(grid, u)?)
}

pub fn read_field(path: impl AsRef<Path>) -> Result<(Grid, Field)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes)
}

/// Header grid only; the payload is not read.
pub fn read_header(path: impl AsRef<Path>) -> Result<Grid> {
    use std::io::Read;
    let path = path.as_ref();
    let mut head = Vec::new();
    fs::File::open(path)
        .and_then(|f| f.take(256).read_to_end(&mut head))
        .map_err(|e| Error::io(path, e))?;
    decode_header(&head).map(|(g, _)| g)
}
