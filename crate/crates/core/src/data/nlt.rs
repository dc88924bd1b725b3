//! `.nlt` transient files: a text header of `key: value` lines closed by a
//! blank line, then `rows * cols * bins` little-endian `f32` values ordered
//! (row, col, bin).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::geometry::Vec3;
use super::transient::{DataError, TransientVolume, WallGrid};

pub const NLT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NltError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported nlt version {0} (this build reads version {NLT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("payload holds {got} bytes, header implies {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("invalid volume: {0}")]
    Data(#[from] DataError),
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn encode_transients(tau: &TransientVolume) -> Vec<u8> {
    let wall = tau.wall();
    let (rows, cols) = wall.dims();
    let n = wall.normal();
    let mut out = String::new();
    out.push_str(&format!("nlt_version: {NLT_VERSION}\n"));
    out.push_str(&format!("rows: {rows}\ncols: {cols}\nbins: {}\n", tau.bins()));
    out.push_str(&format!("bin_width_ps: {}\n", tau.bin_width_ps()));
    if tau.bin_offset() != 0 {
        out.push_str(&format!("bin_offset: {}\n", tau.bin_offset()));
    }
    out.push_str(&format!("wall_normal: {}\n", join([n.x, n.y, n.z])));
    out.push_str(&format!(
        "wall_positions: {}\n\n",
        join(wall.positions().flat_map(|p| [p.x, p.y, p.z]))
    ));
    let mut bytes = out.into_bytes();
    bytes.reserve(tau.data().len() * 4);
    for v in tau.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn header_end(bytes: &[u8]) -> Option<usize> {
    bytes.windows(2).position(|w| w == b"\n\n").map(|i| i + 2)
}

fn parse_num<T: std::str::FromStr>(fields: &BTreeMap<String, String>, key: &str) -> Result<T, NltError> {
    let raw = fields
        .get(key)
        .ok_or_else(|| NltError::MalformedHeader(format!("missing key `{key}`")))?;
    raw.parse()
        .map_err(|_| NltError::MalformedHeader(format!("`{key}` has invalid value `{raw}`")))
}

fn parse_floats(fields: &BTreeMap<String, String>, key: &str) -> Result<Vec<f64>, NltError> {
    let raw = fields
        .get(key)
        .ok_or_else(|| NltError::MalformedHeader(format!("missing key `{key}`")))?;
    raw.split_whitespace()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| NltError::MalformedHeader(format!("`{key}` has invalid number `{s}`")))
        })
        .collect()
}

pub fn decode_transients(bytes: &[u8]) -> Result<TransientVolume, NltError> {
    let end = header_end(bytes).ok_or_else(|| NltError::MalformedHeader("no blank line ends the header".into()))?;
    let header =
        std::str::from_utf8(&bytes[..end]).map_err(|_| NltError::MalformedHeader("header is not utf-8".into()))?;
    let mut fields = BTreeMap::new();
    for line in header.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| NltError::MalformedHeader(format!("line without `:`: `{line}`")))?;
        if fields.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(NltError::MalformedHeader(format!("duplicate key `{}`", k.trim())));
        }
    }
    let version: u32 = parse_num(&fields, "nlt_version")?;
    if version != NLT_VERSION {
        return Err(NltError::UnsupportedVersion(version));
    }
    let rows: usize = parse_num(&fields, "rows")?;
    let cols: usize = parse_num(&fields, "cols")?;
    let bins: usize = parse_num(&fields, "bins")?;
    let bin_width_ps: f64 = parse_num(&fields, "bin_width_ps")?;
    let bin_offset: usize = if fields.contains_key("bin_offset") {
        parse_num(&fields, "bin_offset")?
    } else {
        0
    };
    let n = parse_floats(&fields, "wall_normal")?;
    if n.len() != 3 {
        return Err(NltError::MalformedHeader("wall_normal needs 3 numbers".into()));
    }
    let p = parse_floats(&fields, "wall_positions")?;
    if p.len() != 3 * rows * cols {
        return Err(NltError::MalformedHeader(format!(
            "wall_positions has {} numbers, expected {}",
            p.len(),
            3 * rows * cols
        )));
    }
    let payload = &bytes[end..];
    let expected = rows * cols * bins * 4;
    if payload.len() != expected {
        return Err(NltError::SizeMismatch {
            expected,
            got: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let positions = p.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    let wall = WallGrid::new(positions, Vec3::new(n[0], n[1], n[2]), rows, cols)?;
    Ok(TransientVolume::with_offset(
        data,
        bins,
        bin_width_ps,
        bin_offset,
        wall,
    )?)
}

pub fn save_transients(path: impl AsRef<Path>, tau: &TransientVolume) -> Result<(), NltError> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    f.write_all(&encode_transients(tau))?;
    f.flush()?;
    Ok(())
}

pub fn load_transients(path: impl AsRef<Path>) -> Result<TransientVolume, NltError> {
    decode_transients(&fs::read(path)?)
}
