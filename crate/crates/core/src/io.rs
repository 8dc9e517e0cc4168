//! Frame and grid files.
//!
//! * Frames: binary PNM, `P6` for three channels and `P5` for one, maxval
//!   255. Values are rounded to the nearest integer on export.
//! * Grids: a raw little-endian `f64` container. The first eight values are a
//!   header `[magic, version, H, W, C, scale, 0, 0]` followed by `H·W·C`
//!   values in `HWC` order. Real values round-trip bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{Frame, Grid, PIXEL_MAX};

/// ASCII "GRID" read as a big-endian integer.
pub const GRID_MAGIC: f64 = 1_196_575_044.0;
pub const GRID_VERSION: f64 = 1.0;
const HEADER_LEN: usize = 8;

pub fn save_ppm(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    fs::write(path, encode_ppm(frame))?;
    Ok(())
}

pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let (h, w, c) = frame.shape();
    let tag = if c == 3 { "P6" } else { "P5" };
    let mut out = format!("{tag}\n{w} {h}\n255\n").into_bytes();
    out.extend(frame.data().iter().map(|v| v.round().clamp(0.0, PIXEL_MAX) as u8));
    out
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::BadMagic(_) => Error::BadMagic(path.display().to_string()),
        other => other,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Frame> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::BadDimensions("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P6" => 3,
        "P5" => 1,
        _ => return Err(Error::BadMagic("pnm".into())),
    };
    let parse = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::BadDimensions(format!("not a number: {s}")))
    };
    let w = parse(token()?)?;
    let h = parse(token()?)?;
    let maxval = parse(token()?)?;
    if maxval != 255 || w == 0 || h == 0 {
        return Err(Error::BadDimensions(format!("{w}x{h} maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = w * h * channels;
    if bytes.len() < start + n {
        return Err(Error::BadDimensions("raster shorter than header claims".into()));
    }
    let data = bytes[start..start + n].iter().map(|&b| b as f64).collect();
    Frame::new(Grid::from_vec(h, w, channels, data)?)
}

pub fn save_grid(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_grid(grid))?;
    Ok(())
}

pub fn encode_grid(grid: &Grid) -> Vec<u8> {
    let (h, w, c) = grid.shape();
    let header = [
        GRID_MAGIC,
        GRID_VERSION,
        h as f64,
        w as f64,
        c as f64,
        PIXEL_MAX,
        0.0,
        0.0,
    ];
    let mut out = Vec::with_capacity((HEADER_LEN + grid.len()) * 8);
    for v in header.iter().chain(grid.data()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    decode_grid(&fs::read(path)?).map_err(|e| match e {
        Error::BadMagic(_) => Error::BadMagic(path.display().to_string()),
        other => other,
    })
}

pub fn decode_grid(bytes: &[u8]) -> Result<Grid> {
    if bytes.len() % 8 != 0 || bytes.len() < HEADER_LEN * 8 {
        return Err(Error::BadDimensions(format!("{} bytes", bytes.len())));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    if vals[0] != GRID_MAGIC {
        return Err(Error::BadMagic("grid".into()));
    }
    if vals[1] != GRID_VERSION {
        return Err(Error::BadDimensions(format!("version {}", vals[1])));
    }
    let dim = |v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
            Ok(v as usize)
        } else {
            Err(Error::BadDimensions(format!("dimension {v}")))
        }
    };
    let (h, w, c) = (dim(vals[2])?, dim(vals[3])?, dim(vals[4])?);
    let body = &vals[HEADER_LEN..];
    if body.len() != h * w * c {
        return Err(Error::BadDimensions(format!(
            "{h}x{w}x{c} header but {} values",
            body.len()
        )));
    }
    Grid::from_vec(h, w, c, body.to_vec())
}
