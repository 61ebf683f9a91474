//! Binary (P5) PGM reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Writes intensities in [0,1] as 8-bit binary PGM.
pub fn write_pgm8(path: &Path, image: &Grid<f32>) -> Result<()> {
    write_bytes(path, image.width(), image.height(), 255, |out| {
        for &v in image.data() {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    })
}

/// Writes intensities in [0,1] as 16-bit (big-endian) binary PGM.
pub fn write_pgm16(path: &Path, image: &Grid<f32>) -> Result<()> {
    write_bytes(path, image.width(), image.height(), 65535, |out| {
        for &v in image.data() {
            let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
    })
}

/// Writes a boolean mask as 8-bit PGM (255 = true, 0 = false).
pub fn write_pgm_mask(path: &Path, mask: &Grid<bool>) -> Result<()> {
    write_bytes(path, mask.width(), mask.height(), 255, |out| {
        for &v in mask.data() {
            out.push(if v { 255 } else { 0 });
        }
    })
}

fn write_bytes(
    path: &Path,
    width: usize,
    height: usize,
    maxval: u32,
    fill: impl FnOnce(&mut Vec<u8>),
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut w = BufWriter::new(file);
    let mut bytes = Vec::with_capacity(width * height * if maxval > 255 { 2 } else { 1 });
    fill(&mut bytes);
    (|| -> std::io::Result<()> {
        write!(w, "P5\n{width} {height}\n{maxval}\n")?;
        w.write_all(&bytes)?;
        w.flush()
    })()
    .map_err(|e| Error::io(path_str(path), e))
}

/// Reads a binary PGM into [0,1] intensities (normalized by maxval).
pub fn read_pgm(path: &Path) -> Result<Grid<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut reader = BufReader::new(file);
    let (width, height, maxval) = read_header(path, &mut reader)?;
    let n = width * height;
    let mut data = Vec::with_capacity(n);
    if maxval > 255 {
        let mut buf = vec![0u8; n * 2];
        reader
            .read_exact(&mut buf)
            .map_err(|e| Error::io(path_str(path), e))?;
        for c in buf.chunks_exact(2) {
            data.push(u16::from_be_bytes([c[0], c[1]]) as f32 / maxval as f32);
        }
    } else {
        let mut buf = vec![0u8; n];
        reader
            .read_exact(&mut buf)
            .map_err(|e| Error::io(path_str(path), e))?;
        for b in buf {
            data.push(b as f32 / maxval as f32);
        }
    }
    Ok(Grid::from_vec(width, height, data))
}

/// Reads an 8-bit PGM as a boolean mask (values >= 128 are true).
pub fn read_pgm_mask(path: &Path) -> Result<Grid<bool>> {
    let gray = read_pgm(path)?;
    let data = gray.data().iter().map(|&v| v >= 0.5).collect();
    Ok(Grid::from_vec(gray.width(), gray.height(), data))
}

fn read_header(path: &Path, reader: &mut BufReader<File>) -> Result<(usize, usize, u32)> {
    let magic = read_token(path, reader)?;
    if magic != "P5" {
        return Err(Error::format(
            path_str(path),
            format!("expected P5 magic, got {magic:?}"),
        ));
    }
    let width: usize = parse_token(path, reader, "width")?;
    let height: usize = parse_token(path, reader, "height")?;
    let maxval: u32 = parse_token(path, reader, "maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(path_str(path), "invalid PGM dimensions"));
    }
    Ok((width, height, maxval))
}

fn parse_token<T: std::str::FromStr>(
    path: &Path,
    reader: &mut BufReader<File>,
    what: &str,
) -> Result<T> {
    read_token(path, reader)?
        .parse()
        .map_err(|_| Error::format(path_str(path), format!("invalid {what}")))
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
/// Consumes exactly one trailing whitespace byte, as PNM requires.
fn read_token(path: &Path, reader: &mut BufReader<File>) -> Result<String> {
    let mut token = String::new();
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        reader
            .read_exact(&mut byte)
            .map_err(|e| Error::io(path_str(path), e))?;
        let c = byte[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' {
            in_comment = true;
            continue;
        }
        if c.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            return Ok(token);
        }
        token.push(c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn pgm8_round_trip_is_exact_on_quantized_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let mut img = Grid::new(7, 5, 0.0f32);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f32 / 255.0;
        }
        write_pgm8(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(img.data(), back.data());
    }

    #[test]
    fn pgm16_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("b.pgm");
        let mut img = Grid::new(3, 2, 0.0f32);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i * 9999 % 65536) as f32 / 65535.0;
        }
        write_pgm16(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = Grid::from_vec(3, 2, vec![true, false, true, true, false, false]);
        write_pgm_mask(&path, &mask).unwrap();
        assert_eq!(read_pgm_mask(&path).unwrap().data(), mask.data());
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P2\n2 2\n255\n0 0 0 0\n").unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Format { .. })));
    }
}
