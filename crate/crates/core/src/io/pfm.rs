//! Grayscale PFM ("Pf") reading and writing.
//!
//! Scanlines are stored bottom-to-top as the format prescribes; a negative
//! scale marks little-endian samples. Maps are written with scale -1.0.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

pub fn write_pfm(path: &Path, map: &Grid<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        write!(w, "Pf\n{} {}\n-1.0\n", map.width(), map.height())?;
        for y in (0..map.height()).rev() {
            for &v in map.row(y) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path_str(path), e))
}

pub fn read_pfm(path: &Path) -> Result<Grid<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut reader = BufReader::new(file);
    let magic = read_line_token(path, &mut reader)?;
    if magic != "Pf" {
        return Err(Error::format(
            path_str(path),
            format!("expected Pf magic, got {magic:?} (color PF is unsupported)"),
        ));
    }
    let dims = read_line_token(path, &mut reader)?;
    let mut it = dims.split_whitespace();
    let width: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path_str(path), "invalid width"))?;
    let height: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path_str(path), "invalid height"))?;
    let scale: f32 = read_line_token(path, &mut reader)?
        .trim()
        .parse()
        .map_err(|_| Error::format(path_str(path), "invalid scale"))?;
    if width == 0 || height == 0 {
        return Err(Error::format(path_str(path), "invalid PFM dimensions"));
    }
    let little_endian = scale < 0.0;

    let mut buf = vec![0u8; width * height * 4];
    reader
        .read_exact(&mut buf)
        .map_err(|e| Error::io(path_str(path), e))?;
    let mut grid = Grid::new(width, height, 0.0f32);
    let mut offset = 0;
    for y in (0..height).rev() {
        let row = grid.row_mut(y);
        for v in row.iter_mut() {
            let b = [buf[offset], buf[offset + 1], buf[offset + 2], buf[offset + 3]];
            *v = if little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            offset += 4;
        }
    }
    Ok(grid)
}

fn read_line_token(path: &Path, reader: &mut BufReader<File>) -> Result<String> {
    let mut line = String::new();
    loop {
        let mut byte = [0u8; 1];
        reader
            .read_exact(&mut byte)
            .map_err(|e| Error::io(path_str(path), e))?;
        if byte[0] == b'\n' {
            return Ok(line.trim().to_string());
        }
        line.push(byte[0] as char);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let mut map = Grid::new(5, 4, 0.0f32);
        for (i, v) in map.data_mut().iter_mut().enumerate() {
            *v = (i as f32 - 7.5) * 13.25;
        }
        write_pfm(&path, &map).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(map.data(), back.data());
    }

    #[test]
    fn reads_big_endian_when_scale_positive() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_be_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let grid = read_pfm(&path).unwrap();
        assert_eq!(grid.get(0, 0), 1.5);
        assert_eq!(grid.get(1, 0), -2.0);
    }
}
