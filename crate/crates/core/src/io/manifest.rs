//! Plain-text `key=value` manifest describing one rendered sequence: the
//! rig parameters, the pattern sidecar, and the frame / ground-truth file
//! lists in temporal order.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::RigModel;

#[derive(Debug, Clone)]
pub struct SequenceManifest {
    pub rig: RigModel,
    /// Pattern PGM path, relative to the manifest directory. The sidecar
    /// header sits next to it with a `.txt` extension.
    pub pattern: PathBuf,
    pub frames: Vec<PathBuf>,
    pub gt_disp: Vec<PathBuf>,
    pub gt_valid: Vec<PathBuf>,
    /// Directory holding the manifest; all listed paths resolve against it.
    pub root: PathBuf,
}

impl SequenceManifest {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn pattern_path(&self) -> PathBuf {
        self.root.join(&self.pattern)
    }

    pub fn frame_path(&self, t: usize) -> PathBuf {
        self.root.join(&self.frames[t])
    }

    pub fn gt_disp_path(&self, t: usize) -> PathBuf {
        self.root.join(&self.gt_disp[t])
    }

    pub fn gt_valid_path(&self, t: usize) -> PathBuf {
        self.root.join(&self.gt_valid[t])
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("width={}\n", self.rig.width));
        out.push_str(&format!("height={}\n", self.rig.height));
        out.push_str(&format!("focal_px={}\n", self.rig.focal_px));
        out.push_str(&format!("baseline_m={}\n", self.rig.baseline_m));
        out.push_str(&format!("d_min={}\n", self.rig.d_min));
        out.push_str(&format!("d_max={}\n", self.rig.d_max));
        out.push_str(&format!("downsample_factor={}\n", self.rig.downsample_factor));
        out.push_str(&format!("pattern={}\n", self.pattern.display()));
        out.push_str(&format!("n_frames={}\n", self.frames.len()));
        for (t, p) in self.frames.iter().enumerate() {
            out.push_str(&format!("frame_{t:04}={}\n", p.display()));
        }
        for (t, p) in self.gt_disp.iter().enumerate() {
            out.push_str(&format!("gt_{t:04}={}\n", p.display()));
        }
        for (t, p) in self.gt_valid.iter().enumerate() {
            out.push_str(&format!("gt_valid_{t:04}={}\n", p.display()));
        }
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let p = path.display().to_string();
        let mut kv = HashMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(&p, format!("line {}: missing '='", no + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }

        let get = |key: &str| -> Result<&String> {
            kv.get(key)
                .ok_or_else(|| Error::format(&p, format!("missing key {key}")))
        };
        let parse_f = |key: &str| -> Result<f64> {
            get(key)?
                .parse()
                .map_err(|_| Error::format(&p, format!("bad float for {key}")))
        };
        let parse_u = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::format(&p, format!("bad integer for {key}")))
        };

        let rig = RigModel::new(
            parse_f("focal_px")?,
            parse_f("baseline_m")?,
            parse_u("width")?,
            parse_u("height")?,
            parse_f("d_min")?,
            parse_f("d_max")?,
            parse_u("downsample_factor")?,
        )?;
        let n_frames = parse_u("n_frames")?;
        let mut frames = Vec::with_capacity(n_frames);
        let mut gt_disp = Vec::with_capacity(n_frames);
        let mut gt_valid = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            frames.push(PathBuf::from(get(&format!("frame_{t:04}"))?));
            gt_disp.push(PathBuf::from(get(&format!("gt_{t:04}"))?));
            gt_valid.push(PathBuf::from(get(&format!("gt_valid_{t:04}"))?));
        }
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(SequenceManifest {
            rig,
            pattern: PathBuf::from(get("pattern")?),
            frames,
            gt_disp,
            gt_valid,
            root,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn write_read_round_trip() {
        let dir = tempdir().unwrap();
        let rig = RigModel::new(600.0, 0.218, 640, 480, 40.0, 200.0, 8).unwrap();
        let m = SequenceManifest {
            rig: rig.clone(),
            pattern: PathBuf::from("pattern.pgm"),
            frames: (0..3).map(|t| PathBuf::from(format!("frames/frame_{t:04}.pgm"))).collect(),
            gt_disp: (0..3).map(|t| PathBuf::from(format!("gt/disp_{t:04}.pfm"))).collect(),
            gt_valid: (0..3).map(|t| PathBuf::from(format!("gt/valid_{t:04}.pgm"))).collect(),
            root: dir.path().to_path_buf(),
        };
        let path = dir.path().join("manifest.txt");
        m.write(&path).unwrap();
        let back = SequenceManifest::read(&path).unwrap();
        assert_eq!(back.rig, rig);
        assert_eq!(back.n_frames(), 3);
        assert_eq!(back.frame_path(2), dir.path().join("frames/frame_0002.pgm"));
        assert_eq!(back.pattern_path(), dir.path().join("pattern.pgm"));
    }

    #[test]
    fn missing_key_is_a_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("broken.txt");
        std::fs::write(&path, "width=4\n").unwrap();
        assert!(matches!(
            SequenceManifest::read(&path),
            Err(Error::Format { .. })
        ));
    }
}
