use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

pub const LMK_MAGIC: &[u8; 4] = b"LMK1";

/// Flattened per-frame width of the reference landmark layout.
pub const DEFAULT_FRAME_WIDTH: usize = 276;

/// A `T × (F·C)` keypoint time series. Coordinate channel 0 is x and
/// channel 1 is y; further channels (depth, visibility) are carried along.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSequence {
    pub id: String,
    frames: usize,
    keypoints: usize,
    coords: usize,
    data: Vec<f64>,
}

impl LandmarkSequence {
    pub fn new(id: impl Into<String>, frames: usize, keypoints: usize, coords: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || keypoints == 0 || coords == 0 {
            return invalid(format!("landmark dims must be positive, got T={frames} F={keypoints} C={coords}"));
        }
        if data.len() != frames * keypoints * coords {
            return invalid(format!(
                "landmark data has {} values, expected T*F*C = {}",
                data.len(),
                frames * keypoints * coords
            ));
        }
        let width = keypoints * coords;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite landmark value at row {}", i / width));
        }
        Ok(Self {
            id: id.into(),
            frames,
            keypoints,
            coords,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn keypoints(&self) -> usize {
        self.keypoints
    }

    pub fn coords(&self) -> usize {
        self.coords
    }

    pub fn width(&self) -> usize {
        self.keypoints * self.coords
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.width();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn get(&self, t: usize, f: usize, c: usize) -> f64 {
        self.data[(t * self.keypoints + f) * self.coords + c]
    }

    /// Same dimensions, new values; used by the augmentation ops.
    pub fn with_data(&self, frames: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(self.id.clone(), frames, self.keypoints, self.coords, data)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.frames, self.width(), self.data.clone()).expect("validated dims")
    }

    /// Encodes as `LMK1`; values are stored as single precision.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(LMK_MAGIC);
        for d in [self.frames, self.keypoints, self.coords] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != LMK_MAGIC {
            return Err(Error::Format("bad landmark magic, expected LMK1".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (t, f, c) = (dim(0), dim(1), dim(2));
        if t == 0 || f == 0 || c == 0 {
            return Err(Error::Format(format!("degenerate landmark header T={t} F={f} C={c}")));
        }
        let payload = &bytes[16..];
        let row_bytes = f * c * 4;
        if payload.len() % row_bytes != 0 || payload.len() / row_bytes != t {
            return Err(Error::Format(format!(
                "landmark header claims T={t} rows of width {} but the payload holds {} rows ({} bytes)",
                f * c,
                payload.len() as f64 / row_bytes as f64,
                payload.len()
            )));
        }
        let mut data = Vec::with_capacity(t * f * c);
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format(format!("non-finite landmark value at row {}", i / (f * c))));
            }
            data.push(f64::from(v));
        }
        Self::new(id, t, f, c, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Loads a file; the sample id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_bytes(id, &fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn bytes_round_trip(t in 1usize..6, f in 1usize..5, c in 1usize..4, seed in any::<u32>()) {
            let n = t * f * c;
            let data: Vec<f64> = (0..n).map(|i| f64::from(((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / 1e9)).collect();
            let s = LandmarkSequence::new("s", t, f, c, data).unwrap();
            let bytes = s.to_bytes();
            let back = LandmarkSequence::from_bytes("s", &bytes).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn row_count_mismatch_reports_counts() {
        let s = LandmarkSequence::new("s", 10, 2, 2, vec![0.5; 40]).unwrap();
        let mut bytes = s.to_bytes();
        bytes.truncate(bytes.len() - 16);
        let msg = LandmarkSequence::from_bytes("s", &bytes).unwrap_err().to_string();
        assert!(msg.contains("T=10") && msg.contains("9 rows"), "{msg}");
    }

    #[test]
    fn bad_magic_and_non_finite() {
        let s = LandmarkSequence::new("s", 3, 1, 2, vec![0.0; 6]).unwrap();
        let mut bytes = s.to_bytes();
        bytes[3] = b'2';
        assert!(LandmarkSequence::from_bytes("s", &bytes).is_err());

        let mut bytes = s.to_bytes();
        let off = 16 + 4 * 4; // row 2, first value
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let msg = LandmarkSequence::from_bytes("s", &bytes).unwrap_err().to_string();
        assert!(msg.contains("row 2"), "{msg}");
    }

    #[test]
    fn default_width_is_accepted() {
        let s = LandmarkSequence::new("s", 4, 138, 2, vec![0.25; 4 * DEFAULT_FRAME_WIDTH]).unwrap();
        assert_eq!(s.width(), DEFAULT_FRAME_WIDTH);
        let back = LandmarkSequence::from_bytes("s", &s.to_bytes()).unwrap();
        assert_eq!(back.to_tensor().shape(), [4, 276]);
    }
}
