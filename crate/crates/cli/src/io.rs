//! Image and array files: raw little-endian f64 with a JSON sidecar, and
//! PGM previews.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Contents of the `.json` file next to every `.f64` array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: [usize; 2],
    pub dtype: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Row-major image with its dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> CliResult<Self> {
        if data.len() != height * width {
            return Err(CliError::Format(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` atomically through a temporary sibling.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_f64(path: &Path, img: &Image, config_hash: Option<&str>) -> CliResult<()> {
    let bytes: Vec<u8> = img.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(path, &bytes)?;
    let meta = Sidecar {
        shape: [img.height, img.width],
        dtype: "f64".into(),
        order: "row-major".into(),
        config_hash: config_hash.map(str::to_owned),
    };
    write_atomic(
        &sidecar_path(path),
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )
}

pub fn read_f64(path: &Path) -> CliResult<Image> {
    let meta_path = sidecar_path(path);
    let meta: Sidecar = serde_json::from_str(
        &fs::read_to_string(&meta_path).map_err(|e| CliError::io(&meta_path, e))?,
    )?;
    if meta.dtype != "f64" || meta.order != "row-major" {
        return Err(CliError::Format(format!(
            "{}: unsupported dtype/order {}/{}",
            meta_path.display(),
            meta.dtype,
            meta.order
        )));
    }
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(CliError::Format(format!(
            "{}: length not a multiple of 8",
            path.display()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Image::new(meta.shape[0], meta.shape[1], data)
}

/// Min-max rescaling to 16 bits; a constant image maps to zero.
pub fn to_u16(data: &[f64]) -> Vec<u16> {
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    data.iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect()
}

/// 16-bit binary PGM preview (big-endian samples).
pub fn write_pgm(path: &Path, img: &Image) -> CliResult<()> {
    let mut bytes = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    bytes.extend(to_u16(&img.data).into_iter().flat_map(u16::to_be_bytes));
    write_atomic(path, &bytes)
}

/// Reads a grayscale image (PGM, PNG) or an `.f64` array.
pub fn read_image(path: &Path) -> CliResult<Image> {
    if path.extension().is_some_and(|e| e == "f64") {
        return read_f64(path);
    }
    let img = image::ImageReader::open(path)
        .map_err(|e| CliError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| CliError::io(path, e))?
        .decode()?;
    let scale = if img.color().bytes_per_pixel() == img.color().channel_count() {
        257.0
    } else {
        1.0
    };
    let gray = img.into_luma16();
    let (w, h) = gray.dimensions();
    Image::new(
        h as usize,
        w as usize,
        gray.into_raw()
            .into_iter()
            .map(|v| f64::from(v) / scale)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f64");
        let img = Image::new(2, 3, vec![0.1, -2.5, f64::MIN_POSITIVE, 1e300, 0.0, 7.0]).unwrap();
        write_f64(&p, &img, Some("abc")).unwrap();
        assert_eq!(read_f64(&p).unwrap(), img);
        let meta: Sidecar =
            serde_json::from_str(&fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
        assert_eq!(meta.shape, [2, 3]);
        assert_eq!(meta.config_hash.as_deref(), Some("abc"));
    }

    #[test]
    fn pgm_preview_is_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let data = vec![3.0, -1.0, 10.0, 2.5, 2.5, 0.0];
        write_pgm(&p, &Image::new(2, 3, data.clone()).unwrap()).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!((back.height, back.width), (2, 3));
        assert_eq!(back.data[1], 0.0);
        assert_eq!(back.data[2], 65535.0);
        for i in 0..6 {
            for j in 0..6 {
                if data[i] < data[j] {
                    assert!(back.data[i] < back.data[j]);
                }
            }
        }
        assert_eq!(to_u16(&[4.0; 3]), vec![0; 3]);
    }

    #[test]
    fn eight_bit_pgm_keeps_its_levels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.pgm");
        let mut bytes = b"P5\n# comment\n3 1\n255\n".to_vec();
        bytes.extend([0u8, 17, 255]);
        fs::write(&p, bytes).unwrap();
        assert_eq!(read_image(&p).unwrap().data, vec![0.0, 17.0, 255.0]);
    }

    #[test]
    fn missing_files_are_reported() {
        let err = read_image(Path::new("/nonexistent/x.pgm")).unwrap_err();
        assert!(matches!(err, CliError::Io { .. }));
    }
}
