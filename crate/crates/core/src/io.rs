//! File formats: 16-bit binary PGM mosaics and atomic output writes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::DynamicImage;
use thiserror::Error;

use crate::polarimetry::{MosaicFrame, MosaicPattern};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
}

impl From<std::io::Error> for IoError {
    fn from(source: std::io::Error) -> Self {
        IoError::Io {
            path: String::new(),
            source,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<(), IoError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), IoError>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush().map_err(io_err(path))?;
    }
    tmp.persist(path).map_err(|e| IoError::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

pub fn write_text_atomic(path: &Path, text: &str) -> Result<(), IoError> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

/// Quantizes to `u16` (round, clamp to `[0, 65535]`) and writes a binary P5 PGM.
pub fn write_pgm16(path: &Path, frame: &MosaicFrame) -> Result<(), IoError> {
    let bytes = encode_pgm16(frame)?;
    write_atomic(path, |w| Ok(w.write_all(&bytes)?))
}

/// `P5` header followed by big-endian 16-bit samples, maxval 65535.
pub fn encode_pgm16(frame: &MosaicFrame) -> Result<Vec<u8>, IoError> {
    let header = format!("P5\n{} {}\n65535\n", frame.width, frame.height);
    let mut out = Vec::with_capacity(header.len() + 2 * frame.data.len());
    out.extend_from_slice(header.as_bytes());
    for v in &frame.data {
        out.extend_from_slice(&quantize(*v).to_be_bytes());
    }
    Ok(out)
}

pub fn quantize(v: f64) -> u16 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 65535.0) as u16
    }
}

/// Reads an 8- or 16-bit grayscale PGM into a mosaic with the given layout.
pub fn read_pgm(path: &Path, pattern: MosaicPattern) -> Result<MosaicFrame, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_pgm(&bytes, pattern)
}

pub fn decode_pgm(bytes: &[u8], pattern: MosaicPattern) -> Result<MosaicFrame, IoError> {
    if !bytes.starts_with(b"P5") {
        return Err(IoError::Format("expected binary PGM (P5)".into()));
    }
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Pnm)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        other => {
            return Err(IoError::Format(format!(
                "expected grayscale PGM, got {:?}",
                other.color()
            )))
        }
    };
    Ok(MosaicFrame::new(w, h, data, pattern))
}
