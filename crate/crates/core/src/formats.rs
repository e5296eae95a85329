//! On-disk formats: the `ECHO-REC` recording container, 8-bit PGM (P5)
//! images with a JSON comment line, and raw float32 image dumps.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::image::{Image, Mask};
use crate::matrix::Matrix;
use crate::sim::MultichannelRecording;

pub const RECORDING_MAGIC: &[u8; 16] = b"ECHO-REC\0v1\0\0\0\0\0";

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Magic, `u32` M, T, sample rate, M×T `f32` row-major, then the geometry as
/// a length-prefixed JSON trailer. All integers little-endian.
pub fn write_recording<W: Write>(w: &mut W, rec: &MultichannelRecording) -> Result<()> {
    rec.validate()?;
    let fs = rec.sample_rate_hz;
    if fs.fract() != 0.0 || fs <= 0.0 || fs > u32::MAX as f64 {
        return Err(Error::Format(format!("sample rate {fs} is not a u32")));
    }
    let m = u32::try_from(rec.samples.rows()).map_err(|_| Error::Format("too many channels".into()))?;
    let t = u32::try_from(rec.samples.cols()).map_err(|_| Error::Format("too many samples".into()))?;
    w.write_all(RECORDING_MAGIC)?;
    w.write_all(&m.to_le_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    w.write_all(&(fs as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(rec.samples.as_slice().len() * 4);
    for v in rec.samples.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    let trailer = serde_json::to_vec(&rec.geometry)?;
    w.write_all(&(trailer.len() as u32).to_le_bytes())?;
    w.write_all(&trailer)?;
    Ok(())
}

pub fn read_recording<R: Read>(r: &mut R) -> Result<MultichannelRecording> {
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic)?;
    if &magic != RECORDING_MAGIC {
        return Err(Error::Format("not an ECHO-REC v1 file".into()));
    }
    let m = read_u32(r)? as usize;
    let t = read_u32(r)? as usize;
    let fs = read_u32(r)? as f64;
    let mut raw = vec![0u8; m * t * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let len = read_u32(r)? as usize;
    let mut trailer = vec![0u8; len];
    r.read_exact(&mut trailer)?;
    let geometry: ArrayGeometry = serde_json::from_slice(&trailer)?;
    let rec = MultichannelRecording {
        samples: Matrix::from_vec(m, t, data)?,
        sample_rate_hz: fs,
        geometry,
    };
    rec.validate()?;
    Ok(rec)
}

/// Writes an 8-bit binary PGM. `meta`, when given, goes on a `#` comment line
/// as compact JSON.
pub fn write_pgm<W: Write, M: Serialize>(w: &mut W, img: &Image, meta: Option<&M>) -> Result<()> {
    let mut header = b"P5\n".to_vec();
    if let Some(meta) = meta {
        header.extend_from_slice(b"# ");
        header.extend_from_slice(&serde_json::to_vec(meta)?);
        header.push(b'\n');
    }
    header.extend_from_slice(format!("{} {}\n255\n", img.width, img.height).as_bytes());
    w.write_all(&header)?;
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_mask_pgm<W: Write>(w: &mut W, mask: &Mask) -> Result<()> {
    write_pgm::<_, ()>(w, &mask.to_image(), None)
}

/// Reads an 8-bit binary PGM into a `[0, 1]` image, returning the first
/// comment line (if any) verbatim.
pub fn read_pgm<R: Read>(r: &mut R) -> Result<(Image, Option<String>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut comment = None;
    let mut fields: Vec<String> = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::Format("truncated PGM header".into()));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
            if comment.is_none() {
                comment = Some(String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string());
            }
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!("expected P5 magic, found {}", fields[0])));
    }
    let parse = |s: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
    };
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace byte after maxval
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(Error::Format("truncated PGM pixel data".into()));
    }
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&b| b as f32 / maxval as f32)
        .collect();
    Ok((Image::new(width, height, data)?, comment))
}

/// Parses the JSON comment of a PGM written by [`write_pgm`].
pub fn pgm_metadata<M: DeserializeOwned>(comment: Option<&str>) -> Result<Option<M>> {
    comment.map(|c| Ok(serde_json::from_str(c)?)).transpose()
}

pub fn read_mask_pgm<R: Read>(r: &mut R) -> Result<Mask> {
    let (img, _) = read_pgm(r)?;
    Ok(Mask::from_image(&img, 0.5))
}

/// Raw float32 dump: `u32` height, `u32` width, then row-major little-endian
/// `f32` pixels. Lossless.
pub fn write_raw<W: Write>(w: &mut W, img: &Image) -> Result<()> {
    w.write_all(&(img.height as u32).to_le_bytes())?;
    w.write_all(&(img.width as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(img.data.len() * 4);
    for v in &img.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_raw<R: Read>(r: &mut R) -> Result<Image> {
    let height = read_u32(r)? as usize;
    let width = read_u32(r)? as usize;
    let mut raw = vec![0u8; width * height * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Image::new(width, height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ObservationGrid;

    #[test]
    fn recording_header_layout() {
        let geometry = ArrayGeometry::default();
        let rec = MultichannelRecording {
            samples: Matrix::from_vec(16, 3, (0..48).map(|v| v as f32).collect()).unwrap(),
            sample_rate_hz: 192_000.0,
            geometry,
        };
        let mut buf = Vec::new();
        write_recording(&mut buf, &rec).unwrap();
        assert_eq!(&buf[..16], RECORDING_MAGIC);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 16);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[24..28].try_into().unwrap()), 192_000);
        assert_eq!(f32::from_le_bytes(buf[28 + 4..36].try_into().unwrap()), 1.0);
        let back = read_recording(&mut buf.as_slice()).unwrap();
        assert_eq!(back, rec);
        buf[0] = b'X';
        assert!(matches!(read_recording(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_with_metadata() {
        let img = Image::new(3, 2, vec![0.0, 0.5, 1.0, 0.25, 0.75, 1.0]).unwrap();
        let grid = ObservationGrid::new(15.0).unwrap();
        let mut buf = Vec::new();
        write_pgm(&mut buf, &img, Some(&grid)).unwrap();
        assert!(buf.starts_with(b"P5\n# {"));
        let (back, comment) = read_pgm(&mut buf.as_slice()).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        assert_eq!(back.data[2], 1.0);
        assert!((back.data[1] - 128.0 / 255.0).abs() < 1e-6);
        let meta: ObservationGrid = pgm_metadata(comment.as_deref()).unwrap().unwrap();
        assert_eq!(meta, grid);
    }

    #[test]
    fn raw_is_lossless() {
        let img = Image::new(2, 2, vec![0.1, 0.2, 1.0 / 3.0, 0.999]).unwrap();
        let mut buf = Vec::new();
        write_raw(&mut buf, &img).unwrap();
        assert_eq!(read_raw(&mut buf.as_slice()).unwrap(), img);
    }
}
