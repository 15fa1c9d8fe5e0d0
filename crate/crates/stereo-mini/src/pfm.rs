//! Single-channel PFM images: `Pf` header, width and height, then a scale
//! whose sign gives the byte order (negative = little-endian), then rows
//! from bottom to top.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use diffnet::NdArray;

use crate::error::{Result, StereoError};

/// Writes an `[H, W]` map as little-endian PFM.
pub fn write_pfm<W: Write>(mut out: W, map: &NdArray<f32>) -> Result<()> {
    let (h, w) = match *map.shape() {
        [h, w] => (h, w),
        ref s => return Err(StereoError::Shape { op: "write_pfm", detail: format!("expected [H, W], got {s:?}") }),
    };
    write!(out, "Pf\n{w} {h}\n-1.0\n")?;
    let mut buf = Vec::with_capacity(4 * h * w);
    for y in (0..h).rev() {
        for &v in &map.data()[y * w..(y + 1) * w] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_pfm<R: Read>(input: R) -> Result<NdArray<f32>> {
    let mut r = BufReader::new(input);
    let mut token = || -> Result<String> {
        let mut tok = Vec::new();
        loop {
            let mut b = [0u8];
            if r.read(&mut b)? == 0 {
                break;
            }
            if b[0].is_ascii_whitespace() {
                if tok.is_empty() {
                    continue;
                }
                break;
            }
            tok.push(b[0]);
        }
        String::from_utf8(tok).map_err(|_| StereoError::Pfm("non-ASCII header".into()))
    };
    match token()?.as_str() {
        "Pf" => {}
        "PF" => return Err(StereoError::Pfm("three-channel PFM is not supported".into())),
        other => return Err(StereoError::Pfm(format!("bad magic {other:?}"))),
    }
    let dim = |s: String, what: &str| s.parse::<usize>().map_err(|_| StereoError::Pfm(format!("bad {what} {s:?}")));
    let w = dim(token()?, "width")?;
    let h = dim(token()?, "height")?;
    let scale_tok = token()?;
    let scale: f64 = scale_tok.parse().map_err(|_| StereoError::Pfm(format!("bad scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(StereoError::Pfm(format!("scale {scale} gives no byte order")));
    }
    let little = scale < 0.0;
    let mut raw = vec![0u8; 4 * h * w];
    r.read_exact(&mut raw).map_err(|_| StereoError::Pfm(format!("payload shorter than {} bytes", raw.len())))?;
    if !r.fill_buf()?.is_empty() {
        return Err(StereoError::Pfm("trailing bytes after payload".into()));
    }
    let mut data = vec![0f32; h * w];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let bytes: [u8; 4] = chunk.try_into().expect("chunk of four");
        let v = if little { f32::from_le_bytes(bytes) } else { f32::from_be_bytes(bytes) };
        let (row, col) = (h - 1 - i / w, i % w);
        data[row * w + col] = v;
    }
    Ok(NdArray::new(vec![h, w], data)?)
}

pub fn save_pfm(path: &Path, map: &NdArray<f32>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(f);
    write_pfm(&mut out, map)?;
    out.flush()?;
    Ok(())
}

pub fn load_pfm(path: &Path) -> Result<NdArray<f32>> {
    read_pfm(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_bottom_up_order() {
        let map = NdArray::new(vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        write_pfm(&mut buf, &map).unwrap();
        assert!(buf.starts_with(b"Pf\n2 2\n-1.0\n"));
        let payload = &buf[buf.len() - 16..];
        assert_eq!(&payload[..4], &3.0f32.to_le_bytes());
    }

    #[test]
    fn big_endian_input_is_read() {
        let mut buf = b"Pf\n1 2\n1.0\n".to_vec();
        buf.extend_from_slice(&5.0f32.to_be_bytes());
        buf.extend_from_slice(&7.0f32.to_be_bytes());
        let map = read_pfm(&buf[..]).unwrap();
        assert_eq!(map.data(), &[7.0, 5.0]);
    }

    #[test]
    fn truncated_payload_rejected() {
        let buf = b"Pf\n2 2\n-1.0\nabc".to_vec();
        assert!(matches!(read_pfm(&buf[..]), Err(StereoError::Pfm(_))));
    }
}
