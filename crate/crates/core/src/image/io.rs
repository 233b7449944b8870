//! 8-bit PNG and PNM (PGM/PPM) reading and writing.
//!
//! Intensities map to bytes by `round(v * 255)` with halves rounded up, after
//! clamping to `[0, 1]`. Loading divides by 255.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Png,
    Pnm,
}

fn format_for(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png") => Ok(Format::Png),
        Some("ppm") | Some("pgm") | Some("pnm") => Ok(Format::Pnm),
        _ => Err(Error::Image(format!(
            "unsupported image format for {} (expected .png, .ppm, .pgm or .pnm)",
            path.display()
        ))),
    }
}

/// Quantizes one intensity to its 8-bit code.
#[inline]
pub(crate) fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else if bytes.first() == Some(&b'P') {
        decode_pnm(&bytes)
    } else {
        Err(Error::Image(format!(
            "{}: not a PNG or PNM file",
            path.display()
        )))
    }
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Png => encode_png(img, &bytes, &mut out)?,
        Format::Pnm => {
            let magic = if img.channels() == 1 { "P5" } else { "P6" };
            write!(out, "{magic}\n{} {}\n255\n", img.width(), img.height())
                .and_then(|_| out.write_all(&bytes))
                .map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Image(format!("png decode: {e}")))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight && info.color_type != png::ColorType::Indexed {
        return Err(Error::Image(format!(
            "unsupported png bit depth {:?} (only 8-bit is supported)",
            info.bit_depth
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image("png image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(format!("png decode: {e}")))?;
    if frame.bit_depth != png::BitDepth::Eight {
        return Err(Error::Image(format!(
            "unsupported png bit depth {:?}",
            frame.bit_depth
        )));
    }
    let (h, w) = (frame.height as usize, frame.width as usize);
    let buf = &buf[..frame.buffer_size()];
    let (src_channels, channels) = match frame.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(Error::Image("unexpanded indexed png".into()));
        }
    };
    let mut data = Vec::with_capacity(h * w * channels);
    for px in buf.chunks_exact(src_channels) {
        data.extend(px[..channels].iter().map(|&b| b as f64 / 255.0));
    }
    Image::new(h, w, channels, data)
}

fn encode_png(img: &Image, bytes: &[u8], out: &mut impl Write) -> Result<()> {
    let mut encoder = png::Encoder::new(out, img.width() as u32, img.height() as u32);
    encoder.set_color(if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Image(format!("png encode: {e}")))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| Error::Image(format!("png encode: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::Image(format!("png encode: {e}")))
}

struct PnmHeader {
    magic: u8,
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'2' | b'3' | b'5' | b'6') {
        return Err(Error::Image(
            "unsupported PNM variant (expected P2, P3, P5 or P6)".into(),
        ));
    }
    let magic = bytes[1];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), Some(b'\n') | None) {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Image("malformed PNM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image("malformed PNM header".into()))?;
    }
    // exactly one whitespace byte separates the header from binary data
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Image("malformed PNM header".into()));
    }
    let [width, height, maxval] = fields;
    Ok(PnmHeader {
        magic,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let header = parse_pnm_header(bytes)?;
    if header.width == 0 || header.height == 0 {
        return Err(Error::Image("zero-dimension image".into()));
    }
    if header.maxval != 255 {
        return Err(Error::Image(format!(
            "unsupported PNM maxval {} (only 255 is supported)",
            header.maxval
        )));
    }
    let channels = if matches!(header.magic, b'2' | b'5') { 1 } else { 3 };
    let n = header.width * header.height * channels;
    let payload = &bytes[header.data_start..];
    let samples: Vec<u8> = match header.magic {
        b'5' | b'6' => {
            if payload.len() < n {
                return Err(Error::Image(format!(
                    "truncated PNM payload: expected {n} bytes, found {}",
                    payload.len()
                )));
            }
            payload[..n].to_vec()
        }
        _ => {
            let text = std::str::from_utf8(payload)
                .map_err(|_| Error::Image("non-ASCII data in plain PNM".into()))?;
            let values = text
                .split_ascii_whitespace()
                .take(n)
                .map(|t| t.parse::<u16>().ok().filter(|&v| v <= 255).map(|v| v as u8))
                .collect::<Option<Vec<u8>>>()
                .ok_or_else(|| Error::Image("invalid sample in plain PNM".into()))?;
            if values.len() < n {
                return Err(Error::Image("truncated plain PNM payload".into()));
            }
            values
        }
    };
    Image::new(
        header.height,
        header.width,
        channels,
        samples.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_ppm_max_value_maps_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.ppm");
        std::fs::write(&path, "P3\n# comment\n2 2\n255\n255 255 255 255 255 255\n255 255 255 255 255 255\n").unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.shape().dims(), [2, 2, 3]);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn png_pixel_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("px.png");
        let img = Image::new(1, 1, 3, vec![128.0 / 255.0; 3]).unwrap();
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.data(), &[128.0 / 255.0; 3]);
    }

    #[test]
    fn half_rounds_up() {
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(0.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(1.7), 255);
        assert_eq!(to_byte(-0.2), 0);
    }

    #[test]
    fn zero_image_writes_zero_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.pgm");
        save_image(&Image::zeros(3, 4, 1), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n4 3\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert!(bytes[header.len()..].iter().all(|&b| b == 0));
        assert_eq!(bytes.len(), header.len() + 12);
    }

    #[test]
    fn rejects_sixteen_bit_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        {
            let file = File::create(&path).unwrap();
            let mut enc = png::Encoder::new(BufWriter::new(file), 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0, 1]).unwrap();
        }
        let err = load_image(&path).unwrap_err();
        assert!(err.to_string().contains("bit depth"), "{err}");
    }

    #[test]
    fn rejects_zero_dimension_and_bad_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        std::fs::write(&path, b"P5\n0 3\n255\n").unwrap();
        assert!(load_image(&path).is_err());
        std::fs::write(&path, b"P5\n1 1\n65535\n\0\0").unwrap();
        assert!(load_image(&path).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_image("/nonexistent/dir/img.png").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = save_image(&Image::zeros(1, 1, 1), "/nonexistent/dir/out.png").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
