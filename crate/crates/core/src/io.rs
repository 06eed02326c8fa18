//! Image and matrix interchange: PGM (P2/P5) and a lossless float CSV.
//!
//! The CSV image layout is a `W,H,C` header followed by `C * H` rows of `W`
//! values each (channel-major, then row-major), every value printed like C's
//! `%.17g` so that a read after write reproduces the bits exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::GridImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Csv,
    /// P2 with the given maxval.
    PgmAscii(u16),
    /// P5 with the given maxval (16-bit big-endian samples above 255).
    PgmBinary(u16),
}

impl ImageFormat {
    /// Picks a format from the file extension: `.pgm` writes P5/255, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("pgm") => ImageFormat::PgmBinary(255),
            _ => ImageFormat::Csv,
        }
    }
}

/// Formats `x` exactly as C's `printf("%.17g", x)`.
pub fn format_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..17).contains(&exp) {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (16 - exp).max(0) as usize;
        trim_fraction(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn image_to_csv(image: &GridImage) -> String {
    let mut out = format!("{},{},{}\n", image.width(), image.height(), image.channels());
    for row in image.values().chunks(image.width()) {
        let line: Vec<String> = row.iter().map(|&v| format_g17(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_csv_image(text: &str) -> Result<GridImage> {
    let mut offset = 0usize;
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().ok_or(Error::Format {
        offset: 0,
        message: "empty csv image".into(),
    })?;
    let dims: Vec<usize> = header
        .trim()
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format {
            offset: 0,
            message: format!("malformed header {:?}, expected W,H,C", header.trim()),
        })?;
    if dims.len() != 3 {
        return Err(Error::Format {
            offset: 0,
            message: format!("header has {} fields, expected 3", dims.len()),
        });
    }
    let (w, h, c) = (dims[0], dims[1], dims[2]);
    offset += header.len();
    let mut values = Vec::with_capacity(w * h * c);
    for _ in 0..h * c {
        let line = lines.next().ok_or(Error::Format {
            offset,
            message: format!("truncated payload: expected {} rows", h * c),
        })?;
        let mut count = 0;
        for field in line.trim_end_matches(['\n', '\r']).split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Format {
                offset,
                message: format!("bad number {field:?}"),
            })?;
            values.push(v);
            count += 1;
        }
        if count != w {
            return Err(Error::Format {
                offset,
                message: format!("row has {count} values, expected {w}"),
            });
        }
        offset += line.len();
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::Format {
            offset,
            message: "trailing data after payload".into(),
        });
    }
    GridImage::new(w, h, c, values)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format {
                offset: start,
                message: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Format {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GridImage> {
    if bytes.len() < 2 {
        return Err(Error::Format {
            offset: 0,
            message: "file too short for a magic number".into(),
        });
    }
    let binary = match &bytes[..2] {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(Error::Format {
                offset: 0,
                message: format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            })
        }
    };
    let mut rd = HeaderReader { bytes, pos: 2 };
    let width = rd.number("width")? as usize;
    let height = rd.number("height")? as usize;
    let maxval_pos = rd.pos;
    let maxval = rd.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format {
            offset: maxval_pos,
            message: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::Format {
            offset: maxval_pos,
            message: "zero image dimension".into(),
        });
    }
    let scale = f64::from(maxval);
    let n = width * height;
    let mut values = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = rd.pos + 1;
        let sample = if maxval > 255 { 2 } else { 1 };
        let needed = start + n * sample;
        if bytes.len() < needed {
            return Err(Error::Format {
                offset: bytes.len(),
                message: format!("truncated payload: need {needed} bytes"),
            });
        }
        for k in 0..n {
            let at = start + k * sample;
            let raw = if sample == 2 {
                u32::from(u16::from_be_bytes([bytes[at], bytes[at + 1]]))
            } else {
                u32::from(bytes[at])
            };
            if raw > maxval {
                return Err(Error::Format {
                    offset: at,
                    message: format!("sample {raw} exceeds maxval {maxval}"),
                });
            }
            values.push(f64::from(raw) / scale);
        }
    } else {
        for _ in 0..n {
            rd.skip_space_and_comments();
            if rd.pos >= bytes.len() {
                return Err(Error::Format {
                    offset: rd.pos,
                    message: format!("truncated payload: expected {n} samples"),
                });
            }
            let at = rd.pos;
            let raw = rd.number("sample")?;
            if raw > maxval {
                return Err(Error::Format {
                    offset: at,
                    message: format!("sample {raw} exceeds maxval {maxval}"),
                });
            }
            values.push(f64::from(raw) / scale);
        }
    }
    GridImage::new(width, height, 1, values)
}

/// Encodes a single-channel image, clamping to `[0, 1]` and rounding to `maxval` levels.
pub fn encode_pgm(image: &GridImage, binary: bool, maxval: u16) -> Result<Vec<u8>> {
    if image.channels() != 1 {
        return Err(Error::shape("1 channel for PGM", image.channels()));
    }
    if maxval == 0 {
        return Err(Error::param("PGM maxval must be positive"));
    }
    let m = f64::from(maxval);
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * m).round() as u16;
    let mut out = format!(
        "{}\n{} {}\n{}\n",
        if binary { "P5" } else { "P2" },
        image.width(),
        image.height(),
        maxval
    )
    .into_bytes();
    if binary {
        for &v in image.values() {
            let q = quantize(v);
            if maxval > 255 {
                out.extend_from_slice(&q.to_be_bytes());
            } else {
                out.push(q as u8);
            }
        }
    } else {
        for row in image.values().chunks(image.width()) {
            let line: Vec<String> = row.iter().map(|&v| quantize(v).to_string()).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<GridImage> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P") {
        return parse_pgm(&bytes);
    }
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Format {
        offset: e.valid_up_to(),
        message: "csv image is not valid UTF-8".into(),
    })?;
    parse_csv_image(text)
}

pub fn write_image(image: &GridImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_image_as(image, path, ImageFormat::from_path(path))
}

pub fn write_image_as(image: &GridImage, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let bytes = match format {
        ImageFormat::Csv => image_to_csv(image).into_bytes(),
        ImageFormat::PgmAscii(m) => encode_pgm(image, false, m)?,
        ImageFormat::PgmBinary(m) => encode_pgm(image, true, m)?,
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Dense matrix, one CSV row per matrix row.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|c| format_g17(m[(r, c)])).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Complex matrix with each entry written as an `re,im` pair.
pub fn complex_matrix_to_csv(m: &DMatrix<Complex64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols())
            .map(|c| format!("{},{}", format_g17(m[(r, c)].re), format_g17(m[(r, c)].im)))
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// `row,col,value` triplets with a header line, indices written as given.
pub fn triplets_to_csv(triplets: &[(usize, usize, f64)]) -> String {
    let mut out = String::from("row,col,value\n");
    for &(r, c, v) in triplets {
        let _ = writeln!(out, "{r},{c},{}", format_g17(v));
    }
    out
}

/// One CSV row per state, complex values written as `re,im` pairs.
pub fn complex_rows_to_csv(rows: &[Vec<Complex64>]) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .map(|c| format!("{},{}", format_g17(c.re), format_g17(c.im)))
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Parses rows of `re,im` pairs, the inverse of [`complex_rows_to_csv`].
pub fn parse_complex_rows(text: &str) -> Result<Vec<Vec<Complex64>>> {
    let mut rows = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let values = trimmed
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| Error::Format {
                        offset,
                        message: format!("not a number: {f:?}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() % 2 != 0 {
                return Err(Error::Format {
                    offset,
                    message: "complex rows need an even number of fields".into(),
                });
            }
            rows.push(values.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect());
        }
        offset += line.len();
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf() {
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(1.0), "1");
        assert_eq!(format_g17(-2.5), "-2.5");
        assert_eq!(format_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(format_g17(1e20), "1e+20");
        assert_eq!(format_g17(123456.0), "123456");
        assert_eq!(format_g17(0.0001), "0.0001");
    }

    #[test]
    fn p2_endpoints() {
        let img = parse_pgm(b"P2 2 1 255\n0 255\n").unwrap();
        assert_eq!(img.values(), &[0.0, 1.0]);
    }

    #[test]
    fn p5_sixteen_bit_big_endian() {
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x80, 0x00, 0xff, 0xff]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.values(), &[32768.0 / 65535.0, 1.0]);
    }

    #[test]
    fn pgm_comments_and_errors() {
        let img = parse_pgm(b"P2\n# comment\n1 1\n# another\n10\n5\n").unwrap();
        assert_eq!(img.values(), &[0.5]);
        assert!(matches!(parse_pgm(b"P6 1 1 255\n"), Err(Error::Format { offset: 0, .. })));
        let err = parse_pgm(b"P5\n2 2\n255\n\x01\x02").unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(parse_pgm(b"P2 2 1 255\n0").is_err());
        assert!(parse_pgm(b"P2 x 1 255\n0").is_err());
    }

    #[test]
    fn pgm_roundtrip_after_quantization() {
        let img = GridImage::new(3, 1, 1, vec![0.0, 0.5, 1.0]).unwrap();
        for (binary, maxval) in [(true, 255), (false, 255), (true, 65535), (false, 65535)] {
            let bytes = encode_pgm(&img, binary, maxval).unwrap();
            let back = parse_pgm(&bytes).unwrap();
            let m = f64::from(maxval);
            for (a, b) in img.values().iter().zip(back.values()) {
                assert_eq!(*b, (a * m).round() / m);
            }
        }
    }

    #[test]
    fn csv_malformed() {
        assert!(parse_csv_image("2,2\n").is_err());
        assert!(parse_csv_image("2,1,1\n1\n").is_err());
        assert!(matches!(
            parse_csv_image("2,2,1\n1,2\n"),
            Err(Error::Format { offset: 10, .. })
        ));
    }

    #[test]
    fn complex_rows_roundtrip() {
        let rows = vec![
            vec![Complex64::new(0.1, -2.0), Complex64::new(1e-300, 3.5)],
            vec![Complex64::new(-0.0, 7.0), Complex64::new(1.0 / 3.0, 0.0)],
        ];
        assert_eq!(parse_complex_rows(&complex_rows_to_csv(&rows)).unwrap(), rows);
        assert!(parse_complex_rows("1,2,3\n").is_err());
        assert!(matches!(
            parse_complex_rows("1,2\nx,1\n"),
            Err(Error::Format { offset: 4, .. })
        ));
    }
}
