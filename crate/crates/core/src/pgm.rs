//! Binary portable graymap (P5). Samples are big-endian 16-bit when
//! `maxval > 255` and single bytes otherwise, as Netpbm specifies.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

pub fn encode(width: usize, height: usize, maxval: u16, samples: &[u16]) -> Vec<u8> {
    debug_assert_eq!(samples.len(), width * height);
    let header = format!("P5\n{width} {height}\n{maxval}\n");
    let wide = maxval > 255;
    let mut out = Vec::with_capacity(header.len() + samples.len() * if wide { 2 } else { 1 });
    out.extend_from_slice(header.as_bytes());
    for &s in samples {
        if wide {
            out.extend_from_slice(&s.to_be_bytes());
        } else {
            out.push(s as u8);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.file, Some(self.pos), msg)
    }

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

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(self.file, Some(start), format!("{what} out of range")))
    }
}

/// Parses a P5 graymap; `file` names the source in error messages.
pub fn decode(bytes: &[u8], file: &str) -> Result<Graymap> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        file,
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(cur.err("missing P5 magic"));
    }
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(cur.err(format!("maxval {maxval} outside 1..=65535")));
    }
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(cur.err("expected single whitespace after maxval"));
    }
    cur.pos += 1;
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    let data = &bytes[cur.pos..];
    if data.len() < need {
        return Err(cur.err(format!("raster has {} bytes, expected {need}", data.len())));
    }
    let samples: Vec<u16> = if wide {
        data[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        data[..need].iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(i) = samples.iter().position(|&s| usize::from(s) > maxval) {
        cur.pos += i * if wide { 2 } else { 1 };
        return Err(cur.err(format!("sample {} exceeds maxval {maxval}", samples[i])));
    }
    Ok(Graymap {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn read(path: &Path) -> Result<Graymap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let mut bytes = b"P5 # sensor dump\n2\t1\n#c\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x01, 0x02, 0xff, 0xff]);
        let g = decode(&bytes, "x.pgm").unwrap();
        assert_eq!((g.width, g.height, g.maxval), (2, 1, 65535));
        assert_eq!(g.samples, vec![0x0102, 0xffff]);
    }

    #[test]
    fn errors_carry_offsets() {
        match decode(b"P2\n1 1\n255\n\x00", "a.pgm").unwrap_err() {
            Error::Format { file, offset, .. } => {
                assert_eq!(file, "a.pgm");
                assert_eq!(offset, Some(0));
            }
            e => panic!("{e}"),
        }
        let err = decode(b"P5\n2 2\n1023\n\x00\x01", "b.pgm").unwrap_err();
        assert!(
            matches!(
                err,
                Error::Format {
                    offset: Some(12),
                    ..
                }
            ),
            "{err}"
        );
        let err = decode(b"P5\n1 1\n1023\n\x7f\xff", "c.pgm").unwrap_err();
        assert!(err.to_string().contains("exceeds maxval"));
    }

    #[test]
    fn eight_bit_maxval_uses_single_bytes() {
        let bytes = encode(3, 1, 255, &[0, 128, 255]);
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
        assert_eq!(decode(&bytes, "m").unwrap().samples, vec![0, 128, 255]);
    }

    proptest! {
        #[test]
        fn round_trip(w in 1usize..9, h in 1usize..9, maxval in 1u16..=65535, seed in any::<u64>()) {
            let samples: Vec<u16> = (0..w * h).map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 7) % (u64::from(maxval) + 1)) as u16).collect();
            let g = decode(&encode(w, h, maxval, &samples), "p").unwrap();
            prop_assert_eq!(g, Graymap { width: w, height: h, maxval, samples });
        }
    }
}
