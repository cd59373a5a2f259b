//! On-disk formats: RLE masks and binary PPM frames.

use std::path::Path;

use crate::error::{Error, Result};

/// Binary mask, row-major `height × width`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask of {} pixels for {height}×{width}",
                data.len()
            )));
        }
        Ok(Mask { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// `RLE v1 H W` header, then run lengths alternating zeros/ones, starting
/// with a (possibly zero) run of zeros.
pub fn rle_encode(mask: &Mask) -> String {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &b in &mask.data {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    let body: Vec<String> = runs.iter().map(usize::to_string).collect();
    format!("RLE v1 {} {}\n{}\n", mask.height, mask.width, body.join(" "))
}

pub fn rle_decode(text: &str) -> Result<Mask> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty RLE file".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    let (h, w) = match fields.as_slice() {
        ["RLE", "v1", h, w] => (parse_dim(h)?, parse_dim(w)?),
        _ => return Err(Error::Format(format!("bad RLE header {header:?}"))),
    };
    let body = lines.next().unwrap_or("");
    if lines.any(|l| !l.is_empty()) {
        return Err(Error::Format("trailing data after RLE runs".into()));
    }
    let mut data = Vec::with_capacity(h * w);
    let mut value = false;
    for tok in body.split(' ').filter(|t| !t.is_empty()) {
        let n: usize = tok
            .parse()
            .map_err(|_| Error::Format(format!("bad run length {tok:?}")))?;
        if data.len() + n > h * w {
            return Err(Error::Format(format!("runs exceed {h}×{w} pixels")));
        }
        data.extend(std::iter::repeat(value).take(n));
        value = !value;
    }
    if data.len() != h * w {
        return Err(Error::Format(format!(
            "runs sum to {} but the mask has {} pixels",
            data.len(),
            h * w
        )));
    }
    Mask::new(h, w, data)
}

fn parse_dim(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Format(format!("bad dimension {s:?}")))
}

pub fn write_rle(path: &Path, mask: &Mask) -> Result<()> {
    std::fs::write(path, rle_encode(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_rle(path: &Path) -> Result<Mask> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    rle_decode(&text)
}

/// RGB frame, row-major, 3 bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<u8>,
}

impl Frame {
    /// `HW × 3` values in `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.rgb.iter().map(|&v| v as f64 / 255.0).collect()
    }
}

pub fn ppm_encode(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.rgb);
    out
}

pub fn ppm_decode(bytes: &[u8]) -> Result<Frame> {
    // header: magic, width, height, maxval separated by whitespace, then one
    // whitespace byte before the raster
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::Format("non-ASCII PPM header".into()))?);
    }
    if fields[0] != "P6" {
        return Err(Error::Format(format!("expected P6, found {:?}", fields[0])));
    }
    let width = parse_dim(fields[1])?;
    let height = parse_dim(fields[2])?;
    if fields[3] != "255" {
        return Err(Error::Format(format!("unsupported PPM maxval {}", fields[3])));
    }
    let raster = &bytes[(i + 1).min(bytes.len())..];
    if raster.len() != width * height * 3 {
        return Err(Error::Format(format!(
            "PPM raster has {} bytes, expected {}",
            raster.len(),
            width * height * 3
        )));
    }
    Ok(Frame {
        height,
        width,
        rgb: raster.to_vec(),
    })
}

pub fn write_ppm(path: &Path, frame: &Frame) -> Result<()> {
    std::fs::write(path, ppm_encode(frame)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Frame> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ppm_decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rle_examples() {
        let m = Mask::new(2, 3, vec![true, true, false, false, false, true]).unwrap();
        assert_eq!(rle_encode(&m), "RLE v1 2 3\n0 2 3 1\n");
        let e = Mask::empty(2, 2);
        assert_eq!(rle_encode(&e), "RLE v1 2 2\n4\n");
        assert_eq!(rle_decode("RLE v1 2 2\n4\n").unwrap(), e);
    }

    #[test]
    fn rle_rejects_bad_input() {
        assert!(rle_decode("RLE v2 2 2\n4\n").is_err());
        assert!(rle_decode("RLE v1 2 2\n3\n").is_err());
        assert!(rle_decode("RLE v1 2 2\n3 2\n").is_err());
        assert!(rle_decode("RLE v1 2 2\n4 x\n").is_err());
        assert!(rle_decode("").is_err());
    }

    proptest! {
        #[test]
        fn rle_round_trip(h in 1usize..40, w in 1usize..40, seed in any::<u64>(), density in 0.0f64..1.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Mask::new(h, w, (0..h * w).map(|_| rng.gen_bool(density)).collect()).unwrap();
            prop_assert_eq!(rle_decode(&rle_encode(&m)).unwrap(), m);
        }
    }

    #[test]
    fn ppm_round_trip_and_header() {
        let f = Frame {
            height: 2,
            width: 3,
            rgb: (0..18).collect(),
        };
        let bytes = ppm_encode(&f);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(ppm_decode(&bytes).unwrap(), f);
        assert!(ppm_decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(ppm_decode(b"P5\n1 1\n255\n\0").is_err());
    }
}
