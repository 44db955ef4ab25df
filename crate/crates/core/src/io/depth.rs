//! 16-bit PGM and 32-bit PFM depth images (millimetres, 0 = missing) with a
//! plain-text `.meta` sidecar holding intrinsics and the quantizer range.

use std::collections::BTreeMap;
use std::fmt::{self, Display, Write as _};
use std::path::{Path, PathBuf};

use super::{atomic_write, read_bytes};
use crate::error::{Error, Result};
use crate::forward::QuantizerParams;
use crate::image::{DepthImage, Intrinsics};
use crate::layering::LayerMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImageFormat {
    /// Binary PGM, 16 bits per sample, depth rounded to whole millimetres.
    #[default]
    Pgm16,
    /// Little-endian grayscale PFM, 32-bit floats.
    Pfm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm16 => "pgm",
            ImageFormat::Pfm => "pfm",
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("pgm") => Ok(ImageFormat::Pgm16),
            Some("pfm") => Ok(ImageFormat::Pfm),
            _ => Err(Error::parse(path, None, "expected a .pgm or .pfm file")),
        }
    }
}

impl std::str::FromStr for ImageFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pgm16" | "pgm" => Ok(ImageFormat::Pgm16),
            "pfm" => Ok(ImageFormat::Pfm),
            _ => Err(format!("unknown image format {s:?}; use pgm16 or pfm")),
        }
    }
}

impl Display for ImageFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImageFormat::Pgm16 => "pgm16",
            ImageFormat::Pfm => "pfm",
        })
    }
}

/// Sidecar contents. Unknown keys are kept in `extra` and written back in
/// key order.
#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub focal: f64,
    pub baseline: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub principal: Option<(f64, f64)>,
    pub extra: BTreeMap<String, String>,
}

const CORE_KEYS: [&str; 6] = ["focal", "baseline", "x_min", "x_max", "cx", "cy"];

impl Metadata {
    pub fn new(intrinsics: &Intrinsics<f64>, q: &QuantizerParams<f64>) -> Self {
        Metadata {
            focal: intrinsics.focal,
            baseline: intrinsics.baseline,
            x_min: q.x_min(),
            x_max: q.x_max(),
            principal: intrinsics.principal,
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Display) -> Self {
        self.extra.insert(key.to_string(), value.to_string());
        self
    }

    pub fn intrinsics(&self) -> Result<Intrinsics<f64>> {
        let mut k = Intrinsics::new(self.focal, self.baseline)?;
        k.principal = self.principal;
        Ok(k)
    }

    /// Sidecar of an image: the same path with the extension `meta`.
    pub fn sidecar(image: &Path) -> PathBuf {
        image.with_extension("meta")
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "focal {}", self.focal);
        let _ = writeln!(s, "baseline {}", self.baseline);
        let _ = writeln!(s, "x_min {}", self.x_min);
        let _ = writeln!(s, "x_max {}", self.x_max);
        if let Some((cx, cy)) = self.principal {
            let _ = writeln!(s, "cx {cx}");
            let _ = writeln!(s, "cy {cy}");
        }
        for (k, v) in &self.extra {
            let _ = writeln!(s, "{k} {v}");
        }
        s
    }

    /// Parses `key value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::parse(origin, Some(i + 1), format!("expected `key value`, got {line:?}")))?;
            let v = v.trim();
            if CORE_KEYS.contains(&k) && v.parse::<f64>().map_or(true, |x| !x.is_finite()) {
                return Err(Error::parse(origin, Some(i + 1), format!("{k} must be a finite number, got {v:?}")));
            }
            map.insert(k.to_string(), (i + 1, v.to_string()));
        }
        let mut num = |k: &str| map.remove(k).map(|(_, v)| v.parse::<f64>().expect("checked above"));
        let mut need = |k: &str| num(k).ok_or_else(|| Error::parse(origin, None, format!("missing key {k}")));
        let (focal, baseline, x_min, x_max) = (need("focal")?, need("baseline")?, need("x_min")?, need("x_max")?);
        let principal = match (num("cx"), num("cy")) {
            (Some(cx), Some(cy)) => Some((cx, cy)),
            (None, None) => None,
            _ => return Err(Error::parse(origin, None, "cx and cy must be given together")),
        };
        Ok(Metadata {
            focal,
            baseline,
            x_min,
            x_max,
            principal,
            extra: map.into_iter().map(|(k, (_, v))| (k, v)).collect(),
        })
    }
}

pub fn read_metadata(path: &Path) -> Result<Metadata> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Metadata::parse(&text, path)
}

/// Header of a binary PGM/PFM file: whitespace-separated tokens with `#`
/// comments, followed by exactly one whitespace byte.
fn header_tokens<'a>(bytes: &'a [u8], count: usize, path: &Path) -> Result<(Vec<&'a str>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut k = 0;
    while tokens.len() < count {
        while k < bytes.len() && (bytes[k].is_ascii_whitespace() || bytes[k] == b'#') {
            if bytes[k] == b'#' {
                while k < bytes.len() && bytes[k] != b'\n' {
                    k += 1;
                }
            } else {
                k += 1;
            }
        }
        let start = k;
        while k < bytes.len() && !bytes[k].is_ascii_whitespace() {
            k += 1;
        }
        if start == k {
            return Err(Error::parse(path, None, "truncated header"));
        }
        let tok = std::str::from_utf8(&bytes[start..k]).map_err(|_| Error::parse(path, None, "header is not ASCII"))?;
        tokens.push(tok);
    }
    if k >= bytes.len() {
        return Err(Error::parse(path, None, "no pixel data after header"));
    }
    Ok((tokens, k + 1))
}

fn dims(tokens: &[&str], path: &Path) -> Result<(usize, usize)> {
    let num = |t: &str| {
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::parse(path, None, format!("bad image dimension {t:?}")))
    };
    Ok((num(tokens[1])?, num(tokens[2])?))
}

/// Samples of a binary PGM (8 or 16 bit) as `(height, width, values)`.
fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let (tokens, start) = header_tokens(bytes, 4, path)?;
    if tokens[0] != "P5" {
        return Err(Error::parse(path, None, format!("expected binary PGM magic P5, got {:?}", tokens[0])));
    }
    let (w, h) = dims(&tokens, path)?;
    let maxval: u32 = tokens[3]
        .parse()
        .ok()
        .filter(|&m| (1..=65535).contains(&m))
        .ok_or_else(|| Error::parse(path, None, format!("bad maxval {:?}", tokens[3])))?;
    let wide = maxval > 255;
    let need = w * h * if wide { 2 } else { 1 };
    let data = &bytes[start..];
    if data.len() < need {
        return Err(Error::parse(path, None, format!("expected {need} data bytes, found {}", data.len())));
    }
    let values = if wide {
        data[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        data[..need].iter().map(|&b| u16::from(b)).collect()
    };
    Ok((h, w, values))
}

fn encode_pgm(width: usize, height: usize, maxval: u16, samples: impl Iterator<Item = u16>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    for s in samples {
        if maxval > 255 {
            out.extend_from_slice(&s.to_be_bytes());
        } else {
            out.push(s as u8);
        }
    }
    out
}

fn decode_pfm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let (tokens, start) = header_tokens(bytes, 4, path)?;
    if tokens[0] != "Pf" {
        return Err(Error::parse(path, None, format!("expected grayscale PFM magic Pf, got {:?}", tokens[0])));
    }
    let (w, h) = dims(&tokens, path)?;
    let scale: f64 = tokens[3]
        .parse()
        .ok()
        .filter(|s: &f64| *s != 0.0 && s.is_finite())
        .ok_or_else(|| Error::parse(path, None, format!("bad PFM scale {:?}", tokens[3])))?;
    let data = &bytes[start..];
    if data.len() < 4 * w * h {
        return Err(Error::parse(path, None, format!("expected {} data bytes, found {}", 4 * w * h, data.len())));
    }
    let mut values = vec![0.0; w * h];
    // rows are stored bottom to top
    for (k, c) in data[..4 * w * h].chunks_exact(4).enumerate() {
        let b = [c[0], c[1], c[2], c[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (r, col) = (h - 1 - k / w, k % w);
        values[r * w + col] = f64::from(v);
    }
    Ok((h, w, values))
}

fn encode_pfm(img: &DepthImage<f64>) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for r in (0..h).rev() {
        for c in 0..w {
            let v = img.get(r, c).unwrap_or(0.0) as f32;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a depth image and its `.meta` sidecar. Zero, negative and
/// non-finite samples are missing.
pub fn read_depth(path: impl AsRef<Path>) -> Result<(DepthImage<f64>, Metadata)> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path)?;
    let bytes = read_bytes(path)?;
    let meta = read_metadata(&Metadata::sidecar(path))?;
    let (h, w, values) = match format {
        ImageFormat::Pgm16 => {
            let (h, w, v) = decode_pgm(&bytes, path)?;
            (h, w, v.into_iter().map(f64::from).collect())
        }
        ImageFormat::Pfm => {
            let (h, w, v) = decode_pfm(&bytes, path)?;
            (h, w, v.into_iter().map(|x| if x.is_finite() { x } else { 0.0 }).collect())
        }
    };
    let img = DepthImage::from_values(h, w, values, meta.intrinsics()?)?;
    Ok((img, meta))
}

/// Writes a depth image and its `.meta` sidecar.
pub fn write_depth(path: impl AsRef<Path>, img: &DepthImage<f64>, format: ImageFormat, meta: &Metadata) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ImageFormat::Pgm16 => {
            let mut samples = Vec::with_capacity(img.height() * img.width());
            for (k, (&v, &m)) in img.values().iter().zip(img.mask()).enumerate() {
                if !m {
                    samples.push(0);
                    continue;
                }
                let r = v.round();
                if !(1.0..=65535.0).contains(&r) {
                    return Err(Error::range("depth", v, format!("pixel {k} does not fit a 16-bit PGM sample")));
                }
                samples.push(r as u16);
            }
            encode_pgm(img.width(), img.height(), 65535, samples.into_iter())
        }
        ImageFormat::Pfm => encode_pfm(img),
    };
    atomic_write(path, &bytes)?;
    atomic_write(Metadata::sidecar(path), meta.render().as_bytes())
}

/// Availability mask from a PGM of the given size; non-zero samples are available.
pub fn read_mask(path: impl AsRef<Path>, height: usize, width: usize) -> Result<Vec<bool>> {
    let path = path.as_ref();
    let (h, w, v) = decode_pgm(&read_bytes(path)?, path)?;
    if (h, w) != (height, width) {
        return Err(Error::Parameter(format!(
            "mask {} is {h}x{w}, image is {height}x{width}",
            path.display()
        )));
    }
    Ok(v.into_iter().map(|s| s != 0).collect())
}

/// Writes labels as an 8-bit PGM (0 = missing, layer `l` stored as `l + 1`)
/// and per-layer statistics to a `.layers` sidecar.
pub fn write_layer_map(path: impl AsRef<Path>, layers: &LayerMap<f64>) -> Result<()> {
    let path = path.as_ref();
    if layers.layer_count() > 254 {
        return Err(Error::Parameter(format!("{} layers do not fit an 8-bit label image", layers.layer_count())));
    }
    let samples = layers.labels().iter().map(|l| l.map_or(0, |l| l as u16 + 1));
    atomic_write(path, &encode_pgm(layers.width(), layers.height(), 255, samples))?;
    let mut s = String::from("# layer mean_mm count depth_sd_mm noise_variance_mm2\n");
    for (l, st) in layers.stats().iter().enumerate() {
        let var = st.noise_variance.map_or_else(|| "-".to_string(), |v| v.to_string());
        let _ = writeln!(s, "{} {} {} {} {}", l + 1, st.mean, st.count, st.depth_sd, var);
    }
    atomic_write(path.with_extension("layers"), s.as_bytes())
}
