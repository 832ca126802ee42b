//! On-disk rasters and masks.
//!
//! A raster is a pair of files: a UTF-8 `key=value` header (`.hdr`) and a raw
//! little-endian `float32` payload (`.bin`) laid out row-major with bands
//! interleaved by pixel. Masks are binary PGM (`P5`, maxval 255) where a byte
//! `>= 128` means "change".

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// What a band holds; drives validation and downstream handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BandRole {
    Optical,
    SarIntensity,
    StackedLog,
    /// Cluster ids written by the pipeline as float values.
    Label,
}

impl BandRole {
    pub fn as_str(self) -> &'static str {
        match self {
            BandRole::Optical => "optical",
            BandRole::SarIntensity => "sar_intensity",
            BandRole::StackedLog => "stacked_log",
            BandRole::Label => "label",
        }
    }
}

impl fmt::Display for BandRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BandRole {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "optical" => Ok(BandRole::Optical),
            "sar_intensity" => Ok(BandRole::SarIntensity),
            "stacked_log" => Ok(BandRole::StackedLog),
            "label" => Ok(BandRole::Label),
            other => Err(format!("unknown band role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DType {
    #[default]
    Float32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interleave {
    /// Band-interleaved-by-pixel.
    #[default]
    Bip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ByteOrder {
    #[default]
    Little,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub dtype: DType,
    pub interleave: Interleave,
    pub byteorder: ByteOrder,
    pub band_roles: Vec<BandRole>,
}

impl RasterHeader {
    pub fn new(width: usize, height: usize, band_roles: Vec<BandRole>) -> Self {
        Self {
            width,
            height,
            bands: band_roles.len(),
            dtype: DType::Float32,
            interleave: Interleave::Bip,
            byteorder: ByteOrder::Little,
            band_roles,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn samples(&self) -> usize {
        self.pixels() * self.bands
    }

    pub fn byte_len(&self) -> u64 {
        self.samples() as u64 * 4
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            return Err(format!(
                "dimensions must be positive, got {}x{}x{}",
                self.width, self.height, self.bands
            ));
        }
        if self.band_roles.len() != self.bands {
            return Err(format!(
                "band_roles lists {} roles for {} bands",
                self.band_roles.len(),
                self.bands
            ));
        }
        Ok(())
    }

    /// Serialized header text, keys in canonical order.
    pub fn to_text(&self) -> String {
        let roles: Vec<&str> = self.band_roles.iter().map(|r| r.as_str()).collect();
        format!(
            "width={}\nheight={}\nbands={}\ndtype=float32\ninterleave=bip\nbyteorder=little\nband_roles={}\n",
            self.width,
            self.height,
            self.bands,
            roles.join(",")
        )
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Header {
            path: path.to_path_buf(),
            msg,
        };
        let mut kv: HashMap<&str, &str> = HashMap::new();
        for (lineno, raw) in text.split('\n').enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", lineno + 1)))?;
            let k = k.trim();
            if !matches!(
                k,
                "width" | "height" | "bands" | "dtype" | "interleave" | "byteorder" | "band_roles"
            ) {
                return Err(bad(format!("line {}: unknown key `{k}`", lineno + 1)));
            }
            if kv.insert(k, v.trim()).is_some() {
                return Err(bad(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| bad(format!("missing key `{k}`")))
        };
        let dim =
            |k: &str| -> Result<usize> { get(k)?.parse::<usize>().map_err(|e| bad(format!("`{k}`: {e}"))) };
        let width = dim("width")?;
        let height = dim("height")?;
        let bands = dim("bands")?;
        match get("dtype")? {
            "float32" => {}
            other => return Err(bad(format!("unsupported dtype `{other}`"))),
        }
        match get("interleave")? {
            "bip" | "band-interleaved-by-pixel" => {}
            other => return Err(bad(format!("unsupported interleave `{other}`"))),
        }
        match get("byteorder")? {
            "little" => {}
            other => return Err(bad(format!("unsupported byteorder `{other}`"))),
        }
        let band_roles = get("band_roles")?
            .split(',')
            .map(|s| s.trim().parse::<BandRole>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(bad)?;
        let header = RasterHeader {
            width,
            height,
            bands,
            dtype: DType::Float32,
            interleave: Interleave::Bip,
            byteorder: ByteOrder::Little,
            band_roles,
        };
        header.check().map_err(bad)?;
        Ok(header)
    }
}

/// Axis-aligned pixel rectangle `[x0, x0+width) × [y0, y0+height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bounds {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Bounds {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }
}

/// Validated multi-band raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    header: RasterHeader,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(header: RasterHeader, data: Vec<f32>) -> Result<Self> {
        let r = Self { header, data };
        r.validate()?;
        Ok(r)
    }

    /// Single-band raster.
    pub fn single(width: usize, height: usize, role: BandRole, data: Vec<f32>) -> Result<Self> {
        Self::new(RasterHeader::new(width, height, vec![role]), data)
    }

    pub fn validate(&self) -> Result<()> {
        self.header.check().map_err(Error::Shape)?;
        if self.data.len() != self.header.samples() {
            return Err(Error::Shape(format!(
                "{} samples for a {}x{}x{} raster",
                self.data.len(),
                self.header.width,
                self.header.height,
                self.header.bands
            )));
        }
        let bands = self.header.bands;
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if v < 0.0 && self.header.band_roles[i % bands] == BandRole::SarIntensity {
                return Err(Error::NegativeIntensity {
                    index: i,
                    value: v as f64,
                });
            }
        }
        Ok(())
    }

    pub fn header(&self) -> &RasterHeader {
        &self.header
    }

    pub fn width(&self) -> usize {
        self.header.width
    }

    pub fn height(&self) -> usize {
        self.header.height
    }

    pub fn bands(&self) -> usize {
        self.header.bands
    }

    pub fn roles(&self) -> &[BandRole] {
        &self.header.band_roles
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let b = self.header.bands;
        let i = (y * self.header.width + x) * b;
        &self.data[i..i + b]
    }

    /// One band copied out as a row-major plane.
    pub fn band(&self, band: usize) -> Vec<f32> {
        self.data
            .iter()
            .skip(band)
            .step_by(self.header.bands)
            .copied()
            .collect()
    }

    /// Copy of the pixels inside `b`, same band layout.
    pub fn crop(&self, b: Bounds) -> Result<Raster> {
        if b.width == 0 || b.height == 0 || b.x0 + b.width > self.width() || b.y0 + b.height > self.height() {
            return Err(Error::Shape(format!(
                "window {:?} outside {}x{} raster",
                b,
                self.width(),
                self.height()
            )));
        }
        let bands = self.bands();
        let mut data = Vec::with_capacity(b.pixels() * bands);
        for y in b.y0..b.y0 + b.height {
            let start = (y * self.width() + b.x0) * bands;
            data.extend_from_slice(&self.data[start..start + b.width * bands]);
        }
        Ok(Raster {
            header: RasterHeader::new(b.width, b.height, self.header.band_roles.clone()),
            data,
        })
    }
}

/// Payload path paired with a header path.
pub fn data_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

pub fn load_raster(header_path: impl AsRef<Path>) -> Result<Raster> {
    let header_path = header_path.as_ref();
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header = RasterHeader::parse(&text, header_path)?;
    let bin = data_path(header_path);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() as u64 != header.byte_len() {
        return Err(Error::ByteLength {
            path: bin,
            expected: header.byte_len(),
            actual: bytes.len() as u64,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Raster::new(header, data)
}

pub fn save_raster(r: &Raster, header_path: impl AsRef<Path>) -> Result<()> {
    r.validate()?;
    let header_path = header_path.as_ref();
    let mut bytes = Vec::with_capacity(r.data.len() * 4);
    for v in &r.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let bin = data_path(header_path);
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    fs::write(header_path, r.header.to_text()).map_err(|e| Error::io(header_path, e))?;
    Ok(())
}

/// Per-pixel change / no-change grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    values: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("mask dimensions {width}x{height}")));
        }
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} mask",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.values[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

/// Reads a P5 mask; `expected` is an optional `(width, height)` to enforce.
pub fn load_mask(path: impl AsRef<Path>, expected: Option<(usize, usize)>) -> Result<Mask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mask = parse_pgm(&bytes)?;
    if let Some((w, h)) = expected {
        if (mask.width, mask.height) != (w, h) {
            return Err(Error::Shape(format!(
                "mask {} is {}x{}, expected {w}x{h}",
                path.display(),
                mask.width,
                mask.height
            )));
        }
    }
    Ok(mask)
}

pub fn save_mask(m: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_pgm(m)).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(m: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.width, m.height).into_bytes();
    out.extend(m.values.iter().map(|&v| if v { 255u8 } else { 0u8 }));
    out
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Mask> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Pgm("missing P5 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pgm("truncated header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Pgm("header field out of range".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Pgm(format!("maxval {maxval}, expected 255")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Pgm("missing separator after header".into())),
    }
    let payload = &bytes[pos..];
    if payload.len() != width * height {
        return Err(Error::Pgm(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            width * height
        )));
    }
    Mask::new(width, height, payload.iter().map(|&b| b >= 128).collect())
        .map_err(|e| Error::Pgm(e.to_string()))
}
