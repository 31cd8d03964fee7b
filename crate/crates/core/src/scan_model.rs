//! Domain types shared by every stage and the `.usv` volume file format.
//!
//! A volume file is a fixed 24-byte little-endian header followed by the
//! amplitude payload:
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | magic `USVF`                              |
//! | 4..8   | format version, u32 (= 1)                 |
//! | 8..12  | height H, u32                             |
//! | 12..16 | width W, u32                              |
//! | 16..20 | samples S, u32                            |
//! | 20..24 | frequency code, u32 (0 = 2.5 MHz, 1 = 5.0 MHz) |
//! | 24..   | H·W·S f32, row-major, sample axis innermost |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VOLUME_MAGIC: [u8; 4] = *b"USVF";
pub const VOLUME_VERSION: u32 = 1;
pub const VOLUME_HEADER_LEN: usize = 24;

/// Per-point sample counts the acquisition system produces.
pub const ALLOWED_SAMPLES: [usize; 3] = [512, 1024, 2048];

/// Transducer center frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum Frequency {
    Mhz2_5,
    Mhz5_0,
}

impl Frequency {
    pub fn mhz(self) -> f64 {
        match self {
            Frequency::Mhz2_5 => 2.5,
            Frequency::Mhz5_0 => 5.0,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Frequency::Mhz2_5 => 0,
            Frequency::Mhz5_0 => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Frequency::Mhz2_5),
            1 => Some(Frequency::Mhz5_0),
            _ => None,
        }
    }
}

impl TryFrom<f64> for Frequency {
    type Error = String;

    fn try_from(mhz: f64) -> std::result::Result<Self, Self::Error> {
        if mhz == 2.5 {
            Ok(Frequency::Mhz2_5)
        } else if mhz == 5.0 {
            Ok(Frequency::Mhz5_0)
        } else {
            Err(format!("unsupported transducer frequency {mhz} MHz (expected 2.5 or 5.0)"))
        }
    }
}

impl From<Frequency> for f64 {
    fn from(f: Frequency) -> f64 {
        f.mhz()
    }
}

/// Raw ultrasonic scan: an A-scan of `samples` amplitudes at every point of
/// a `height` x `width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanVolume {
    height: usize,
    width: usize,
    samples: usize,
    frequency: Frequency,
    amplitudes: Vec<f32>,
    panel_id: String,
}

impl ScanVolume {
    pub fn new(
        height: usize,
        width: usize,
        samples: usize,
        frequency: Frequency,
        amplitudes: Vec<f32>,
        panel_id: impl Into<String>,
    ) -> Result<Self> {
        check_geometry(height, width, samples)?;
        let expected = height * width * samples;
        if amplitudes.len() != expected {
            return Err(Error::Invariant(format!(
                "amplitude buffer has {} values, {height}x{width}x{samples} needs {expected}",
                amplitudes.len()
            )));
        }
        if let Some(i) = amplitudes.iter().position(|a| !a.is_finite()) {
            return Err(Error::Invariant(format!("amplitude {i} is not finite")));
        }
        Ok(Self {
            height,
            width,
            samples,
            frequency,
            amplitudes,
            panel_id: panel_id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn panel_id(&self) -> &str {
        &self.panel_id
    }

    pub fn set_panel_id(&mut self, panel_id: impl Into<String>) {
        self.panel_id = panel_id.into();
    }

    pub fn amplitudes(&self) -> &[f32] {
        &self.amplitudes
    }

    /// The A-scan recorded at one point.
    pub fn ascan(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.samples;
        &self.amplitudes[start..start + self.samples]
    }

    /// Payload size in bytes.
    pub fn payload_len(&self) -> usize {
        self.amplitudes.len() * 4
    }
}

fn check_geometry(height: usize, width: usize, samples: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Invariant(format!(
            "scan grid must be non-empty, got {height}x{width}"
        )));
    }
    if height > u32::MAX as usize || width > u32::MAX as usize {
        return Err(Error::Invariant(format!(
            "grid {height}x{width} does not fit the volume header"
        )));
    }
    if !ALLOWED_SAMPLES.contains(&samples) {
        return Err(Error::Invariant(format!(
            "samples per point must be one of {ALLOWED_SAMPLES:?}, got {samples}"
        )));
    }
    Ok(())
}

/// Serialize `volume` into `sink` in the `.usv` layout.
pub fn write_volume<W: Write>(volume: &ScanVolume, sink: &mut W) -> std::io::Result<()> {
    let mut header = [0u8; VOLUME_HEADER_LEN];
    header[0..4].copy_from_slice(&VOLUME_MAGIC);
    header[4..8].copy_from_slice(&VOLUME_VERSION.to_le_bytes());
    // Dimensions were range-checked at construction.
    header[8..12].copy_from_slice(&(volume.height as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(volume.width as u32).to_le_bytes());
    header[16..20].copy_from_slice(&(volume.samples as u32).to_le_bytes());
    header[20..24].copy_from_slice(&volume.frequency.code().to_le_bytes());
    sink.write_all(&header)?;

    let mut chunk = Vec::with_capacity(volume.samples * 4 * 64);
    for block in volume.amplitudes.chunks(volume.samples * 64) {
        chunk.clear();
        for a in block {
            chunk.extend_from_slice(&a.to_le_bytes());
        }
        sink.write_all(&chunk)?;
    }
    Ok(())
}

/// Parse a volume from `source`. The returned volume has an empty panel id;
/// [`load_volume`] fills it from the file name.
pub fn read_volume<R: Read>(source: &mut R) -> Result<ScanVolume> {
    let mut header = [0u8; VOLUME_HEADER_LEN];
    read_exact_or_format(source, &mut header, "header")?;
    if header[0..4] != VOLUME_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            &header[0..4],
            VOLUME_MAGIC
        )));
    }
    let field = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = field(4);
    if version != VOLUME_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (height, width, samples) = (field(8) as usize, field(12) as usize, field(16) as usize);
    let frequency = Frequency::from_code(field(20))
        .ok_or_else(|| Error::Invariant(format!("unknown frequency code {}", field(20))))?;
    check_geometry(height, width, samples)?;

    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(samples))
        .ok_or_else(|| Error::Format("declared dimensions overflow".into()))?;
    // Header is untrusted; cap the up-front reservation.
    let mut amplitudes = Vec::with_capacity(count.min(1 << 24));
    let mut buf = vec![0u8; samples * 4 * 64];
    let mut remaining = count;
    while remaining > 0 {
        let n = remaining.min(samples * 64);
        let bytes = &mut buf[..n * 4];
        read_exact_or_format(source, bytes, "payload")?;
        amplitudes.extend(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
        );
        remaining -= n;
    }
    let mut trailing = [0u8; 1];
    match source.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(Error::Format("trailing bytes after payload".into())),
        Err(e) => return Err(Error::Format(format!("reading past payload: {e}"))),
    }
    ScanVolume::new(height, width, samples, frequency, amplitudes, "")
}

fn read_exact_or_format<R: Read>(source: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    source.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Format(format!("reading {what}: {e}")),
    })
}

/// Write `volume` to `path`.
pub fn save_volume(volume: &ScanVolume, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut sink = BufWriter::with_capacity(1 << 20, file);
    write_volume(volume, &mut sink).map_err(|e| Error::io(path, e))?;
    sink.flush().map_err(|e| Error::io(path, e))
}

/// Read the volume at `path`, taking its panel id from the file stem.
pub fn load_volume(path: &Path) -> Result<ScanVolume> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut source = BufReader::with_capacity(1 << 20, file);
    let mut volume = read_volume(&mut source)?;
    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
        volume.panel_id = stem.to_string();
    }
    Ok(volume)
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Invariant(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::Invariant(format!(
                "pixel buffer has {} values, {height}x{width} needs {}",
                pixels.len(),
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * self.width + col] = value;
    }
}

/// Per-point variance over the sample axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl VarianceMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Invariant(format!(
                "variance map {height}x{width} with {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invariant(format!(
                "variance value {} at index {i} is negative or not finite",
                values[i]
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}
