//! 16-bit binary PGM (`P5`) and PPM (`P6`) grids with `# key value` header
//! comments.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed grid file: {0}")]
    Format(String),
}

/// Raw 16-bit samples, `channels` interleaved per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid16 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u16>,
    /// `# key value` comment lines from the header, in file order.
    pub meta: BTreeMap<String, String>,
}

impl Grid16 {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
            meta: BTreeMap::new(),
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u16 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u16) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), PnmError> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(PnmError::Format(format!("{c} channels not representable"))),
        };
        writeln!(w, "{magic}")?;
        for (k, v) in &self.meta {
            writeln!(w, "# {k} {v}")?;
        }
        writeln!(w, "{} {}", self.width, self.height)?;
        writeln!(w, "65535")?;
        let mut bytes = Vec::with_capacity(self.data.len() * 2);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, PnmError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let mut meta = BTreeMap::new();
        let mut fields: Vec<String> = Vec::new();
        while fields.len() < 4 {
            // Skip whitespace, collect comments.
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= buf.len() {
                return Err(PnmError::Format("truncated header".into()));
            }
            if buf[pos] == b'#' {
                let end = buf[pos..].iter().position(|&b| b == b'\n').map_or(buf.len(), |e| pos + e);
                let line = String::from_utf8_lossy(&buf[pos + 1..end]).trim().to_string();
                if let Some((k, v)) = line.split_once(char::is_whitespace) {
                    meta.insert(k.to_string(), v.trim().to_string());
                }
                pos = end;
                continue;
            }
            let start = pos;
            while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(String::from_utf8_lossy(&buf[start..pos]).to_string());
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            m => return Err(PnmError::Format(format!("unsupported magic '{m}'"))),
        };
        let parse = |s: &str, what: &str| -> Result<usize, PnmError> {
            s.parse()
                .map_err(|_| PnmError::Format(format!("invalid {what} '{s}'")))
        };
        let width = parse(&fields[1], "width")?;
        let height = parse(&fields[2], "height")?;
        let maxval = parse(&fields[3], "maxval")?;
        if maxval != 65535 {
            return Err(PnmError::Format(format!("expected 16-bit maxval 65535, got {maxval}")));
        }
        let count = width * height * channels;
        let raster = buf
            .get(pos..pos + 2 * count)
            .ok_or_else(|| PnmError::Format(format!("raster truncated: need {} bytes", 2 * count)))?;
        let data = raster
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
            meta,
        })
    }

    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }
}
