//! Event files, keep masks and score tables.
//!
//! CSV event files start with a geometry line `W=<width>,H=<height>`,
//! optionally followed by `,start=<µs>,end=<µs>` for the window, then the
//! column header `x,y,t,p` and one event per line. Without an explicit
//! window the tightest window around the events is used.
//!
//! Binary event files are a 16-byte little-endian header (`EVT1`, u16
//! width, u16 height, u64 window span) followed by 12-byte records (u16 x,
//! u16 y, u32 offset from the window start, i8 polarity, three zero bytes).
//! The window start is not stored; loaded streams start at 0.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sparse_scan_core::event::{Event, EventStream, Polarity, SensorGeometry};
use sparse_scan_core::stca::{SparsificationMap, TokenScoreMap};

use crate::error::{Error, Result};

pub const BIN_MAGIC: &[u8; 4] = b"EVT1";
pub const BIN_HEADER_LEN: usize = 16;
pub const BIN_RECORD_LEN: usize = 12;
pub const CSV_COLUMNS: &str = "x,y,t,p";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Bin,
}

impl EventFormat {
    /// `.csv` is CSV; everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Bin,
        }
    }
}

pub fn load_events(path: &Path, format: EventFormat) -> Result<EventStream> {
    match format {
        EventFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv(&text).map_err(|(line, message)| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            })
        }
        EventFormat::Bin => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_bin(&bytes).map_err(|(offset, message)| Error::Binary {
                path: path.to_path_buf(),
                offset,
                message,
            })
        }
    }
}

pub fn save_events(stream: &EventStream, path: &Path, format: EventFormat) -> Result<()> {
    let bytes = match format {
        EventFormat::Csv => format_csv(stream).into_bytes(),
        EventFormat::Bin => encode_bin(stream)?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_geometry(line: &str) -> Result<(SensorGeometry, Option<(u64, u64)>), String> {
    let (mut w, mut h, mut start, mut end) = (None, None, None, None);
    for field in line.split(',') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format!("expected KEY=VALUE in geometry line, got {field:?}"))?;
        let value = value.trim();
        match key.trim() {
            "W" => w = Some(value.parse::<u16>().map_err(|e| format!("width: {e}"))?),
            "H" => h = Some(value.parse::<u16>().map_err(|e| format!("height: {e}"))?),
            "start" => start = Some(value.parse::<u64>().map_err(|e| format!("start: {e}"))?),
            "end" => end = Some(value.parse::<u64>().map_err(|e| format!("end: {e}"))?),
            other => return Err(format!("unknown geometry key {other:?}")),
        }
    }
    let (Some(w), Some(h)) = (w, h) else {
        return Err("geometry line must give W and H".into());
    };
    let window = match (start, end) {
        (Some(s), Some(e)) => Some((s, e)),
        (None, None) => None,
        _ => return Err("start and end must be given together".into()),
    };
    Ok((SensorGeometry::new(w, h), window))
}

fn parse_record(line: &str, geometry: SensorGeometry) -> Result<Event, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    let x: u16 = fields[0].parse().map_err(|e| format!("x: {e}"))?;
    let y: u16 = fields[1].parse().map_err(|e| format!("y: {e}"))?;
    let t: u64 = fields[2].parse().map_err(|e| format!("t: {e}"))?;
    let p: i64 = fields[3].parse().map_err(|e| format!("p: {e}"))?;
    let p = Polarity::from_sign(p).ok_or_else(|| format!("polarity must be -1 or 1, got {p}"))?;
    if x >= geometry.width || y >= geometry.height {
        return Err(format!(
            "pixel ({x}, {y}) outside the {}×{} sensor",
            geometry.width, geometry.height
        ));
    }
    Ok(Event::new(x, y, t, p))
}

/// Parses CSV text; errors carry a 1-based line number.
pub fn parse_csv(text: &str) -> Result<EventStream, (usize, String)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (n, first) = lines.find(|(_, l)| !l.is_empty()).ok_or((1, "missing geometry line".to_string()))?;
    let (geometry, window) = parse_geometry(first).map_err(|m| (n, m))?;
    let mut events = Vec::new();
    let mut seen_columns = false;
    let mut last_t = 0;
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        if !seen_columns {
            if line.replace(' ', "") != CSV_COLUMNS {
                return Err((n, format!("expected column header {CSV_COLUMNS:?}")));
            }
            seen_columns = true;
            continue;
        }
        let e = parse_record(line, geometry).map_err(|m| (n, m))?;
        if e.t < last_t {
            return Err((n, format!("timestamp {} precedes {last_t}", e.t)));
        }
        if let Some((s, end)) = window {
            if e.t < s || e.t > end {
                return Err((n, format!("timestamp {} outside window [{s}, {end}]", e.t)));
            }
        }
        last_t = e.t;
        events.push(e);
    }
    let stream = match window {
        Some((s, e)) => EventStream::new(events, geometry, s, e),
        None => EventStream::with_tight_window(events, geometry),
    };
    stream.map_err(|e| (n, e.to_string()))
}

pub fn format_csv(stream: &EventStream) -> String {
    let g = stream.geometry();
    let mut out = format!(
        "W={},H={},start={},end={}\n{CSV_COLUMNS}\n",
        g.width,
        g.height,
        stream.window_start(),
        stream.window_end()
    );
    for e in stream.events() {
        writeln!(out, "{},{},{},{}", e.x, e.y, e.t, e.p.sign()).expect("writing to a String");
    }
    out
}

pub fn encode_bin(stream: &EventStream) -> Result<Vec<u8>> {
    let g = stream.geometry();
    let start = stream.window_start();
    let mut out = Vec::with_capacity(BIN_HEADER_LEN + stream.len() * BIN_RECORD_LEN);
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&g.width.to_le_bytes());
    out.extend_from_slice(&g.height.to_le_bytes());
    out.extend_from_slice(&stream.span().to_le_bytes());
    for e in stream.events() {
        let offset = u32::try_from(e.t - start)
            .map_err(|_| Error::Format(format!("event at t={} is too far from the window start for a u32 offset", e.t)))?;
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.push(e.p.sign() as u8);
        out.extend_from_slice(&[0, 0, 0]);
    }
    Ok(out)
}

/// Decodes a binary file; errors carry the byte offset of the bad field.
pub fn decode_bin(bytes: &[u8]) -> Result<EventStream, (usize, String)> {
    if bytes.len() < BIN_HEADER_LEN {
        return Err((0, format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != BIN_MAGIC {
        return Err((0, "bad magic, expected EVT1".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let geometry = SensorGeometry::new(u16_at(4), u16_at(6));
    let span = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[BIN_HEADER_LEN..];
    if !body.len().is_multiple_of(BIN_RECORD_LEN) {
        return Err((
            BIN_HEADER_LEN + body.len() / BIN_RECORD_LEN * BIN_RECORD_LEN,
            "truncated record".into(),
        ));
    }
    let mut events = Vec::with_capacity(body.len() / BIN_RECORD_LEN);
    let mut last_t = 0;
    for (i, rec) in body.chunks_exact(BIN_RECORD_LEN).enumerate() {
        let at = BIN_HEADER_LEN + i * BIN_RECORD_LEN;
        let x = u16::from_le_bytes([rec[0], rec[1]]);
        let y = u16::from_le_bytes([rec[2], rec[3]]);
        let t = u32::from_le_bytes(rec[4..8].try_into().expect("4 bytes")) as u64;
        let p = Polarity::from_sign(rec[8] as i8 as i64).ok_or((at + 8, format!("polarity byte {:#04x}", rec[8])))?;
        if rec[9..12] != [0, 0, 0] {
            return Err((at + 9, "non-zero padding".into()));
        }
        if x >= geometry.width || y >= geometry.height {
            return Err((at, format!("pixel ({x}, {y}) outside the {}×{} sensor", geometry.width, geometry.height)));
        }
        if t < last_t {
            return Err((at + 4, format!("timestamp {t} precedes {last_t}")));
        }
        if t > span {
            return Err((at + 4, format!("offset {t} beyond the window span {span}")));
        }
        last_t = t;
        events.push(Event::new(x, y, t, p));
    }
    EventStream::new(events, geometry, 0, span).map_err(|e| (0, e.to_string()))
}

/// Binary PGM (P5): 255 for kept tokens, 0 for discarded.
pub fn encode_mask_pgm(map: &SparsificationMap) -> Vec<u8> {
    let (rows, cols) = map.dims();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(map.keep.as_slice().iter().map(|&k| if k { 255u8 } else { 0 }));
    out
}

/// Reads a mask written by [`encode_mask_pgm`]; any non-zero pixel is kept.
pub fn decode_mask_pgm(bytes: &[u8]) -> Result<Vec<Vec<bool>>> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected an 8-bit P5 image"));
    }
    let cols: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let rows: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let data = &bytes[pos + 1..];
    if data.len() != rows * cols {
        return Err(bad("pixel count does not match the header"));
    }
    Ok(data.chunks(cols.max(1)).take(rows).map(|r| r.iter().map(|&v| v != 0).collect()).collect())
}

/// One row of comma-separated token scores per line.
pub fn format_scores_csv(scores: &TokenScoreMap) -> String {
    let (_, cols) = scores.dims();
    let mut out = String::new();
    for row in scores.values.as_slice().chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// `position,row,col` for every entry of a scan order over a `cols`-wide grid.
pub fn format_order_csv(order: &[usize], cols: usize) -> String {
    let mut out = String::from("position,row,col\n");
    for (i, &idx) in order.iter().enumerate() {
        writeln!(out, "{i},{},{}", idx / cols, idx % cols).expect("writing to a String");
    }
    out
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
