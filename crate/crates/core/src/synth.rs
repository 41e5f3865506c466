//! Deterministic synthetic event scenes.
//!
//! Activity events come from straight edges translating across the sensor:
//! every pixel an edge newly enters emits a burst of events with consecutive
//! microsecond timestamps. Noise is an independent Poisson process per pixel,
//! so noise events are isolated in space and scattered in time.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity, SensorGeometry};
use crate::grid::Grid;

/// A straight edge moving at constant velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSegment {
    /// Endpoints at t = 0, in pixel coordinates `(x, y)`.
    pub start: (f64, f64),
    pub end: (f64, f64),
    /// Pixels per second along `(x, y)`.
    pub velocity: (f64, f64),
    /// Events emitted by each pixel the edge enters.
    pub burst: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub geometry: SensorGeometry,
    /// Scene length in microseconds.
    pub duration: u64,
    pub segments: Vec<EdgeSegment>,
    /// Background-activity rate in events per pixel per second.
    pub noise_rate: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.duration == 0 {
            return Err(Error::Spec("duration must be positive".into()));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return Err(Error::Spec(format!("noise rate {} is not a non-negative number", self.noise_rate)));
        }
        if self.geometry.width == 0 || self.geometry.height == 0 {
            return Err(Error::Spec("sensor must have positive extent".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            let len = libm::hypot(s.end.0 - s.start.0, s.end.1 - s.start.1);
            if !(len > 0.0) {
                return Err(Error::Spec(format!("segment {i} has zero length")));
            }
            if s.burst == 0 {
                return Err(Error::Spec(format!("segment {i} has an empty burst")));
            }
            if !(s.velocity.0.is_finite() && s.velocity.1.is_finite()) {
                return Err(Error::Spec(format!("segment {i} has a non-finite velocity")));
            }
        }
        Ok(())
    }

    /// Named presets on a 64×64 sensor over 50 ms.
    ///
    /// - `edge-noise`: two moving bars plus background activity.
    /// - `edges`: the same bars without noise.
    /// - `noise`: background activity only.
    pub fn preset(name: &str) -> Option<SceneSpec> {
        let bars = alloc::vec![
            EdgeSegment {
                start: (6.0, 6.0),
                end: (6.0, 40.0),
                velocity: (300.0, 0.0),
                burst: 6,
            },
            EdgeSegment {
                start: (20.0, 44.0),
                end: (58.0, 44.0),
                velocity: (0.0, 200.0),
                burst: 6,
            },
        ];
        let base = SceneSpec {
            geometry: SensorGeometry::new(64, 64),
            duration: 50_000,
            segments: bars,
            noise_rate: 2.0,
        };
        match name {
            "edge-noise" => Some(base),
            "edges" => Some(SceneSpec {
                noise_rate: 0.0,
                ..base
            }),
            "noise" => Some(SceneSpec {
                segments: Vec::new(),
                noise_rate: 20.0,
                ..base
            }),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 3] = ["edge-noise", "edges", "noise"];
}

/// Output of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub stream: EventStream,
    /// Pixels swept by an edge, `height × width`.
    pub object_mask: Grid<bool>,
    /// Number of events that came from the noise process.
    pub noise_events: usize,
}

fn pixels_on_segment(a: (f64, f64), b: (f64, f64), geometry: SensorGeometry, out: &mut BTreeSet<(u16, u16)>) {
    let len = libm::hypot(b.0 - a.0, b.1 - a.1);
    let steps = (libm::ceil(len * 2.0) as usize).max(1);
    for i in 0..=steps {
        let f = i as f64 / steps as f64;
        let x = libm::round(a.0 + (b.0 - a.0) * f);
        let y = libm::round(a.1 + (b.1 - a.1) * f);
        if x >= 0.0 && y >= 0.0 && x < geometry.width as f64 && y < geometry.height as f64 {
            out.insert((y as u16, x as u16));
        }
    }
}

/// Renders `spec` with the given seed.
pub fn generate_synthetic_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let geometry = spec.geometry;
    let duration = spec.duration;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<Event> = Vec::new();
    let mut mask = Grid::filled(geometry.height as usize, geometry.width as usize, false);

    for seg in &spec.segments {
        let speed = libm::hypot(seg.velocity.0, seg.velocity.1);
        // Half a pixel of travel per step so no pixel is skipped.
        let (step_us, steps) = if speed > 0.0 {
            let step = (5e5 / speed).max(1.0);
            (step, (duration as f64 / step) as usize)
        } else {
            (0.0, 0)
        };
        let burst = seg.burst as u64;
        let mut covered: BTreeSet<(u16, u16)> = BTreeSet::new();
        for k in 0..=steps {
            let t = libm::floor(k as f64 * step_us) as u64;
            if t > duration {
                break;
            }
            let dx = seg.velocity.0 * t as f64 * 1e-6;
            let dy = seg.velocity.1 * t as f64 * 1e-6;
            let mut now = BTreeSet::new();
            pixels_on_segment(
                (seg.start.0 + dx, seg.start.1 + dy),
                (seg.end.0 + dx, seg.end.1 + dy),
                geometry,
                &mut now,
            );
            let first = t.min((duration + 1).saturating_sub(burst));
            for &(y, x) in now.difference(&covered) {
                *mask.get_mut(y as usize, x as usize) = true;
                for j in 0..burst {
                    events.push(Event::new(x, y, (first + j).min(duration), Polarity::Positive));
                }
            }
            covered = now;
        }
    }

    let mut noise_events = 0;
    if spec.noise_rate > 0.0 {
        let rate_per_us = spec.noise_rate * 1e-6;
        for y in 0..geometry.height {
            for x in 0..geometry.width {
                let mut t = 0.0f64;
                loop {
                    let u: f64 = rng.random();
                    t += -libm::log1p(-u) / rate_per_us;
                    if t >= duration as f64 {
                        break;
                    }
                    let p = if rng.random::<bool>() {
                        Polarity::Positive
                    } else {
                        Polarity::Negative
                    };
                    events.push(Event::new(x, y, t as u64, p));
                    noise_events += 1;
                }
            }
        }
    }

    events.sort_by_key(|e| (e.t, e.y, e.x, e.p));
    let stream = EventStream::new(events, geometry, 0, duration)?;
    Ok(SyntheticScene {
        stream,
        object_mask: mask,
        noise_events,
    })
}

/// A scene laid out directly on the token grid.
///
/// Object tokens fire a burst at every pixel near the end of the window;
/// noise is a handful of single events, at most one per token, placed only
/// in tokens that are not object tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSceneSpec {
    pub token_rows: usize,
    pub token_cols: usize,
    pub patch: usize,
    pub duration: u64,
    /// Side length of the square object blob, in tokens.
    pub object_side: usize,
    /// Events per object pixel.
    pub burst: u32,
    /// Bursts start within this trailing fraction of the window.
    pub late_fraction: f64,
    /// Number of isolated noise events.
    pub noise_events: usize,
}

impl Default for TokenSceneSpec {
    fn default() -> Self {
        Self {
            token_rows: 16,
            token_cols: 16,
            patch: 4,
            duration: 100_000,
            object_side: 3,
            burst: 5,
            late_fraction: 0.2,
            noise_events: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenScene {
    pub stream: EventStream,
    pub object_tokens: Grid<bool>,
    /// Tokens holding a noise event.
    pub noise_tokens: Grid<bool>,
}

pub fn generate_token_scene(spec: &TokenSceneSpec, seed: u64) -> Result<TokenScene> {
    let (rows, cols, p) = (spec.token_rows, spec.token_cols, spec.patch);
    if spec.object_side == 0 || spec.object_side > rows.min(cols) || p == 0 || spec.burst == 0 {
        return Err(Error::Spec("object blob does not fit the token grid".into()));
    }
    let (width, height) = (cols * p, rows * p);
    if width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(Error::Spec("sensor too large".into()));
    }
    let burst = spec.burst as u64;
    if spec.duration < 2 * burst {
        return Err(Error::Spec("duration too short for the burst".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = rng.random_range(0..=rows - spec.object_side);
    let left = rng.random_range(0..=cols - spec.object_side);
    let object = Grid::from_fn(rows, cols, |r, c| {
        (top..top + spec.object_side).contains(&r) && (left..left + spec.object_side).contains(&c)
    });

    let late_start = ((1.0 - spec.late_fraction) * spec.duration as f64) as u64;
    let late_end = spec.duration - burst;
    let mut events = Vec::new();
    for (r, c, &is_obj) in object.iter_indexed() {
        if !is_obj {
            continue;
        }
        for dy in 0..p {
            for dx in 0..p {
                let t0 = rng.random_range(late_start.min(late_end)..=late_end);
                for j in 0..burst {
                    events.push(Event::new((c * p + dx) as u16, (r * p + dy) as u16, t0 + j, Polarity::Positive));
                }
            }
        }
    }

    let mut noise = Grid::filled(rows, cols, false);
    let free = object.as_slice().iter().filter(|&&o| !o).count();
    let wanted = spec.noise_events.min(free);
    let mut placed = 0;
    while placed < wanted {
        let r = rng.random_range(0..rows);
        let c = rng.random_range(0..cols);
        if *object.get(r, c) || *noise.get(r, c) {
            continue;
        }
        *noise.get_mut(r, c) = true;
        let x = (c * p + rng.random_range(0..p)) as u16;
        let y = (r * p + rng.random_range(0..p)) as u16;
        let t = rng.random_range(0..=spec.duration);
        let pol = if rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative };
        events.push(Event::new(x, y, t, pol));
        placed += 1;
    }
    events.sort_by_key(|e| (e.t, e.y, e.x, e.p));
    let stream = EventStream::new(events, SensorGeometry::new(width as u16, height as u16), 0, spec.duration)?;
    Ok(TokenScene {
        stream,
        object_tokens: object,
        noise_tokens: noise,
    })
}
