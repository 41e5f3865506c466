//! Event records, validated streams and the temporal voxel grid.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Error, Result};

/// Sign of a brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    #[inline]
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

/// A single event: pixel column `x`, pixel row `y`, timestamp `t` in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }
}

/// Sensor extent in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16) -> Self {
        Self { width, height }
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Events ordered by timestamp within a closed accumulation window.
///
/// Construction validates bounds, ordering and window membership, so every
/// `EventStream` in circulation satisfies those invariants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    geometry: SensorGeometry,
    window_start: u64,
    window_end: u64,
}

impl EventStream {
    pub fn new(
        events: Vec<Event>,
        geometry: SensorGeometry,
        window_start: u64,
        window_end: u64,
    ) -> Result<Self> {
        if window_end < window_start {
            return Err(Error::Validation(format!(
                "window end {window_end} precedes start {window_start}"
            )));
        }
        let mut previous: Option<u64> = None;
        for (index, e) in events.iter().enumerate() {
            if e.x >= geometry.width || e.y >= geometry.height {
                return Err(Error::Validation(format!(
                    "event {index} at ({}, {}) outside {}x{} sensor",
                    e.x, e.y, geometry.width, geometry.height
                )));
            }
            if let Some(prev) = previous {
                if e.t < prev {
                    return Err(Error::Ordering {
                        index,
                        previous: prev,
                        found: e.t,
                    });
                }
            }
            if e.t < window_start || e.t > window_end {
                return Err(Error::Validation(format!(
                    "event {index} at t={} outside window [{window_start}, {window_end}]",
                    e.t
                )));
            }
            previous = Some(e.t);
        }
        Ok(Self {
            events,
            geometry,
            window_start,
            window_end,
        })
    }

    /// Builds a stream whose window is `[0, last timestamp]`.
    pub fn with_tight_window(events: Vec<Event>, geometry: SensorGeometry) -> Result<Self> {
        let end = events.last().map_or(0, |e| e.t);
        Self::new(events, geometry, 0, end)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn width(&self) -> usize {
        self.geometry.width as usize
    }

    pub fn height(&self) -> usize {
        self.geometry.height as usize
    }

    pub fn window_start(&self) -> u64 {
        self.window_start
    }

    pub fn window_end(&self) -> u64 {
        self.window_end
    }

    pub fn span(&self) -> u64 {
        self.window_end - self.window_start
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Fraction of sensor pixels that fired at least once.
    pub fn spatial_ratio(&self) -> f64 {
        let w = self.width();
        let mut hit = vec![false; self.geometry.pixels()];
        for e in &self.events {
            hit[e.y as usize * w + e.x as usize] = true;
        }
        let n = hit.iter().filter(|&&h| h).count();
        n as f64 / self.geometry.pixels().max(1) as f64
    }

    /// Splits the window into `parts` equal consecutive sub-windows.
    ///
    /// Events on an interior boundary go to the later slice; the last slice
    /// is closed on both ends.
    pub fn split(&self, parts: usize) -> Result<Vec<EventStream>> {
        if parts == 0 {
            return Err(config_err!("cannot split a stream into zero parts"));
        }
        let span = self.span();
        let bounds: Vec<u64> = (0..=parts)
            .map(|i| self.window_start + (span as u128 * i as u128 / parts as u128) as u64)
            .collect();
        let mut out = Vec::with_capacity(parts);
        let mut cursor = 0;
        for i in 0..parts {
            let (lo, hi) = (bounds[i], bounds[i + 1]);
            let last = i + 1 == parts;
            let start = cursor;
            while cursor < self.events.len() && (self.events[cursor].t < hi || last) {
                cursor += 1;
            }
            debug_assert!(self.events[start..cursor].iter().all(|e| e.t >= lo));
            out.push(EventStream {
                events: self.events[start..cursor].to_vec(),
                geometry: self.geometry,
                window_start: lo,
                window_end: hi,
            });
        }
        Ok(out)
    }
}

/// Temporal voxel grid with separate polarity channels.
///
/// Layout is `(2·bins, height, width)`: channels `0..bins` hold positive
/// events, `bins..2·bins` negative events.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    values: Vec<f64>,
    bins: usize,
    height: usize,
    width: usize,
    span: u64,
}

impl VoxelGrid {
    pub fn zeros(bins: usize, height: usize, width: usize, span: u64) -> Self {
        Self {
            values: vec![0.0; 2 * bins * height * width],
            bins,
            height,
            width,
            span,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        2 * self.bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Normalization span in microseconds.
    pub fn span(&self) -> u64 {
        self.span
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn channel_index(&self, polarity: Polarity, bin: usize) -> usize {
        match polarity {
            Polarity::Positive => bin,
            Polarity::Negative => self.bins + bin,
        }
    }

    #[inline]
    pub fn at(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.values[(channel * self.height + y) * self.width + x]
    }

    #[inline]
    fn at_mut(&mut self, channel: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.values[(channel * self.height + y) * self.width + x]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Temporal bilinear weights of one event: `(bin, weight)` pairs.
///
/// `t* = (t − start)·(B−1)/span`; bin `b` receives `max(0, 1 − |b − t*|)`.
/// An event landing exactly on a bin centre contributes to that bin only.
pub fn temporal_weights(offset: u64, span: u64, bins: usize) -> [(usize, f64); 2] {
    if bins == 1 {
        return [(0, 1.0), (0, 0.0)];
    }
    let pos = offset as f64 * (bins - 1) as f64 / span as f64;
    let lower = (libm::floor(pos) as usize).min(bins - 1);
    let frac = pos - lower as f64;
    if frac <= 0.0 || lower + 1 >= bins {
        [(lower, 1.0), (lower, 0.0)]
    } else {
        [(lower, 1.0 - frac), (lower + 1, frac)]
    }
}

/// Accumulates a stream into `bins` temporal bins per polarity.
pub fn build_voxel_grid(stream: &EventStream, bins: usize) -> Result<VoxelGrid> {
    if bins == 0 {
        return Err(config_err!("voxel grid needs at least one bin"));
    }
    let span = stream.span();
    if span == 0 {
        return Err(config_err!("voxel grid needs a window with positive span"));
    }
    let mut grid = VoxelGrid::zeros(bins, stream.height(), stream.width(), span);
    for e in stream.events() {
        for (bin, w) in temporal_weights(e.t - stream.window_start(), span, bins) {
            if w > 0.0 {
                let ch = grid.channel_index(e.p, bin);
                *grid.at_mut(ch, e.y as usize, e.x as usize) += w;
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom() -> SensorGeometry {
        SensorGeometry::new(8, 8)
    }

    #[test]
    fn rejects_out_of_bounds() {
        let e = Event::new(8, 0, 0, Polarity::Positive);
        assert!(matches!(
            EventStream::new(vec![e], geom(), 0, 10),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn rejects_decreasing_timestamps() {
        let evs = vec![
            Event::new(0, 0, 5, Polarity::Positive),
            Event::new(0, 0, 4, Polarity::Positive),
        ];
        assert_eq!(
            EventStream::new(evs, geom(), 0, 10),
            Err(Error::Ordering {
                index: 1,
                previous: 5,
                found: 4
            })
        );
    }

    #[test]
    fn rejects_events_outside_window() {
        let evs = vec![Event::new(0, 0, 11, Polarity::Positive)];
        assert!(EventStream::new(evs, geom(), 0, 10).is_err());
    }

    #[test]
    fn event_at_bin_centre_hits_one_bin() {
        // B = 5, span 400: bin 2 centre sits at offset 200.
        let s = EventStream::new(vec![Event::new(1, 2, 200, Polarity::Positive)], geom(), 0, 400).unwrap();
        let v = build_voxel_grid(&s, 5).unwrap();
        for b in 0..5 {
            let expect = if b == 2 { 1.0 } else { 0.0 };
            assert_eq!(v.at(b, 2, 1), expect);
        }
        assert_eq!(v.total(), 1.0);
    }

    #[test]
    fn event_between_bins_splits_evenly() {
        // B = 2, span 100: offset 50 sits midway between bins 0 and 1.
        let s = EventStream::new(vec![Event::new(0, 0, 50, Polarity::Negative)], geom(), 0, 100).unwrap();
        let v = build_voxel_grid(&s, 2).unwrap();
        assert_eq!(v.at(v.channel_index(Polarity::Negative, 0), 0, 0), 0.5);
        assert_eq!(v.at(v.channel_index(Polarity::Negative, 1), 0, 0), 0.5);
        assert_eq!(v.at(0, 0, 0), 0.0);
    }

    #[test]
    fn single_bin_takes_everything() {
        let evs = vec![
            Event::new(0, 0, 0, Polarity::Positive),
            Event::new(0, 0, 37, Polarity::Positive),
            Event::new(0, 0, 100, Polarity::Positive),
        ];
        let s = EventStream::new(evs, geom(), 0, 100).unwrap();
        let v = build_voxel_grid(&s, 1).unwrap();
        assert_eq!(v.at(0, 0, 0), 3.0);
    }

    #[test]
    fn zero_bins_is_a_config_error() {
        let s = EventStream::new(vec![], geom(), 0, 100).unwrap();
        assert!(matches!(build_voxel_grid(&s, 0), Err(Error::Config(_))));
    }

    #[test]
    fn polarity_channel_mass_matches_event_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ts: Vec<u64> = (0..10).map(|_| rng.random_range(0..=1000)).collect();
        ts.sort_unstable();
        let evs: Vec<Event> = ts
            .iter()
            .map(|&t| Event::new(rng.random_range(0..8), rng.random_range(0..8), t, Polarity::Positive))
            .collect();
        let s = EventStream::new(evs, geom(), 0, 1000).unwrap();
        let v = build_voxel_grid(&s, 7).unwrap();
        let positive: f64 = (0..7)
            .map(|b| (0..8).flat_map(|y| (0..8).map(move |x| (y, x))).map(|(y, x)| v.at(b, y, x)).sum::<f64>())
            .sum();
        assert!((positive - 10.0).abs() < 1e-12);
    }

    #[test]
    fn split_partitions_events() {
        let evs: Vec<Event> = (0..=10).map(|t| Event::new(0, 0, t * 10, Polarity::Positive)).collect();
        let s = EventStream::new(evs, geom(), 0, 100).unwrap();
        let parts = s.split(4).unwrap();
        assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), 11);
        assert_eq!(parts[0].window_start(), 0);
        assert_eq!(parts[3].window_end(), 100);
        assert!(parts[3].events().iter().any(|e| e.t == 100));
    }
}
