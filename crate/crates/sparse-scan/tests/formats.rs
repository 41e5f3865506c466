use proptest::prelude::*;
use sparse_scan::checkpoint::{load_checkpoint, save_checkpoint, sidecar_path};
use sparse_scan::error::Error;
use sparse_scan::io::{decode_bin, decode_mask_pgm, encode_bin, encode_mask_pgm, format_csv, load_events, parse_csv, EventFormat};
use sparse_scan_core::backbone::{BackboneConfig, BackboneParams};
use sparse_scan_core::event::{Event, EventStream, Polarity, SensorGeometry};
use sparse_scan_core::grid::Grid;
use sparse_scan_core::nn::Parameters;
use sparse_scan_core::stca::SparsificationMap;

fn stream(raw: Vec<(u16, u16, u32, bool)>) -> EventStream {
    let mut events: Vec<Event> = raw
        .into_iter()
        .map(|(x, y, t, p)| Event::new(x, y, t as u64, if p { Polarity::Positive } else { Polarity::Negative }))
        .collect();
    events.sort_by_key(|e| e.t);
    let end = events.last().map_or(0, |e| e.t) + 5;
    EventStream::new(events, SensorGeometry::new(40, 30), 0, end).unwrap()
}

proptest! {
    #[test]
    fn binary_round_trip_is_bit_exact(raw in prop::collection::vec((0u16..40, 0u16..30, 0u32..1_000_000, any::<bool>()), 0..100)) {
        let s = stream(raw);
        let bytes = encode_bin(&s).unwrap();
        let back = decode_bin(&bytes).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(encode_bin(&back).unwrap(), bytes);
    }

    #[test]
    fn csv_round_trip(raw in prop::collection::vec((0u16..40, 0u16..30, 0u32..1_000_000, any::<bool>()), 0..100)) {
        let s = stream(raw);
        prop_assert_eq!(parse_csv(&format_csv(&s)).unwrap(), s);
    }
}

#[test]
fn negative_polarity_is_0xff() {
    let s = EventStream::new(vec![Event::new(1, 2, 3, Polarity::Negative)], SensorGeometry::new(4, 4), 0, 10).unwrap();
    let bytes = encode_bin(&s).unwrap();
    assert_eq!(&bytes[..4], b"EVT1");
    assert_eq!(bytes.len(), 16 + 12);
    assert_eq!(bytes[16 + 8], 0xFF);
    assert_eq!(&bytes[16 + 9..], &[0, 0, 0]);
}

#[test]
fn bad_binary_reports_offsets() {
    let s = EventStream::new(vec![Event::new(1, 2, 3, Polarity::Positive)], SensorGeometry::new(4, 4), 0, 10).unwrap();
    let mut bytes = encode_bin(&s).unwrap();
    bytes[24] = 7;
    assert_eq!(decode_bin(&bytes).unwrap_err().0, 24);
    assert_eq!(decode_bin(b"EVT2").unwrap_err().0, 0);
    let good = encode_bin(&s).unwrap();
    assert_eq!(decode_bin(&good[..good.len() - 1]).unwrap_err().0, 16);
}

#[test]
fn header_only_csv_is_empty() {
    let s = parse_csv("W=8,H=8\n").unwrap();
    assert!(s.is_empty());
    assert_eq!((s.width(), s.height()), (8, 8));
    let s = parse_csv("W=8,H=8\nx,y,t,p\n").unwrap();
    assert!(s.is_empty());
}

#[test]
fn csv_errors_carry_line_numbers() {
    let text = "W=8,H=8\nx,y,t,p\n1,1,5,1\n2,2,6,0\n";
    assert_eq!(parse_csv(text).unwrap_err().0, 4);
    let text = "W=8,H=8\nx,y,t,p\n1,1,5,1\n9,1,6,1\n";
    assert_eq!(parse_csv(text).unwrap_err().0, 4);
    let text = "W=8,H=8\nx,y,t,p\n1,1,5,1\n1,1,4,1\n";
    assert_eq!(parse_csv(text).unwrap_err().0, 4);
    assert_eq!(parse_csv("W=8\n").unwrap_err().0, 1);
    assert_eq!(parse_csv("W=8,H=8\nx,y,p,t\n").unwrap_err().0, 2);
}

#[test]
fn load_error_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "W=8,H=8\nx,y,t,p\n1,1\n").unwrap();
    let err = load_events(&path, EventFormat::Csv).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    assert!(err.to_string().contains("bad.csv"));
    let missing = load_events(&dir.path().join("none.bin"), EventFormat::Bin).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
}

#[test]
fn mask_round_trip() {
    let keep = Grid::from_fn(3, 5, |r, c| (r + c) % 2 == 0);
    let map = SparsificationMap { keep: keep.clone(), threshold: 0.0, beta: None };
    let rows = decode_mask_pgm(&encode_mask_pgm(&map)).unwrap();
    assert_eq!(rows.len(), 3);
    for (r, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 5);
        for (c, &k) in row.iter().enumerate() {
            assert_eq!(k, *keep.get(r, c));
        }
    }
}

fn tiny() -> BackboneConfig {
    BackboneConfig { input: (32, 32), patch: 2, bins: 2, channels: [4, 4, 8, 8], state: 2, mlp_ratio: 2, ..BackboneConfig::default() }
}

fn flatten(p: &dyn Parameters) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit("", &mut |_, _, v| out.extend_from_slice(v));
    out
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let a = BackboneParams::init(tiny(), 1).unwrap();
    save_checkpoint(&a, &path).unwrap();
    assert!(sidecar_path(&path).exists());

    let mut b = BackboneParams::init(tiny(), 2).unwrap();
    assert_ne!(flatten(&a), flatten(&b));
    load_checkpoint(&mut b, &path).unwrap();
    assert_eq!(flatten(&a), flatten(&b));

    let mut other = BackboneParams::init(BackboneConfig { state: 3, ..tiny() }, 1).unwrap();
    assert!(load_checkpoint(&mut other, &path).is_err());
}
