use proptest::prelude::*;

use super::*;

fn encode_nmnist(events: &[Event]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(events.len() * 5);
    for e in events {
        let pol_bit = if e.p == 1 { 0x80u8 } else { 0 };
        bytes.push(e.x as u8);
        bytes.push(e.y as u8);
        bytes.push(pol_bit | ((e.t >> 16) & 0x7f) as u8);
        bytes.push(((e.t >> 8) & 0xff) as u8);
        bytes.push((e.t & 0xff) as u8);
    }
    bytes
}

#[test]
fn nmnist_decodes_the_documented_record() {
    let (stream, warnings) = parse_nmnist_binary(&[0x0a, 0x05, 0x80, 0x00, 0x64], 34, 34).unwrap();
    assert_eq!(stream.events(), &[Event { x: 10, y: 5, t: 100, p: 1 }]);
    assert!(warnings.is_empty());
}

#[test]
fn nmnist_decodes_the_all_zero_record() {
    let (stream, _) = parse_nmnist_binary(&[0, 0, 0, 0, 0], 34, 34).unwrap();
    assert_eq!(stream.events(), &[Event { x: 0, y: 0, t: 0, p: -1 }]);
}

#[test]
fn nmnist_rejects_partial_records() {
    let err = parse_nmnist_binary(&[1, 2, 3, 4, 5, 6, 7], 34, 34).unwrap_err();
    assert!(matches!(err, EventIoError::TruncatedRecord { len: 7 }));
}

#[test]
fn nmnist_rejects_out_of_bounds_coordinates() {
    let bytes = encode_nmnist(&[Event { x: 20, y: 1, t: 5, p: 1 }]);
    let err = parse_nmnist_binary(&bytes, 16, 16).unwrap_err();
    assert!(matches!(err, EventIoError::CoordinateOutOfBounds { index: 0, x: 20, .. }));
}

#[test]
fn nmnist_event_count_is_bytes_over_five() {
    let events: Vec<Event> =
        (0..37).map(|i| Event { x: i as u16 % 34, y: i as u16 % 34, t: i * 10, p: 1 }).collect();
    let bytes = encode_nmnist(&events);
    let (stream, _) = parse_nmnist_binary(&bytes, 34, 34).unwrap();
    assert_eq!(stream.len(), bytes.len() / 5);
    assert_eq!(stream.events(), events.as_slice());
}

#[test]
fn nmnist_keeps_non_monotonic_order_and_warns() {
    let events =
        vec![Event { x: 1, y: 1, t: 500, p: 1 }, Event { x: 2, y: 2, t: 100, p: -1 }];
    let bytes = encode_nmnist(&events);
    let (stream, warnings) = parse_nmnist_binary(&bytes, 34, 34).unwrap();
    assert_eq!(stream.events(), events.as_slice());
    assert_eq!(warnings, vec![ParseWarning::NonMonotonicTimestamp { index: 1 }]);
}

#[test]
fn portable_parses_single_event_with_label() {
    let (stream, _) = parse_portable_events("16,16,3\n2,3,100,1\n").unwrap();
    assert_eq!(stream.width, 16);
    assert_eq!(stream.label, Some(3));
    assert_eq!(stream.events(), &[Event { x: 2, y: 3, t: 100, p: 1 }]);
}

#[test]
fn portable_parses_empty_unlabeled_stream() {
    let (stream, _) = parse_portable_events("16,16\n").unwrap();
    assert!(stream.is_empty());
    assert_eq!(stream.label, None);
}

#[test]
fn portable_rejects_bad_polarity_with_line_number() {
    let err = parse_portable_events("16,16\n2,3,100,7\n").unwrap_err();
    assert!(matches!(err, EventIoError::MalformedLine(2)));
}

#[test]
fn portable_rejects_missing_header() {
    assert!(matches!(parse_portable_events(""), Err(EventIoError::MissingHeader)));
    assert!(matches!(parse_portable_events("banana\n1,1,1,1\n"), Err(EventIoError::MissingHeader)));
}

#[test]
fn portable_writes_the_documented_form() {
    let stream = EventStream::new(16, 16, Some(3), vec![Event { x: 2, y: 3, t: 100, p: 1 }]);
    assert_eq!(write_portable_events(&stream), "16,16,3\n2,3,100,1\n");
    let empty = EventStream::new(16, 16, None, vec![]);
    assert_eq!(write_portable_events(&empty), "16,16\n");
}

#[test]
fn split_windows_spreads_events_with_remainder_last() {
    let mk = |n: usize| {
        EventStream::new(
            8,
            8,
            None,
            (0..n).map(|i| Event { x: (i % 8) as u16, y: 0, t: i as i64, p: 1 }).collect(),
        )
    };
    let sizes =
        |s: &EventStream, w| s.split_windows(w).unwrap().iter().map(|x| x.len()).collect::<Vec<_>>();
    assert_eq!(sizes(&mk(8), 4), vec![2, 2, 2, 2]);
    assert_eq!(sizes(&mk(9), 4), vec![2, 2, 2, 3]);
    assert!(matches!(
        mk(3).split_windows(4),
        Err(EventIoError::TooFewEvents { events: 3, windows: 4 })
    ));
}

#[test]
fn split_windows_concatenation_is_identity() {
    let stream = EventStream::new(
        8,
        8,
        Some(1),
        (0..23).map(|i| Event { x: (i % 8) as u16, y: (i % 5) as u16, t: i as i64 * 7, p: if i % 3 == 0 { -1 } else { 1 } }).collect(),
    );
    for w in 1..=5 {
        let windows = stream.split_windows(w).unwrap();
        assert_eq!(windows.len(), w);
        let glued: Vec<Event> = windows.iter().flat_map(|s| s.events().iter().copied()).collect();
        assert_eq!(glued, stream.events());
        for win in &windows {
            assert_eq!(win.label, stream.label);
        }
    }
}

#[test]
fn manifest_round_trips_and_validates() {
    let m = DatasetManifest {
        width: 16,
        height: 16,
        classes: vec!["a".into(), "b".into()],
        entries: vec![
            ManifestEntry { path: "s0.events".into(), label: Some(1), split: Split::Train },
            ManifestEntry { path: "s1.events".into(), label: None, split: Split::Test },
        ],
    };
    let back = DatasetManifest::from_json(&m.to_json()).unwrap();
    assert_eq!(back.entries.len(), 2);
    assert_eq!(back.entries[0].label, Some(1));
    assert!(matches!(back.entries[1].split, Split::Test));

    let bad = DatasetManifest {
        classes: vec!["a".into(), "b".into()],
        entries: vec![ManifestEntry { path: "x".into(), label: Some(5), split: Split::Train }],
        ..m
    };
    assert!(matches!(bad.validate(), Err(EventIoError::InvalidConfig(_))));
}

#[test]
fn synthetic_generation_is_deterministic() {
    let a = synthesize_dataset(7, 3, 4, 16, 16, 300).unwrap();
    let b = synthesize_dataset(7, 3, 4, 16, 16, 300).unwrap();
    assert_eq!(a.items.len(), b.items.len());
    for (x, y) in a.items.iter().zip(&b.items) {
        assert_eq!(write_portable_events(&x.stream), write_portable_events(&y.stream));
        assert_eq!(x.frame, y.frame);
    }
    let c = synthesize_dataset(8, 3, 4, 16, 16, 300).unwrap();
    assert_ne!(
        write_portable_events(&a.items[0].stream),
        write_portable_events(&c.items[0].stream)
    );
}

#[test]
fn synthetic_dataset_is_balanced_and_sized() {
    let ds = synthesize_dataset(7, 4, 100, 16, 16, 300).unwrap();
    let train: Vec<_> = ds.split_items(Split::Train).collect();
    let test: Vec<_> = ds.split_items(Split::Test).collect();
    assert_eq!(train.len(), 400);
    assert_eq!(test.len(), 100);
    for c in 0..4 {
        assert_eq!(train.iter().filter(|s| s.class == c).count(), 100);
        assert_eq!(test.iter().filter(|s| s.class == c).count(), 25);
    }
}

#[test]
fn synthetic_streams_hold_stream_invariants() {
    let ds = synthesize_dataset(21, 4, 3, 16, 16, 240).unwrap();
    for item in &ds.items {
        assert_eq!(item.stream.len(), 240);
        assert_eq!(item.stream.label, Some(item.class));
        let events = item.stream.events();
        for pair in events.windows(2) {
            assert!(pair[0].t <= pair[1].t, "timestamps must be sorted");
        }
        assert!(events.iter().all(|e| e.t >= 0));
        assert!(item.frame.len() == 256);
        assert!(item.frame.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(item.frame.iter().any(|&v| v > 0.9), "frame should contain the bar");
        let pos = events.iter().filter(|e| e.p == 1).count();
        let neg = events.len() - pos;
        assert!(pos > 50 && neg > 50, "both polarities present: {pos}/{neg}");
    }
}

#[test]
fn synthetic_rejects_bad_configs() {
    assert!(matches!(
        synthesize_dataset(1, 1, 4, 16, 16, 300),
        Err(EventIoError::InvalidConfig(_))
    ));
    assert!(matches!(
        synthesize_dataset(1, 4, 4, 16, 16, 50),
        Err(EventIoError::InvalidConfig(_))
    ));
    assert!(matches!(
        synthesize_dataset(1, 4, 0, 16, 16, 300),
        Err(EventIoError::InvalidConfig(_))
    ));
}

prop_compose! {
    fn arb_stream()(width in 2u16..32, height in 2u16..32, label in proptest::option::of(0usize..10))
        (events in proptest::collection::vec((0..width, 0..height, 0i64..1_000_000, prop_oneof![Just(1i8), Just(-1i8)]), 0..60),
         width in Just(width), height in Just(height), label in Just(label))
        -> EventStream
    {
        let mut events: Vec<Event> = events.into_iter().map(|(x, y, t, p)| Event { x, y, t, p }).collect();
        events.sort_by_key(|e| e.t);
        EventStream::new(width, height, label, events)
    }
}

proptest! {
    #[test]
    fn portable_round_trip_is_identity(stream in arb_stream()) {
        let text = write_portable_events(&stream);
        let (back, warnings) = parse_portable_events(&text).unwrap();
        prop_assert_eq!(back, stream);
        prop_assert!(warnings.is_empty());
    }

    #[test]
    fn window_concatenation_is_identity(stream in arb_stream(), w in 1usize..6) {
        prop_assume!(stream.len() >= w);
        let windows = stream.split_windows(w).unwrap();
        let glued: Vec<Event> = windows.iter().flat_map(|s| s.events().iter().copied()).collect();
        prop_assert_eq!(glued, stream.events().to_vec());
        let max = windows.iter().map(|s| s.len()).max().unwrap();
        let min = windows.iter().map(|s| s.len()).min().unwrap();
        prop_assert!(max - min <= stream.len() % w);
    }
}
