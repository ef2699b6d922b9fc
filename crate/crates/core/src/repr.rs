//! Dense representations of event streams: the three target-model inputs.
//!
//! All builders tolerate unsorted input: temporal normalization uses the
//! min/max timestamp of the whole stream, and the stack builder sorts a
//! copy when the stream is out of order before taking its prefix.

use crate::event_io::EventStream;

/// Which of the three representations a target model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RepresentationKind {
    Stack = 1,
    Voxel = 2,
    Est = 3,
}

impl RepresentationKind {
    pub fn all() -> [RepresentationKind; 3] {
        [RepresentationKind::Stack, RepresentationKind::Voxel, RepresentationKind::Est]
    }

    pub fn name(self) -> &'static str {
        match self {
            RepresentationKind::Stack => "stack",
            RepresentationKind::Voxel => "voxel",
            RepresentationKind::Est => "est",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "stack" => Some(RepresentationKind::Stack),
            "voxel" => Some(RepresentationKind::Voxel),
            "est" => Some(RepresentationKind::Est),
            _ => None,
        }
    }

    /// Flattened input length for a `width x height` sensor with `bins`
    /// temporal bins.
    pub fn input_len(self, width: u16, height: u16, bins: usize) -> usize {
        let pixels = width as usize * height as usize;
        match self {
            RepresentationKind::Stack => pixels,
            RepresentationKind::Voxel => pixels * bins,
            RepresentationKind::Est => pixels * bins * 2,
        }
    }
}

/// Signed count accumulation of a stream prefix, min-max normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct StackImage {
    pub width: u16,
    pub height: u16,
    /// Events actually consumed: min(count_threshold, stream length).
    pub count_used: usize,
    /// Row-major `[y][x]`, values in [0, 1].
    pub data: Vec<f64>,
}

/// Signed polarity counts spread over temporal bins with a bilinear kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub width: u16,
    pub height: u16,
    pub bins: usize,
    pub t_min: i64,
    pub t_max: i64,
    /// Row-major `[y][x][bin]`.
    pub data: Vec<f64>,
}

/// Normalized-timestamp measurements split by polarity channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSpikeTensor {
    pub width: u16,
    pub height: u16,
    pub bins: usize,
    /// Row-major `[y][x][bin][channel]`; channel 0 = +1, channel 1 = -1.
    pub data: Vec<f64>,
}

impl EventSpikeTensor {
    /// The model-input view: `H x W x 2B`, pixel-major like the storage.
    pub fn flatten_for_model(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReprError {
    #[error("representation builders need a non-empty stream")]
    EmptyStream,
    #[error("bin count must be at least 1, got {0}")]
    InvalidBinCount(usize),
}

/// Accumulates the first `min(count_threshold, len)` events (in time order)
/// as signed counts per pixel, then min-max normalizes to [0, 1]. A constant
/// raw image maps to all zeros.
pub fn build_stack_image(
    stream: &EventStream,
    count_threshold: usize,
) -> Result<StackImage, ReprError> {
    if stream.is_empty() {
        return Err(ReprError::EmptyStream);
    }
    let count_used = count_threshold.min(stream.len());
    let w = stream.width as usize;
    let mut raw = vec![0.0f64; w * stream.height as usize];

    let events = stream.events();
    let sorted_prefix: Vec<_>;
    let prefix: &[_] = if events.windows(2).all(|p| p[0].t <= p[1].t) {
        &events[..count_used]
    } else {
        let mut copy = events.to_vec();
        copy.sort_by_key(|e| e.t);
        sorted_prefix = copy;
        &sorted_prefix[..count_used]
    };
    for e in prefix {
        raw[e.y as usize * w + e.x as usize] += e.p as f64;
    }

    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        for v in &mut raw {
            *v = (*v - min) / (max - min);
        }
    } else {
        raw.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(StackImage { width: stream.width, height: stream.height, count_used, data: raw })
}

/// Normalized bin position of a timestamp: `(t - t_min)/span * (bins-1)`,
/// 0 when the stream spans a single microsecond.
fn bin_position(t: i64, t_min: i64, span: i64, bins: usize) -> f64 {
    if span == 0 || bins == 1 {
        0.0
    } else {
        (t - t_min) as f64 / span as f64 * (bins - 1) as f64
    }
}

/// Spreads each event's polarity over the two temporal bins adjacent to its
/// normalized position; the two weights always sum to 1.
pub fn build_voxel_grid(stream: &EventStream, bins: usize) -> Result<VoxelGrid, ReprError> {
    if bins == 0 {
        return Err(ReprError::InvalidBinCount(0));
    }
    if stream.is_empty() {
        return Err(ReprError::EmptyStream);
    }
    let (t_min, t_max) = stream.time_bounds().expect("non-empty");
    let span = t_max - t_min;
    let w = stream.width as usize;
    let mut data = vec![0.0f64; w * stream.height as usize * bins];
    for e in stream.events() {
        let pos = bin_position(e.t, t_min, span, bins);
        let lo = pos.floor() as usize;
        let frac = pos - pos.floor();
        let base = (e.y as usize * w + e.x as usize) * bins;
        data[base + lo] += e.p as f64 * (1.0 - frac);
        if frac > 0.0 {
            data[base + lo + 1] += e.p as f64 * frac;
        }
    }
    Ok(VoxelGrid { width: stream.width, height: stream.height, bins, t_min, t_max, data })
}

/// Same temporal kernel as the voxel grid, but the accumulated measurement
/// is the normalized timestamp and polarity selects the channel instead of
/// the sign.
pub fn build_est(stream: &EventStream, bins: usize) -> Result<EventSpikeTensor, ReprError> {
    if bins == 0 {
        return Err(ReprError::InvalidBinCount(0));
    }
    if stream.is_empty() {
        return Err(ReprError::EmptyStream);
    }
    let (t_min, t_max) = stream.time_bounds().expect("non-empty");
    let span = t_max - t_min;
    let w = stream.width as usize;
    let mut data = vec![0.0f64; w * stream.height as usize * bins * 2];
    for e in stream.events() {
        let measurement = if span == 0 { 0.0 } else { (e.t - t_min) as f64 / span as f64 };
        let pos = bin_position(e.t, t_min, span, bins);
        let lo = pos.floor() as usize;
        let frac = pos - pos.floor();
        let channel = if e.p == 1 { 0 } else { 1 };
        let base = (e.y as usize * w + e.x as usize) * bins * 2;
        data[base + lo * 2 + channel] += measurement * (1.0 - frac);
        if frac > 0.0 {
            data[base + (lo + 1) * 2 + channel] += measurement * frac;
        }
    }
    Ok(EventSpikeTensor { width: stream.width, height: stream.height, bins, data })
}

/// Flat model-input vector for any representation kind. Length depends only
/// on `(kind, width, height, bins)`.
pub fn representation_vector(
    stream: &EventStream,
    kind: RepresentationKind,
    bins: usize,
    count_threshold: usize,
) -> Result<Vec<f64>, ReprError> {
    match kind {
        RepresentationKind::Stack => Ok(build_stack_image(stream, count_threshold)?.data),
        RepresentationKind::Voxel => Ok(build_voxel_grid(stream, bins)?.data),
        RepresentationKind::Est => Ok(build_est(stream, bins)?.data),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_io::Event;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stream_of(width: u16, height: u16, events: Vec<Event>) -> EventStream {
        EventStream::new(width, height, None, events)
    }

    /// Independent triangular-kernel oracle: weight of bin j for an event at
    /// normalized position pos is max(0, 1 - |pos - j|).
    fn oracle_voxel(stream: &EventStream, bins: usize) -> Vec<f64> {
        let (t_min, t_max) = stream.time_bounds().unwrap();
        let span = t_max - t_min;
        let w = stream.width as usize;
        let mut data = vec![0.0f64; w * stream.height as usize * bins];
        for (i, cell) in data.iter_mut().enumerate() {
            let bin = i % bins;
            let pix = i / bins;
            let (x, y) = (pix % w, pix / w);
            for e in stream.events() {
                if e.x as usize != x || e.y as usize != y {
                    continue;
                }
                let pos = bin_position(e.t, t_min, span, bins);
                let weight = (1.0 - (pos - bin as f64).abs()).max(0.0);
                *cell += e.p as f64 * weight;
            }
        }
        data
    }

    fn oracle_est(stream: &EventStream, bins: usize) -> Vec<f64> {
        let (t_min, t_max) = stream.time_bounds().unwrap();
        let span = t_max - t_min;
        let w = stream.width as usize;
        let mut data = vec![0.0f64; w * stream.height as usize * bins * 2];
        for (i, cell) in data.iter_mut().enumerate() {
            let channel = i % 2;
            let bin = (i / 2) % bins;
            let pix = i / (2 * bins);
            let (x, y) = (pix % w, pix / w);
            for e in stream.events() {
                let ch = if e.p == 1 { 0 } else { 1 };
                if e.x as usize != x || e.y as usize != y || ch != channel {
                    continue;
                }
                let m = if span == 0 { 0.0 } else { (e.t - t_min) as f64 / span as f64 };
                let pos = bin_position(e.t, t_min, span, bins);
                let weight = (1.0 - (pos - bin as f64).abs()).max(0.0);
                *cell += m * weight;
            }
        }
        data
    }

    fn oracle_stack(stream: &EventStream, threshold: usize) -> Vec<f64> {
        let mut events = stream.events().to_vec();
        events.sort_by_key(|e| e.t);
        let n = threshold.min(events.len());
        let w = stream.width as usize;
        let mut raw = vec![0.0f64; w * stream.height as usize];
        for e in &events[..n] {
            raw[e.y as usize * w + e.x as usize] += e.p as f64;
        }
        let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max > min {
            raw.iter_mut().for_each(|v| *v = (*v - min) / (max - min));
        } else {
            raw.iter_mut().for_each(|v| *v = 0.0);
        }
        raw
    }

    #[test]
    fn stack_places_repeated_events_at_one() {
        let s = stream_of(
            8,
            8,
            vec![
                Event { x: 2, y: 3, t: 0, p: 1 },
                Event { x: 2, y: 3, t: 1, p: 1 },
                Event { x: 2, y: 3, t: 2, p: 1 },
            ],
        );
        let img = build_stack_image(&s, 10).unwrap();
        assert_eq!(img.count_used, 3);
        for (i, &v) in img.data.iter().enumerate() {
            if i == 3 * 8 + 2 {
                assert_eq!(v, 1.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn stack_cancellation_yields_all_zero_image() {
        let s = stream_of(
            4,
            4,
            vec![Event { x: 1, y: 1, t: 0, p: 1 }, Event { x: 1, y: 1, t: 5, p: -1 }],
        );
        let img = build_stack_image(&s, 2).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stack_reports_count_used() {
        let events: Vec<Event> =
            (0..500).map(|i| Event { x: (i % 8) as u16, y: (i / 70) as u16, t: i, p: 1 }).collect();
        let s = stream_of(8, 8, events);
        assert_eq!(build_stack_image(&s, 200).unwrap().count_used, 200);
        assert_eq!(build_stack_image(&s, 900).unwrap().count_used, 500);
    }

    #[test]
    fn voxel_single_event_lands_in_bin_zero() {
        let s = stream_of(4, 4, vec![Event { x: 1, y: 2, t: 777, p: 1 }]);
        let v = build_voxel_grid(&s, 5).unwrap();
        let base = (2 * 4 + 1) * 5;
        assert_eq!(v.data[base], 1.0);
        assert_eq!(v.data.iter().map(|x| x.abs()).sum::<f64>(), 1.0);
    }

    #[test]
    fn voxel_hand_evaluated_kernel_positions() {
        // Last event of a [0, 100] window with b=5 sits exactly on bin 4.
        let s = stream_of(
            4,
            4,
            vec![Event { x: 0, y: 0, t: 0, p: 1 }, Event { x: 1, y: 0, t: 100, p: 1 }],
        );
        let v = build_voxel_grid(&s, 5).unwrap();
        assert_eq!(v.data[1 * 5 + 4], 1.0);
        assert_eq!(v.data[1 * 5 + 3], 0.0);

        // t=50 of [0, 100] with b=3: position 1.0, all weight in bin 1.
        // t=25: position 0.5, half in bin 0 and half in bin 1.
        let s = stream_of(
            4,
            4,
            vec![
                Event { x: 0, y: 0, t: 0, p: 1 },
                Event { x: 1, y: 0, t: 50, p: 1 },
                Event { x: 2, y: 0, t: 25, p: 1 },
                Event { x: 0, y: 0, t: 100, p: 1 },
            ],
        );
        let v = build_voxel_grid(&s, 3).unwrap();
        assert_eq!(v.data[1 * 3 + 1], 1.0);
        assert_eq!(v.data[2 * 3], 0.5);
        assert_eq!(v.data[2 * 3 + 1], 0.5);
        assert_eq!(v.t_min, 0);
        assert_eq!(v.t_max, 100);
    }

    #[test]
    fn est_single_event_is_structurally_valid_but_zero() {
        let s = stream_of(4, 4, vec![Event { x: 3, y: 0, t: 12, p: 1 }]);
        let e = build_est(&s, 4).unwrap();
        assert!(e.data.iter().all(|&v| v == 0.0));
        assert_eq!(e.flatten_for_model().len(), 4 * 4 * 8);
    }

    #[test]
    fn est_second_event_contributes_full_measurement() {
        let s = stream_of(
            4,
            4,
            vec![Event { x: 0, y: 0, t: 0, p: 1 }, Event { x: 1, y: 0, t: 100, p: 1 }],
        );
        let e = build_est(&s, 2).unwrap();
        // pixel (1,0), bin 1, channel 0 holds measurement 1.0
        assert_eq!(e.data[(1) * 4 + 1 * 2], 1.0);
        let nonzero: Vec<_> = e.data.iter().filter(|&&v| v != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
    }

    #[test]
    fn est_routes_negative_polarity_to_channel_one() {
        // Negative event at t=25 of a [0,100] window, b=2: measurement 0.25
        // at bin position 0.25, split 0.75/0.25 between bins 0 and 1.
        let s = stream_of(
            4,
            4,
            vec![
                Event { x: 0, y: 0, t: 0, p: 1 },
                Event { x: 2, y: 1, t: 25, p: -1 },
                Event { x: 3, y: 3, t: 100, p: 1 },
            ],
        );
        let e = build_est(&s, 2).unwrap();
        let base = (1 * 4 + 2) * 2 * 2;
        assert_eq!(e.data[base + 0 * 2 + 1], 0.25 * 0.75);
        assert_eq!(e.data[base + 1 * 2 + 1], 0.25 * 0.25);
        assert_eq!(e.data[base + 0 * 2], 0.0);
        assert_eq!(e.data[base + 1 * 2], 0.0);
    }

    #[test]
    fn vector_lengths_match_kind() {
        let s = stream_of(16, 16, vec![Event { x: 0, y: 0, t: 0, p: 1 }]);
        let len = |k| representation_vector(&s, k, 4, 128).unwrap().len();
        assert_eq!(len(RepresentationKind::Stack), 256);
        assert_eq!(len(RepresentationKind::Voxel), 1024);
        assert_eq!(len(RepresentationKind::Est), 2048);
    }

    #[test]
    fn empty_and_zero_bin_inputs_are_rejected() {
        let empty = stream_of(4, 4, vec![]);
        assert_eq!(build_stack_image(&empty, 5), Err(ReprError::EmptyStream));
        assert_eq!(build_voxel_grid(&empty, 3), Err(ReprError::EmptyStream));
        assert_eq!(build_est(&empty, 3), Err(ReprError::EmptyStream));
        let s = stream_of(4, 4, vec![Event { x: 0, y: 0, t: 0, p: 1 }]);
        assert_eq!(build_voxel_grid(&s, 0), Err(ReprError::InvalidBinCount(0)));
        assert_eq!(build_est(&s, 0), Err(ReprError::InvalidBinCount(0)));
    }

    #[test]
    fn unsorted_stream_matches_sorted_stream() {
        let unsorted = stream_of(
            4,
            4,
            vec![
                Event { x: 1, y: 1, t: 90, p: 1 },
                Event { x: 0, y: 0, t: 0, p: 1 },
                Event { x: 2, y: 2, t: 45, p: -1 },
            ],
        );
        let mut sorted_events = unsorted.events().to_vec();
        sorted_events.sort_by_key(|e| e.t);
        let sorted = stream_of(4, 4, sorted_events);
        assert_eq!(build_voxel_grid(&unsorted, 3).unwrap(), build_voxel_grid(&sorted, 3).unwrap());
        assert_eq!(build_est(&unsorted, 3).unwrap(), build_est(&sorted, 3).unwrap());
        assert_eq!(
            build_stack_image(&unsorted, 2).unwrap().data,
            build_stack_image(&sorted, 2).unwrap().data
        );
    }

    prop_compose! {
        fn arb_nonempty_stream()(width in 2u16..12, height in 2u16..12)
            (events in proptest::collection::vec(
                (0..width, 0..height, 0i64..100_000, prop_oneof![Just(1i8), Just(-1i8)]), 1..60),
             width in Just(width), height in Just(height))
            -> EventStream
        {
            let mut events: Vec<Event> = events.into_iter()
                .map(|(x, y, t, p)| Event { x, y, t, p }).collect();
            events.sort_by_key(|e| e.t);
            EventStream::new(width, height, None, events)
        }
    }

    proptest! {
        #[test]
        fn voxel_matches_oracle(stream in arb_nonempty_stream(), bins in 1usize..6) {
            let v = build_voxel_grid(&stream, bins).unwrap();
            let o = oracle_voxel(&stream, bins);
            for (a, b) in v.data.iter().zip(&o) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn est_matches_oracle(stream in arb_nonempty_stream(), bins in 1usize..6) {
            let e = build_est(&stream, bins).unwrap();
            let o = oracle_est(&stream, bins);
            for (a, b) in e.data.iter().zip(&o) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn stack_matches_oracle(stream in arb_nonempty_stream(), threshold in 1usize..80) {
            let s = build_stack_image(&stream, threshold).unwrap();
            prop_assert_eq!(&s.data, &oracle_stack(&stream, threshold));
            prop_assert!(s.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn voxel_cell_sum_is_signed_event_count(stream in arb_nonempty_stream(), bins in 1usize..6) {
            let v = build_voxel_grid(&stream, bins).unwrap();
            let pos = stream.events().iter().filter(|e| e.p == 1).count() as f64;
            let neg = stream.len() as f64 - pos;
            let sum: f64 = v.data.iter().sum();
            prop_assert!((sum - (pos - neg)).abs() <= 1e-12);
        }

        #[test]
        fn positive_only_voxel_mass_equals_event_count(stream in arb_nonempty_stream(), bins in 1usize..6) {
            // With all polarities +1 every kernel weight is positive, so total
            // mass counts each event's partition-of-unity weights once.
            let all_pos: Vec<Event> = stream.events().iter()
                .map(|e| Event { p: 1, ..*e }).collect();
            let s = EventStream::new(stream.width, stream.height, None, all_pos);
            let v = build_voxel_grid(&s, bins).unwrap();
            let sum: f64 = v.data.iter().sum();
            prop_assert!((sum - s.len() as f64).abs() <= 1e-12);
        }

        #[test]
        fn time_shift_leaves_voxel_and_est_unchanged(stream in arb_nonempty_stream(), bins in 1usize..6, shift in 0i64..1_000_000) {
            let shifted_events: Vec<Event> = stream.events().iter()
                .map(|e| Event { t: e.t + shift, ..*e }).collect();
            let shifted = EventStream::new(stream.width, stream.height, None, shifted_events);
            prop_assert_eq!(build_voxel_grid(&stream, bins).unwrap().data,
                            build_voxel_grid(&shifted, bins).unwrap().data);
            prop_assert_eq!(build_est(&stream, bins).unwrap().data,
                            build_est(&shifted, bins).unwrap().data);
        }

        #[test]
        fn stack_ignores_order_inside_prefix(stream in arb_nonempty_stream(), threshold in 1usize..80, seed in 0u64..64) {
            // Distinct timestamps keep "first threshold events" unambiguous
            // under the builder's defensive sort.
            let mut events = stream.events().to_vec();
            for i in 1..events.len() {
                if events[i].t <= events[i - 1].t {
                    events[i].t = events[i - 1].t + 1;
                }
            }
            let stream = EventStream::new(stream.width, stream.height, None, events.clone());
            let n = threshold.min(events.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            events[..n].shuffle(&mut rng);
            let shuffled = EventStream::new(stream.width, stream.height, None, events);
            // Same multiset within the prefix, so the image is identical.
            let a = build_stack_image(&stream, threshold).unwrap();
            let b = build_stack_image(&shuffled, threshold).unwrap();
            prop_assert_eq!(a.data, b.data);
        }
    }
}
