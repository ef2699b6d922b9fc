use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Event, EventIoError, EventStream, Split};

/// Stream duration of every synthetic recording, in µs.
const DURATION_US: i64 = 10_000;
/// Half-width of the swept bar in pixels.
const BAR_HALF_WIDTH: f64 = 0.75;
/// Fraction of events that are uniform noise.
const NOISE_RATE: f64 = 0.05;
/// Full frame crossings per recording. Several crossings keep every
/// temporal slice of a stream spatially representative of the whole, so
/// windowed surrogates resemble the rendered source frames instead of a
/// bar stuck at one edge.
const SWEEP_CROSSINGS: usize = 3;

/// One generated stream with its rendered source-modality frame.
#[derive(Debug, Clone)]
pub struct SynthStream {
    pub class: usize,
    pub index_in_class: usize,
    pub split: Split,
    pub stream: EventStream,
    /// Grayscale bar image at mid-sweep, row-major `[y][x]`, values in [0,1].
    pub frame: Vec<f64>,
}

impl SynthStream {
    /// Stable file stem, e.g. `train-c2-0041`.
    pub fn stem(&self) -> String {
        let split = match self.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        format!("{split}-c{}-{:04}", self.class, self.index_in_class)
    }
}

/// In-memory synthetic dataset: labeled event streams plus source frames.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub width: u16,
    pub height: u16,
    pub classes: Vec<String>,
    pub items: Vec<SynthStream>,
}

impl SynthDataset {
    pub fn split_items(&self, split: Split) -> impl Iterator<Item = &SynthStream> {
        self.items.iter().filter(move |s| s.split == split)
    }
}

/// Generates `k` classes of bar-sweep streams. Class `c` is a bright bar at
/// angle `c * 180 / k` degrees sweeping across the frame along its normal,
/// crossing it three times per recording; the leading edge emits positive
/// events, the trailing edge negative ones, and 5% of events are uniform
/// noise. Each class gets `streams_per_class` train streams and a quarter
/// as many (at least one) test streams. Pure in its arguments: the same
/// call always returns the same dataset.
pub fn synthesize_dataset(
    seed: u64,
    k: usize,
    streams_per_class: usize,
    width: u16,
    height: u16,
    events_per_stream: usize,
) -> Result<SynthDataset, EventIoError> {
    if k < 2 {
        return Err(EventIoError::InvalidConfig(format!("need at least 2 classes, got {k}")));
    }
    if streams_per_class == 0 {
        return Err(EventIoError::InvalidConfig("streams_per_class must be positive".into()));
    }
    if events_per_stream < 100 {
        return Err(EventIoError::InvalidConfig(format!(
            "events_per_stream must be at least 100, got {events_per_stream}"
        )));
    }
    if width < 4 || height < 4 {
        return Err(EventIoError::InvalidConfig(format!(
            "sensor {width}x{height} too small for the bar geometry"
        )));
    }

    let classes: Vec<String> =
        (0..k).map(|c| format!("bar-{:03}deg", c * 180 / k)).collect();
    let test_per_class = (streams_per_class / 4).max(1);

    let mut items = Vec::new();
    for split in [Split::Train, Split::Test] {
        let count = match split {
            Split::Train => streams_per_class,
            Split::Test => test_per_class,
        };
        for class in 0..k {
            for index in 0..count {
                let rng_seed = stream_seed(seed, class, index, split);
                items.push(generate_stream(
                    rng_seed,
                    class,
                    index,
                    split,
                    k,
                    width,
                    height,
                    events_per_stream,
                ));
            }
        }
    }
    Ok(SynthDataset { width, height, classes, items })
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_seed(seed: u64, class: usize, index: usize, split: Split) -> u64 {
    let split_bit = match split {
        Split::Train => 0u64,
        Split::Test => 1u64 << 63,
    };
    splitmix(splitmix(seed) ^ splitmix(class as u64 ^ split_bit) ^ splitmix(0xda7a ^ index as u64))
}

#[allow(clippy::too_many_arguments)]
fn generate_stream(
    rng_seed: u64,
    class: usize,
    index_in_class: usize,
    split: Split,
    k: usize,
    width: u16,
    height: u16,
    events_per_stream: usize,
) -> SynthStream {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (w, h) = (width as f64, height as f64);
    // Class = bar orientation. The bar points along (cos t, sin t); it
    // sweeps along the normal.
    let theta = class as f64 * std::f64::consts::PI / k as f64;
    let (nx, ny) = (-theta.sin(), theta.cos());
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let reach = (cx * cx + cy * cy).sqrt() + 1.0;
    let phase: f64 = rng.gen_range(-1.0..1.0);

    let noise_count = (events_per_stream as f64 * NOISE_RATE).round() as usize;
    let signal_count = events_per_stream - noise_count;

    // Candidate (time base, x, y, polarity) tuples along the sweep, ordered
    // by step then scan order. Step count aims the candidate total near the
    // signal budget so subsampling stays spread over the whole sweep.
    let mean_edge = (w + h) / 2.0;
    let steps = ((signal_count as f64 / (2.0 * mean_edge)).ceil() as usize).clamp(8, 96);
    let dt = (DURATION_US as f64 / steps as f64).floor() as i64;
    let mut candidates: Vec<(i64, u16, u16, i8)> = Vec::new();
    for s in 0..steps {
        let progress = (s as f64 + 0.5) / steps as f64 * SWEEP_CROSSINGS as f64;
        let offset = -reach + 2.0 * reach * progress.fract() + phase;
        let t_base = s as i64 * dt;
        for y in 0..height {
            for x in 0..width {
                let d = (x as f64 - cx) * nx + (y as f64 - cy) * ny - offset;
                if (d - BAR_HALF_WIDTH).abs() <= 0.5 {
                    candidates.push((t_base, x, y, 1));
                } else if (d + BAR_HALF_WIDTH).abs() <= 0.5 {
                    candidates.push((t_base, x, y, -1));
                }
            }
        }
    }

    let mut events: Vec<Event> = Vec::with_capacity(events_per_stream);
    if candidates.len() >= signal_count {
        for j in 0..signal_count {
            let (t_base, x, y, p) = candidates[j * candidates.len() / signal_count];
            let t = t_base + rng.gen_range(0..dt.max(1));
            events.push(Event { x, y, t, p });
        }
    } else {
        for j in 0..signal_count {
            let (t_base, x, y, p) = candidates[j % candidates.len()];
            let t = t_base + rng.gen_range(0..dt.max(1));
            events.push(Event { x, y, t, p });
        }
    }
    for _ in 0..noise_count {
        events.push(Event {
            x: rng.gen_range(0..width),
            y: rng.gen_range(0..height),
            t: rng.gen_range(0..DURATION_US),
            p: if rng.gen::<bool>() { 1 } else { -1 },
        });
    }
    events.sort_by_key(|e| e.t);

    // Source-modality frame: the same bar rendered at mid-sweep with a soft
    // one-pixel edge.
    let mut frame = vec![0.0f64; width as usize * height as usize];
    for y in 0..height {
        for x in 0..width {
            let d = (x as f64 - cx) * nx + (y as f64 - cy) * ny - phase;
            let v = 1.0 - (d.abs() - BAR_HALF_WIDTH).max(0.0);
            frame[y as usize * width as usize + x as usize] = v.clamp(0.0, 1.0);
        }
    }

    SynthStream {
        class,
        index_in_class,
        split,
        stream: EventStream::new(width, height, Some(class), events),
        frame,
    }
}
