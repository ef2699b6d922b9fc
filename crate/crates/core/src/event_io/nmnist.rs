use super::{monotonicity_warnings, Event, EventIoError, EventStream, ParseWarning};

/// Parses the 5-byte AER records used by the N-MNIST release: byte 0 = x,
/// byte 1 = y, bit 7 of byte 2 = polarity (1 means +1), and the remaining
/// 23 bits (byte2 bits 6..0, byte3, byte4, big-endian) = timestamp in µs.
/// Events are kept in file order; decreasing timestamps only warn.
pub fn parse_nmnist_binary(
    bytes: &[u8],
    width: u16,
    height: u16,
) -> Result<(EventStream, Vec<ParseWarning>), EventIoError> {
    if bytes.len() % 5 != 0 {
        return Err(EventIoError::TruncatedRecord { len: bytes.len() });
    }
    let mut events = Vec::with_capacity(bytes.len() / 5);
    for (index, rec) in bytes.chunks_exact(5).enumerate() {
        let x = rec[0] as u16;
        let y = rec[1] as u16;
        if x >= width || y >= height {
            return Err(EventIoError::CoordinateOutOfBounds { index, x, y, width, height });
        }
        let p = if rec[2] & 0x80 != 0 { 1 } else { -1 };
        let t = (((rec[2] & 0x7f) as i64) << 16) | ((rec[3] as i64) << 8) | rec[4] as i64;
        events.push(Event { x, y, t, p });
    }
    let warnings = monotonicity_warnings(&events);
    Ok((EventStream::new(width, height, None, events), warnings))
}
