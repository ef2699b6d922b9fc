use super::{monotonicity_warnings, Event, EventIoError, EventStream, ParseWarning};

/// Parses the portable text format: header `width,height[,label]`, then one
/// `x,y,t,p` line per event with p in {1, -1}. UTF-8, LF line endings.
pub fn parse_portable_events(
    text: &str,
) -> Result<(EventStream, Vec<ParseWarning>), EventIoError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(EventIoError::MissingHeader)?;
    let fields: Vec<&str> = header.split(',').collect();
    let (width, height, label) = match fields.as_slice() {
        [w, h] => (parse_u16(w), parse_u16(h), None),
        [w, h, l] => (parse_u16(w), parse_u16(h), Some(l.trim().parse::<usize>())),
        _ => return Err(EventIoError::MissingHeader),
    };
    let (width, height) = match (width, height) {
        (Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
        _ => return Err(EventIoError::MissingHeader),
    };
    let label = match label {
        None => None,
        Some(Ok(l)) => Some(l),
        Some(Err(_)) => return Err(EventIoError::MissingHeader),
    };

    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            return Err(EventIoError::MalformedLine(lineno));
        }
        let mut parts = line.split(',');
        let (x, y, t, p) = match (parts.next(), parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(x), Some(y), Some(t), Some(p), None) => (x, y, t, p),
            _ => return Err(EventIoError::MalformedLine(lineno)),
        };
        let x = parse_u16(x).ok_or(EventIoError::MalformedLine(lineno))?;
        let y = parse_u16(y).ok_or(EventIoError::MalformedLine(lineno))?;
        let t: i64 = t.trim().parse().map_err(|_| EventIoError::MalformedLine(lineno))?;
        let p: i8 = match p.trim() {
            "1" => 1,
            "-1" => -1,
            _ => return Err(EventIoError::MalformedLine(lineno)),
        };
        if x >= width || y >= height {
            return Err(EventIoError::CoordinateOutOfBounds { index: i, x, y, width, height });
        }
        events.push(Event { x, y, t, p });
    }
    let warnings = monotonicity_warnings(&events);
    Ok((EventStream::new(width, height, label, events), warnings))
}

fn parse_u16(s: &str) -> Option<u16> {
    s.trim().parse().ok()
}

/// Inverse of [`parse_portable_events`]; the round trip is exact.
pub fn write_portable_events(stream: &EventStream) -> String {
    let mut out = String::new();
    match stream.label {
        Some(l) => out.push_str(&format!("{},{},{}\n", stream.width, stream.height, l)),
        None => out.push_str(&format!("{},{}\n", stream.width, stream.height)),
    }
    for e in stream.events() {
        out.push_str(&format!("{},{},{},{}\n", e.x, e.y, e.t, e.p));
    }
    out
}
