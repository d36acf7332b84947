//! CSV sidecars. Hypnograms: `onset_sec,duration_sec,label` with one row
//! per epoch and labels `W,N1,N2,N3,R,EXC`. Events:
//! `onset_sec,duration_sec,kind`.

use std::path::Path;

use super::{EventInterval, EventKind, Hypnogram, SignalError};
use crate::stage::{label_code, parse_label_code};

fn sidecar_err(path: &Path, message: impl Into<String>) -> SignalError {
    SignalError::Sidecar {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> SignalError {
    sidecar_err(path, e.to_string())
}

/// Shortest decimal that parses back to `v`.
pub(crate) fn fmt_seconds(v: f64) -> String {
    format!("{v}")
}

pub fn write_hypnogram(h: &Hypnogram, path: &Path) -> Result<(), SignalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["onset_sec", "duration_sec", "label"]).map_err(|e| csv_err(path, e))?;
    for (i, l) in h.labels.iter().enumerate() {
        w.write_record([
            fmt_seconds(i as f64 * h.epoch_seconds),
            fmt_seconds(h.epoch_seconds),
            label_code(*l).to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SignalError::io(path, e))
}

fn header_check(path: &Path, r: &mut csv::Reader<std::fs::File>, expected: [&str; 3]) -> Result<(), SignalError> {
    let headers = r.headers().map_err(|e| csv_err(path, e))?;
    if headers.iter().ne(expected) {
        return Err(sidecar_err(path, format!("expected header {}, found {:?}", expected.join(","), headers)));
    }
    Ok(())
}

fn number(path: &Path, line: u64, field: &str, raw: &str) -> Result<f64, SignalError> {
    raw.trim()
        .parse()
        .map_err(|_| sidecar_err(path, format!("line {line}: `{field}` is not a number: {raw:?}")))
}

/// Reads a hypnogram sidecar. Rows must tile the timeline contiguously;
/// a row spanning several epochs expands to that many labels.
pub fn read_hypnogram(path: &Path) -> Result<Hypnogram, SignalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    header_check(path, &mut r, ["onset_sec", "duration_sec", "label"])?;
    let epoch = 30.0;
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let onset = number(path, line, "onset_sec", &rec[0])?;
        let duration = number(path, line, "duration_sec", &rec[1])?;
        let label = parse_label_code(rec[2].trim()).map_err(|m| sidecar_err(path, format!("line {line}: {m}")))?;
        let expected = labels.len() as f64 * epoch;
        if (onset - expected).abs() > 1e-6 {
            return Err(sidecar_err(path, format!("line {line}: onset {onset} s, expected {expected} s")));
        }
        let n = duration / epoch;
        if n < 0.5 || (n - n.round()).abs() > 1e-6 {
            return Err(sidecar_err(path, format!("line {line}: duration {duration} s is not a whole number of epochs")));
        }
        labels.extend(std::iter::repeat_n(label, n.round() as usize));
    }
    if labels.is_empty() {
        return Err(sidecar_err(path, "no epochs"));
    }
    Ok(Hypnogram::new(labels))
}

pub fn write_events(events: &[EventInterval], path: &Path) -> Result<(), SignalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["onset_sec", "duration_sec", "kind"]).map_err(|e| csv_err(path, e))?;
    for e in events {
        w.write_record([fmt_seconds(e.onset), fmt_seconds(e.duration), e.kind.as_str().to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SignalError::io(path, e))
}

pub fn read_events(path: &Path) -> Result<Vec<EventInterval>, SignalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    header_check(path, &mut r, ["onset_sec", "duration_sec", "kind"])?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let onset = number(path, line, "onset_sec", &rec[0])?;
        let duration = number(path, line, "duration_sec", &rec[1])?;
        let kind = match rec[2].trim() {
            "arousal" => EventKind::Arousal,
            "candidate" => EventKind::Candidate,
            other => return Err(sidecar_err(path, format!("line {line}: unknown event kind `{other}`"))),
        };
        out.push(EventInterval::new(onset, duration, kind).map_err(|e| sidecar_err(path, format!("line {line}: {e}")))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage::Stage;

    #[test]
    fn hypnogram_round_trip_and_run_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let h = Hypnogram::new(vec![Some(Stage::Wake), None, Some(Stage::Rem)]);
        write_hypnogram(&h, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "onset_sec,duration_sec,label\n0,30,W\n30,30,EXC\n60,30,R\n");
        assert_eq!(read_hypnogram(&p).unwrap(), h);

        std::fs::write(&p, "onset_sec,duration_sec,label\n0,90,N2\n90,30,N3\n").unwrap();
        assert_eq!(read_hypnogram(&p).unwrap().labels, vec![Some(Stage::N2); 3].into_iter().chain([Some(Stage::N3)]).collect::<Vec<_>>());

        std::fs::write(&p, "onset_sec,duration_sec,label\n0,30,N2\n60,30,N3\n").unwrap();
        assert!(read_hypnogram(&p).is_err());
        std::fs::write(&p, "onset,duration,label\n0,30,N2\n").unwrap();
        assert!(read_hypnogram(&p).is_err());
        std::fs::write(&p, "onset_sec,duration_sec,label\n0,30,N4\n").unwrap();
        assert!(read_hypnogram(&p).is_err());
    }

    #[test]
    fn events_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let ev = vec![
            EventInterval::new(12.25, 3.5, EventKind::Arousal).unwrap(),
            EventInterval::new(100.0, 15.0, EventKind::Candidate).unwrap(),
        ];
        write_events(&ev, &p).unwrap();
        assert_eq!(read_events(&p).unwrap(), ev);
        write_events(&[], &p).unwrap();
        assert!(read_events(&p).unwrap().is_empty());
        std::fs::write(&p, "onset_sec,duration_sec,kind\n1,0,arousal\n").unwrap();
        assert!(read_events(&p).is_err());
    }
}
