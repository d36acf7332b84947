//! European Data Format: a 256-byte fixed header, 256 bytes of signal
//! header per signal (stored field-major), then data records of 16-bit
//! little-endian samples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Channel, Modality, Recording, SignalError};

pub const DIGITAL_MIN: i32 = -32768;
pub const DIGITAL_MAX: i32 = 32767;

/// Signal-label prefixes that identify a modality. Matching is
/// case-insensitive on the trimmed label; the first matching row wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityTable {
    pub prefixes: Vec<(String, Modality)>,
}

impl Default for ModalityTable {
    fn default() -> Self {
        Self {
            prefixes: vec![("EEG".into(), Modality::Eeg), ("EOG".into(), Modality::Eog)],
        }
    }
}

impl ModalityTable {
    pub fn modality(&self, label: &str) -> Option<Modality> {
        let l = label.trim().to_ascii_uppercase();
        self.prefixes
            .iter()
            .find(|(p, _)| l.starts_with(&p.to_ascii_uppercase()))
            .map(|(_, m)| *m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfOptions {
    /// Data record length in seconds; every channel rate times this must be
    /// a whole number of samples.
    pub record_seconds: f64,
    /// Declared physical range per channel. `None` derives one from the data.
    pub physical_range: Option<Vec<(f64, f64)>>,
}

impl Default for EdfOptions {
    fn default() -> Self {
        Self {
            record_seconds: 1.0,
            physical_range: None,
        }
    }
}

const FIXED: [(&str, usize); 10] = [
    ("version", 8),
    ("patient", 80),
    ("recording", 80),
    ("startdate", 8),
    ("starttime", 8),
    ("header bytes", 8),
    ("reserved", 44),
    ("data records", 8),
    ("record duration", 8),
    ("signal count", 4),
];

const SIGNAL_FIELDS: [(&str, usize); 10] = [
    ("label", 16),
    ("transducer", 80),
    ("physical dimension", 8),
    ("physical minimum", 8),
    ("physical maximum", 8),
    ("digital minimum", 8),
    ("digital maximum", 8),
    ("prefiltering", 80),
    ("samples per record", 8),
    ("reserved", 32),
];

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn field(&mut self, name: &str, width: usize) -> Result<(usize, &'a str), SignalError> {
        let start = self.pos;
        let end = start + width;
        if end > self.bytes.len() {
            return Err(SignalError::Parse {
                offset: start,
                message: format!("file truncated inside header field `{name}` ({} bytes total)", self.bytes.len()),
            });
        }
        self.pos = end;
        let s = std::str::from_utf8(&self.bytes[start..end]).map_err(|_| SignalError::Parse {
            offset: start,
            message: format!("header field `{name}` is not ASCII"),
        })?;
        Ok((start, s))
    }
}

fn number<T: std::str::FromStr>(offset: usize, name: &str, raw: &str) -> Result<T, SignalError> {
    raw.trim().parse().map_err(|_| SignalError::Parse {
        offset,
        message: format!("header field `{name}` is not numeric: {:?}", raw.trim()),
    })
}

/// Reads an EDF file. Signals whose label matches no modality prefix are
/// skipped and reported in the returned warning list.
pub fn read_edf(path: &Path, table: &ModalityTable) -> Result<(Recording, Vec<String>), SignalError> {
    let bytes = std::fs::read(path).map_err(|e| SignalError::io(path, e))?;
    let fallback_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_edf(&bytes, table, &fallback_id)
}

pub(crate) fn parse_edf(
    bytes: &[u8],
    table: &ModalityTable,
    fallback_id: &str,
) -> Result<(Recording, Vec<String>), SignalError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let mut fixed = Vec::with_capacity(FIXED.len());
    for (name, width) in FIXED {
        fixed.push(cur.field(name, width)?);
    }
    let header_bytes: usize = number(fixed[5].0, "header bytes", fixed[5].1)?;
    let records: i64 = number(fixed[7].0, "data records", fixed[7].1)?;
    let duration: f64 = number(fixed[8].0, "record duration", fixed[8].1)?;
    let ns: usize = number(fixed[9].0, "signal count", fixed[9].1)?;
    if records < 0 {
        return Err(SignalError::Parse {
            offset: fixed[7].0,
            message: "unknown number of data records (-1) is not supported".into(),
        });
    }
    if !(duration > 0.0) {
        return Err(SignalError::Parse {
            offset: fixed[8].0,
            message: format!("record duration must be positive, got {duration}"),
        });
    }
    if header_bytes != 256 * (ns + 1) {
        return Err(SignalError::Parse {
            offset: fixed[5].0,
            message: format!("header size {header_bytes} does not match {ns} signals"),
        });
    }
    // Field-major: all labels, then all transducers, and so on.
    let mut fields: Vec<Vec<(usize, &str)>> = vec![Vec::with_capacity(SIGNAL_FIELDS.len()); ns];
    for (name, width) in SIGNAL_FIELDS {
        for f in fields.iter_mut() {
            f.push(cur.field(name, width)?);
        }
    }
    struct Sig {
        label: String,
        pmin: f64,
        pmax: f64,
        dmin: i32,
        dmax: i32,
        spr: usize,
    }
    let mut sigs = Vec::with_capacity(ns);
    for f in &fields {
        let dmin: i32 = number(f[5].0, "digital minimum", f[5].1)?;
        let dmax: i32 = number(f[6].0, "digital maximum", f[6].1)?;
        if dmin == dmax {
            return Err(SignalError::Parse {
                offset: f[5].0,
                message: format!("digital minimum equals digital maximum ({dmin})"),
            });
        }
        sigs.push(Sig {
            label: f[0].1.trim().to_string(),
            pmin: number(f[3].0, "physical minimum", f[3].1)?,
            pmax: number(f[4].0, "physical maximum", f[4].1)?,
            dmin,
            dmax,
            spr: number(f[8].0, "samples per record", f[8].1)?,
        });
    }
    let record_len: usize = sigs.iter().map(|s| s.spr * 2).sum();
    let needed = header_bytes + record_len * records as usize;
    if bytes.len() < needed {
        return Err(SignalError::Parse {
            offset: bytes.len(),
            message: format!("file truncated: data records need {needed} bytes, file has {}", bytes.len()),
        });
    }
    let mut samples: Vec<Vec<f64>> = sigs.iter().map(|s| Vec::with_capacity(s.spr * records as usize)).collect();
    let mut pos = header_bytes;
    for _ in 0..records {
        for (s, out) in sigs.iter().zip(samples.iter_mut()) {
            let scale = (s.pmax - s.pmin) / (s.dmax - s.dmin) as f64;
            for k in 0..s.spr {
                let d = i16::from_le_bytes([bytes[pos + 2 * k], bytes[pos + 2 * k + 1]]) as i32;
                out.push((d - s.dmin) as f64 * scale + s.pmin);
            }
            pos += 2 * s.spr;
        }
    }
    let mut channels = Vec::new();
    let mut warnings = Vec::new();
    for (s, data) in sigs.into_iter().zip(samples) {
        match table.modality(&s.label) {
            Some(modality) => channels.push(Channel {
                name: s.label,
                modality,
                rate: s.spr as f64 / duration,
                samples: data,
            }),
            None => warnings.push(format!("skipped signal `{}`: no EEG/EOG label prefix", s.label)),
        }
    }
    let id = fixed[2].1.trim();
    let id = if id.is_empty() { fallback_id } else { id };
    Ok((
        Recording {
            id: id.to_string(),
            channels,
        },
        warnings,
    ))
}

fn pad(s: &str, width: usize) -> Result<String, SignalError> {
    if s.len() > width || !s.is_ascii() {
        return Err(SignalError::Config(format!("`{s}` does not fit an EDF field of {width} ASCII bytes")));
    }
    Ok(format!("{s:<width$}"))
}

/// Shortest decimal of at most 8 characters that is `<= v` (`down`) or
/// `>= v`, together with its parsed value.
fn edf_number(v: f64, down: bool) -> Result<(String, f64), SignalError> {
    for decimals in (0..=7).rev() {
        let scale = 10f64.powi(decimals);
        let r = if down { (v * scale).floor() / scale } else { (v * scale).ceil() / scale };
        let s = format!("{r:.prec$}", prec = decimals as usize);
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        let s = if s == "-0" { "0".to_string() } else { s };
        if s.len() <= 8 {
            let parsed: f64 = s.parse().expect("formatted number parses");
            if (down && parsed <= v) || (!down && parsed >= v) {
                return Ok((s, parsed));
            }
        }
    }
    Err(SignalError::Range(format!("{v} cannot be written as an 8-character EDF number")))
}

/// Physical range for a channel: the data range rounded outward to EDF
/// numbers. Constant channels get a range starting exactly at the value
/// when it is representable, so they survive a round trip unchanged.
fn auto_range(samples: &[f64]) -> Result<((String, f64), (String, f64)), SignalError> {
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo_s = edf_number(lo, true)?;
    let mut hi_s = edf_number(hi, false)?;
    if hi_s.1 <= lo_s.1 {
        hi_s = edf_number(lo_s.1 + 1.0, false)?;
    }
    Ok((lo_s, hi_s))
}

/// Writes `recording` as EDF with samples quantized to 16 bits over each
/// channel's physical range.
pub fn write_edf(recording: &Recording, path: &Path, opts: &EdfOptions) -> Result<(), SignalError> {
    let bytes = encode_edf(recording, opts)?;
    std::fs::write(path, bytes).map_err(|e| SignalError::io(path, e))
}

pub(crate) fn encode_edf(recording: &Recording, opts: &EdfOptions) -> Result<Vec<u8>, SignalError> {
    let ns = recording.channels.len();
    if ns == 0 {
        return Err(SignalError::Config("cannot write a recording without channels".into()));
    }
    if let Some(r) = &opts.physical_range {
        if r.len() != ns {
            return Err(SignalError::Config(format!("{} physical ranges for {ns} channels", r.len())));
        }
    }
    let (dur_s, dur) = edf_number(opts.record_seconds, false)?;
    if dur != opts.record_seconds || dur <= 0.0 {
        return Err(SignalError::Config(format!("record length {} s is not representable", opts.record_seconds)));
    }
    let mut spr = Vec::with_capacity(ns);
    let mut records = None;
    for ch in &recording.channels {
        let n = ch.rate * dur;
        if n.fract() != 0.0 || n < 1.0 {
            return Err(SignalError::Config(format!(
                "channel {}: {} Hz gives a fractional {n} samples per {dur} s record",
                ch.name, ch.rate
            )));
        }
        let n = n as usize;
        if ch.samples.len() % n != 0 {
            return Err(SignalError::Config(format!(
                "channel {}: {} samples is not a whole number of records",
                ch.name,
                ch.samples.len()
            )));
        }
        let r = ch.samples.len() / n;
        if *records.get_or_insert(r) != r {
            return Err(SignalError::Config("channels cover different durations".into()));
        }
        spr.push(n);
    }
    let records = records.unwrap_or(0);

    let mut ranges = Vec::with_capacity(ns);
    for (i, ch) in recording.channels.iter().enumerate() {
        if ch.samples.iter().any(|v| !v.is_finite()) {
            return Err(SignalError::Range(format!("channel {} holds non-finite samples", ch.name)));
        }
        let range = match &opts.physical_range {
            Some(r) => {
                let (lo, hi) = r[i];
                if !(hi > lo) {
                    return Err(SignalError::Range(format!("channel {}: empty physical range", ch.name)));
                }
                if let Some(v) = ch.samples.iter().find(|&&v| v < lo || v > hi) {
                    return Err(SignalError::Range(format!(
                        "channel {}: sample {v} outside the declared physical range [{lo}, {hi}]",
                        ch.name
                    )));
                }
                let l = edf_number(lo, true)?;
                let h = edf_number(hi, false)?;
                (l, h)
            }
            None => auto_range(&ch.samples)?,
        };
        ranges.push(range);
    }

    let mut out = Vec::with_capacity(256 * (ns + 1) + records * spr.iter().sum::<usize>() * 2);
    let fixed = [
        pad("0", 8)?,
        pad("X X X X", 80)?,
        pad(&recording.id, 80)?,
        pad("01.01.00", 8)?,
        pad("00.00.00", 8)?,
        pad(&(256 * (ns + 1)).to_string(), 8)?,
        pad("", 44)?,
        pad(&records.to_string(), 8)?,
        pad(&dur_s, 8)?,
        pad(&ns.to_string(), 4)?,
    ];
    for f in &fixed {
        out.extend_from_slice(f.as_bytes());
    }
    let column = |f: &dyn Fn(usize) -> Result<String, SignalError>, out: &mut Vec<u8>| -> Result<(), SignalError> {
        for i in 0..ns {
            out.extend_from_slice(f(i)?.as_bytes());
        }
        Ok(())
    };
    let ch = &recording.channels;
    column(&|i| pad(&ch[i].name, 16), &mut out)?;
    column(&|_| pad("", 80), &mut out)?;
    column(&|_| pad("uV", 8), &mut out)?;
    column(&|i| pad(&ranges[i].0 .0, 8), &mut out)?;
    column(&|i| pad(&ranges[i].1 .0, 8), &mut out)?;
    column(&|_| pad(&DIGITAL_MIN.to_string(), 8), &mut out)?;
    column(&|_| pad(&DIGITAL_MAX.to_string(), 8), &mut out)?;
    column(&|_| pad("", 80), &mut out)?;
    column(&|i| pad(&spr[i].to_string(), 8), &mut out)?;
    column(&|_| pad("", 32), &mut out)?;

    let span = (DIGITAL_MAX - DIGITAL_MIN) as f64;
    for r in 0..records {
        for (i, ch) in recording.channels.iter().enumerate() {
            let (lo, hi) = (ranges[i].0 .1, ranges[i].1 .1);
            let scale = span / (hi - lo);
            for &v in &ch.samples[r * spr[i]..(r + 1) * spr[i]] {
                let d = ((v - lo) * scale).round() as i64 + DIGITAL_MIN as i64;
                let d = d.clamp(DIGITAL_MIN as i64, DIGITAL_MAX as i64) as i16;
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(channels: Vec<(&str, Modality, Vec<f64>)>) -> Recording {
        Recording {
            id: "r".into(),
            channels: channels
                .into_iter()
                .map(|(n, m, s)| Channel {
                    name: n.into(),
                    modality: m,
                    rate: 4.0,
                    samples: s,
                })
                .collect(),
        }
    }

    #[test]
    fn edf_numbers_round_outward() {
        assert_eq!(edf_number(-250.0, true).unwrap().0, "-250");
        assert_eq!(edf_number(1.0 / 3.0, true).unwrap().0, "0.333333");
        assert_eq!(edf_number(1.0 / 3.0, false).unwrap().0, "0.333334");
        assert_eq!(edf_number(-1.0 / 3.0, true).unwrap().0, "-0.33334");
        assert_eq!(edf_number(123456.78, false).unwrap().0, "123456.8");
        assert!(edf_number(1e12, false).is_err());
    }

    #[test]
    fn scaling_of_digital_zero() {
        let range = vec![(-250.0, 250.0)];
        let r = rec(vec![("EEG C3", Modality::Eeg, vec![0.0; 4])]);
        let bytes = encode_edf(
            &r,
            &EdfOptions {
                physical_range: Some(range),
                ..Default::default()
            },
        )
        .unwrap();
        let (back, _) = parse_edf(&bytes, &ModalityTable::default(), "x").unwrap();
        // 0 µV quantizes to digital 0, which reads back as 500 * 32768 / 65535 - 250.
        let expected: f64 = 500.0 * 32768.0 / 65535.0 - 250.0;
        assert!((expected - 0.0038).abs() < 1e-4);
        assert!((back.channels[0].samples[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn identity_scaling_when_ranges_agree() {
        let r = rec(vec![("EEG", Modality::Eeg, vec![-32768.0, -1.0, 0.0, 32767.0])]);
        let opts = EdfOptions {
            physical_range: Some(vec![(-32768.0, 32767.0)]),
            ..Default::default()
        };
        let (back, _) = parse_edf(&encode_edf(&r, &opts).unwrap(), &ModalityTable::default(), "x").unwrap();
        assert_eq!(back.channels[0].samples, r.channels[0].samples);
    }

    #[test]
    fn out_of_range_and_empty_are_rejected() {
        let r = rec(vec![("EEG", Modality::Eeg, vec![0.0, 1.0, 2.0, 300.0])]);
        let opts = EdfOptions {
            physical_range: Some(vec![(-250.0, 250.0)]),
            ..Default::default()
        };
        assert!(matches!(encode_edf(&r, &opts), Err(SignalError::Range(_))));
        assert!(encode_edf(&rec(vec![]), &EdfOptions::default()).is_err());
    }

    #[test]
    fn constant_signal_round_trips_exactly() {
        let r = rec(vec![("EOG L", Modality::Eog, vec![12.5; 8])]);
        let (back, _) = parse_edf(&encode_edf(&r, &EdfOptions::default()).unwrap(), &ModalityTable::default(), "x")
            .unwrap();
        assert_eq!(back.channels[0].samples, vec![12.5; 8]);
    }

    #[test]
    fn malformed_headers_report_offsets() {
        let r = rec(vec![("EEG", Modality::Eeg, vec![1.0, 2.0, 3.0, 4.0])]);
        let good = encode_edf(&r, &EdfOptions::default()).unwrap();
        let t = ModalityTable::default();

        let err = parse_edf(&good[..100], &t, "x").unwrap_err();
        assert!(matches!(err, SignalError::Parse { offset: 88, .. }), "{err}");

        let err = parse_edf(&good[..good.len() - 1], &t, "x").unwrap_err();
        assert!(matches!(err, SignalError::Parse { .. }), "{err}");

        let mut bad = good.clone();
        bad[236..244].copy_from_slice(b"ten     ");
        let err = parse_edf(&bad, &t, "x").unwrap_err();
        assert!(matches!(err, SignalError::Parse { offset: 236, .. }), "{err}");

        // Digital maximum of signal 0 sits after label, transducer,
        // dimension, physical min/max and digital min columns.
        let mut bad = good;
        let off = 256 + 16 + 80 + 8 + 8 + 8 + 8;
        bad[off..off + 8].copy_from_slice(b"-32768  ");
        let err = parse_edf(&bad, &t, "x").unwrap_err();
        assert!(matches!(err, SignalError::Parse { offset, .. } if offset == off - 8), "{err}");
    }

    #[test]
    fn unknown_modalities_become_warnings() {
        let r = rec(vec![
            ("EEG Fpz-Cz", Modality::Eeg, vec![1.0; 4]),
            ("EMG chin", Modality::Eeg, vec![1.0; 4]),
            ("eog left", Modality::Eog, vec![1.0; 4]),
        ]);
        let (back, warnings) =
            parse_edf(&encode_edf(&r, &EdfOptions::default()).unwrap(), &ModalityTable::default(), "x").unwrap();
        assert_eq!(back.channels.len(), 2);
        assert_eq!(back.channels[1].modality, Modality::Eog);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("EMG chin"));
    }
}
