//! Plain EDF (not EDF+) reading and writing.
//!
//! Layout: a 256-byte fixed header, 256 bytes of per-signal fields, then data
//! records holding `samples_per_record` little-endian `i16` values per signal.

use super::{Channel, Recording};
use crate::error::{Error, Result};

const BASE_HEADER: usize = 256;
const DIGITAL_MIN: i32 = -32768;
const DIGITAL_MAX: i32 = 32767;

struct SignalHeader {
    label: String,
    physical_min: f64,
    physical_max: f64,
    digital_min: f64,
    digital_max: f64,
    samples_per_record: usize,
}

fn field(bytes: &[u8], start: usize, len: usize, what: &str) -> Result<String> {
    let raw = bytes
        .get(start..start + len)
        .ok_or_else(|| Error::EdfHeader(format!("header ends inside `{what}`")))?;
    if !raw.iter().all(|b| (0x20..=0x7e).contains(b)) {
        return Err(Error::EdfHeader(format!("non-ASCII bytes in `{what}`")));
    }
    Ok(String::from_utf8_lossy(raw).trim().to_string())
}

fn number<T: std::str::FromStr>(bytes: &[u8], start: usize, len: usize, what: &str) -> Result<T> {
    let text = field(bytes, start, len, what)?;
    text.parse()
        .map_err(|_| Error::EdfHeader(format!("`{what}` is not a number: {text:?}")))
}

/// Parses an EDF file into a [`Recording`] of physical values.
pub fn parse_edf(bytes: &[u8]) -> Result<Recording> {
    if bytes.len() < BASE_HEADER {
        return Err(Error::EdfHeader(format!("{} bytes, need at least 256", bytes.len())));
    }
    if field(bytes, 0, 8, "version")? != "0" {
        return Err(Error::EdfHeader("version field must be 0".into()));
    }
    let patient = field(bytes, 8, 80, "patient")?;
    let header_bytes: usize = number(bytes, 184, 8, "header bytes")?;
    let n_records: i64 = number(bytes, 236, 8, "number of records")?;
    let record_seconds: f64 = number(bytes, 244, 8, "record duration")?;
    let ns: usize = number(bytes, 252, 4, "number of signals")?;

    if ns == 0 {
        return Err(Error::EdfHeader("no signals".into()));
    }
    if header_bytes != BASE_HEADER * (ns + 1) {
        return Err(Error::EdfHeader(format!(
            "header size {header_bytes} != 256 * ({ns} + 1)"
        )));
    }
    if bytes.len() < header_bytes {
        return Err(Error::EdfHeader("file shorter than its declared header".into()));
    }
    if !(record_seconds > 0.0) {
        return Err(Error::EdfHeader(format!("record duration {record_seconds}")));
    }

    // Per-signal fields are stored field-major: all labels, then all transducers, ...
    let at = |offset: usize, width: usize, i: usize| BASE_HEADER + offset * ns + width * i;
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let sig = SignalHeader {
            label: field(bytes, at(0, 16, i), 16, "label")?,
            physical_min: number(bytes, at(104, 8, i), 8, "physical minimum")?,
            physical_max: number(bytes, at(112, 8, i), 8, "physical maximum")?,
            digital_min: number(bytes, at(120, 8, i), 8, "digital minimum")?,
            digital_max: number(bytes, at(128, 8, i), 8, "digital maximum")?,
            samples_per_record: number(bytes, at(216, 8, i), 8, "samples per record")?,
        };
        if sig.samples_per_record == 0 {
            return Err(Error::EdfHeader(format!("signal `{}` has 0 samples per record", sig.label)));
        }
        if sig.digital_max <= sig.digital_min {
            return Err(Error::EdfHeader(format!("signal `{}` digital range empty", sig.label)));
        }
        signals.push(sig);
    }

    // Durations like 0.025 s are inexact in binary; snap near-integer rates.
    let rate_of = |spr: usize| {
        let r = spr as f64 / record_seconds;
        if (r - r.round()).abs() < 1e-9 * r { r.round() } else { r }
    };
    let rate = rate_of(signals[0].samples_per_record);
    for sig in &signals[1..] {
        let r = rate_of(sig.samples_per_record);
        if r != rate {
            return Err(Error::MixedSamplingRates(rate, r));
        }
    }

    let record_size: usize = signals.iter().map(|s| 2 * s.samples_per_record).sum();
    let data = &bytes[header_bytes..];
    let n_records = if n_records < 0 {
        // -1 means "unknown" while recording; infer from the payload.
        data.len() / record_size
    } else {
        n_records as usize
    };
    let expected = n_records * record_size;
    if data.len() < expected {
        return Err(Error::EdfTruncated { expected, found: data.len() });
    }

    let mut channels: Vec<Channel> = signals
        .iter()
        .map(|s| Channel {
            name: s.label.clone(),
            samples: Vec::with_capacity(n_records * s.samples_per_record),
        })
        .collect();
    let mut pos = 0;
    for _ in 0..n_records {
        for (sig, ch) in signals.iter().zip(channels.iter_mut()) {
            let gain = (sig.physical_max - sig.physical_min) / (sig.digital_max - sig.digital_min);
            for k in 0..sig.samples_per_record {
                let raw = i16::from_le_bytes([data[pos + 2 * k], data[pos + 2 * k + 1]]);
                ch.samples
                    .push(sig.physical_min + (f64::from(raw) - sig.digital_min) * gain);
            }
            pos += 2 * sig.samples_per_record;
        }
    }

    let id = patient.split_whitespace().next().unwrap_or("").to_string();
    Recording::new(id, rate, channels)
}

fn put(buf: &mut Vec<u8>, text: &str, width: usize) -> Result<()> {
    if text.len() > width || !text.is_ascii() {
        return Err(Error::InvalidArgument(format!("EDF field {text:?} exceeds {width} bytes")));
    }
    buf.extend_from_slice(text.as_bytes());
    buf.extend(std::iter::repeat_n(b' ', width - text.len()));
    Ok(())
}

/// Formats `x` in at most 8 characters, rounding toward `-inf` (`down`) or `+inf`.
fn fit8(x: f64, down: bool) -> String {
    for decimals in (0..=6).rev() {
        let scale = 10f64.powi(decimals);
        let v = if down { (x * scale).floor() } else { (x * scale).ceil() } / scale;
        let s = format!("{v:.*}", decimals as usize);
        if s.len() <= 8 {
            return s;
        }
    }
    format!("{:.0}", if down { x.floor() } else { x.ceil() })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Serializes a recording as EDF with 16-bit samples.
///
/// Each channel gets its own physical range covering its data, so round-trip
/// error is bounded by one digital step of that channel.
pub fn write_edf(rec: &Recording) -> Result<Vec<u8>> {
    let ns = rec.channels().len();
    if ns == 0 {
        return Err(Error::InvalidArgument("recording has no channels".into()));
    }
    let n = rec.duration_samples();
    let rate = rec.rate_hz.round() as usize;
    if rate as f64 != rec.rate_hz {
        return Err(Error::InvalidArgument("EDF writer needs an integer sampling rate".into()));
    }
    let spr = if n == 0 { rate } else { gcd(n, rate) };
    let n_records = n / spr;
    let record_seconds = spr as f64 / rec.rate_hz;
    let duration_text = fit8(record_seconds, true);
    if duration_text.parse::<f64>().ok() != Some(record_seconds) {
        return Err(Error::InvalidArgument(format!(
            "record duration {record_seconds} s is not representable in EDF"
        )));
    }

    let mut ranges = Vec::with_capacity(ns);
    for ch in rec.channels() {
        if let Some(i) = ch.samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let lo = ch.samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ch.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if n == 0 { (-1.0, 1.0) } else { (lo, hi) };
        let (lo, hi) = if hi - lo < 1e-6 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
        let pmin = fit8(lo, true);
        let pmax = fit8(hi, false);
        ranges.push((pmin.parse::<f64>().unwrap(), pmax.parse::<f64>().unwrap(), pmin, pmax));
    }

    let mut buf = Vec::with_capacity(BASE_HEADER * (ns + 1) + 2 * n * ns);
    put(&mut buf, "0", 8)?;
    let id: String = rec.id.chars().filter(|c| c.is_ascii_graphic()).take(80).collect();
    put(&mut buf, &id, 80)?;
    put(&mut buf, "", 80)?;
    put(&mut buf, "01.01.00", 8)?;
    put(&mut buf, "00.00.00", 8)?;
    put(&mut buf, &(BASE_HEADER * (ns + 1)).to_string(), 8)?;
    put(&mut buf, "", 44)?;
    put(&mut buf, &n_records.to_string(), 8)?;
    put(&mut buf, &duration_text, 8)?;
    put(&mut buf, &ns.to_string(), 4)?;

    for ch in rec.channels() {
        put(&mut buf, &ch.name, 16)?;
    }
    for _ in 0..ns {
        put(&mut buf, "", 80)?;
    }
    for _ in 0..ns {
        put(&mut buf, "uV", 8)?;
    }
    for r in &ranges {
        put(&mut buf, &r.2, 8)?;
    }
    for r in &ranges {
        put(&mut buf, &r.3, 8)?;
    }
    for _ in 0..ns {
        put(&mut buf, &DIGITAL_MIN.to_string(), 8)?;
    }
    for _ in 0..ns {
        put(&mut buf, &DIGITAL_MAX.to_string(), 8)?;
    }
    for _ in 0..ns {
        put(&mut buf, "", 80)?;
    }
    for _ in 0..ns {
        put(&mut buf, &spr.to_string(), 8)?;
    }
    for _ in 0..ns {
        put(&mut buf, "", 32)?;
    }

    let span = f64::from(DIGITAL_MAX - DIGITAL_MIN);
    for r in 0..n_records {
        for (ch, &(pmin, pmax, _, _)) in rec.channels().iter().zip(&ranges) {
            for &x in &ch.samples[r * spr..(r + 1) * spr] {
                let d = ((x - pmin) / (pmax - pmin) * span + f64::from(DIGITAL_MIN)).round();
                let d = d.clamp(f64::from(DIGITAL_MIN), f64::from(DIGITAL_MAX)) as i16;
                buf.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(buf)
}
