//! `.sig` cache for conditioned recordings.
//!
//! ```text
//! MWTSIG 1
//! id <recording id>
//! rate <Hz>
//! samples <n>
//! channels <name>,<name>,...
//! end
//! <channel-major f64 little-endian payload>
//! ```

use anyhow::{anyhow, bail, Result};
use microsleep::ingest::Channel;
use microsleep::Recording;

const MAGIC: &str = "MWTSIG 1";

pub fn write_sig(rec: &Recording) -> Vec<u8> {
    let names: Vec<&str> = rec.channel_names();
    let header = format!(
        "{MAGIC}\nid {}\nrate {}\nsamples {}\nchannels {}\nend\n",
        rec.id,
        rec.rate_hz,
        rec.duration_samples(),
        names.join(",")
    );
    let mut out = header.into_bytes();
    for ch in rec.channels() {
        for v in &ch.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_sig(bytes: &[u8]) -> Result<Recording> {
    let mut pos = 0;
    let mut line = || -> Result<String> {
        let rest = &bytes[pos..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| anyhow!("sig header is unterminated"))?;
        pos += nl + 1;
        Ok(String::from_utf8(rest[..nl].to_vec())?)
    };
    if line()? != MAGIC {
        bail!("not a conditioned signal file (missing `{MAGIC}`)");
    }
    let mut field = |key: &str| -> Result<String> {
        let l = line()?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| anyhow!("sig header: expected `{key}`, found {l:?}"))
    };
    let id = field("id")?;
    let rate: f64 = field("rate")?.parse()?;
    let samples: usize = field("samples")?.parse()?;
    let names: Vec<String> = field("channels")?.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
    if line()? != "end" {
        bail!("sig header: missing `end`");
    }
    let payload = &bytes[pos..];
    let expected = names.len() * samples * 8;
    if payload.len() != expected {
        bail!("sig payload has {} bytes, header implies {expected}", payload.len());
    }
    let channels = names
        .into_iter()
        .enumerate()
        .map(|(c, name)| {
            let chunk = &payload[c * samples * 8..(c + 1) * samples * 8];
            let samples = chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            Channel { name, samples }
        })
        .collect();
    Ok(Recording::new(id, rate, channels)?)
}
