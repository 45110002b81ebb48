//! Time-tagged detection events and their on-disk formats.
//!
//! A [`TagStream`] is an immutable, time-ordered list of `(channel, time_ps)`
//! records together with the stream duration and the role each channel plays
//! in a heralded measurement. Two file formats are supported:
//!
//! * `PTAG v1` binary: a 16-byte header (`b"PTAG"`, `u16` version = 1,
//!   `u16` resolution in ps = 1, `u64` duration in ps) followed by 9-byte
//!   records (`u8` channel, `u64` time), all little-endian.
//! * CSV: a `channel,time_ps` header and one record per line. The duration
//!   lives in a JSON sidecar (`<file>.meta.json`) or is supplied by the caller.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PTAG";
pub const FORMAT_VERSION: u16 = 1;
pub const RESOLUTION_PS: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 9;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported time resolution {0} ps (only 1 ps is supported)")]
    UnsupportedResolution(u16),
    #[error("truncated record at byte offset {0}")]
    TruncatedRecord(u64),
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("tags not sorted by time: tag {index} precedes its predecessor")]
    Unsorted { index: usize },
    #[error("tag {index} has undeclared channel {channel}")]
    UnknownChannel { index: usize, channel: u8 },
    #[error("tag {index} at {time_ps} ps lies beyond the stream duration {duration_ps} ps")]
    BeyondDuration { index: usize, time_ps: u64, duration_ps: u64 },
    #[error("stream duration unknown: no sidecar at {0} and none supplied")]
    MissingDuration(PathBuf),
    #[error("duration mismatch: {0} ps vs {1} ps")]
    DurationMismatch(u64, u64),
    #[error("channel {0} has conflicting roles in merged streams")]
    RoleConflict(u8),
    #[error("invalid channel roles: {0}")]
    InvalidRoles(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeTag {
    pub channel: u8,
    pub time_ps: u64,
}

impl TimeTag {
    pub const fn new(channel: u8, time_ps: u64) -> Self {
        Self { channel, time_ps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Trigger,
    SignalA,
    SignalB,
    Other,
}

/// Channel → role assignment. The default is `0 = trigger, 1 = A, 2 = B`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelRoles(BTreeMap<u8, ChannelRole>);

impl Default for ChannelRoles {
    fn default() -> Self {
        Self::triggered(0, 1, 2)
    }
}

impl ChannelRoles {
    pub fn new(map: BTreeMap<u8, ChannelRole>) -> Self {
        Self(map)
    }

    pub fn triggered(trigger: u8, a: u8, b: u8) -> Self {
        let mut map = BTreeMap::new();
        map.insert(trigger, ChannelRole::Trigger);
        map.insert(a, ChannelRole::SignalA);
        map.insert(b, ChannelRole::SignalB);
        Self(map)
    }

    /// Parses `trigger=0,a=1,b=2` (any order; `other=N` may repeat).
    pub fn parse(spec: &str) -> Result<Self, StreamError> {
        let mut map = BTreeMap::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| StreamError::InvalidRoles(format!("expected key=value, got {part:?}")))?;
            let channel: u8 =
                value.trim().parse().map_err(|_| StreamError::InvalidRoles(format!("bad channel number {value:?}")))?;
            let role = match key.trim() {
                "trigger" | "t" => ChannelRole::Trigger,
                "a" | "signal_a" => ChannelRole::SignalA,
                "b" | "signal_b" => ChannelRole::SignalB,
                "other" => ChannelRole::Other,
                other => return Err(StreamError::InvalidRoles(format!("unknown role {other:?}"))),
            };
            if map.insert(channel, role).is_some() {
                return Err(StreamError::InvalidRoles(format!("channel {channel} assigned twice")));
            }
        }
        Ok(Self(map))
    }

    pub fn role(&self, channel: u8) -> Option<ChannelRole> {
        self.0.get(&channel).copied()
    }

    pub fn contains(&self, channel: u8) -> bool {
        self.0.contains_key(&channel)
    }

    pub fn channels(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, ChannelRole)> + '_ {
        self.0.iter().map(|(&c, &r)| (c, r))
    }

    fn unique(&self, role: ChannelRole) -> Option<u8> {
        let mut found = self.0.iter().filter(|(_, &r)| r == role).map(|(&c, _)| c);
        let first = found.next()?;
        match found.next() {
            Some(_) => None,
            None => Some(first),
        }
    }

    /// The (trigger, A, B) channels, if each role is held by exactly one channel.
    pub fn triggered_channels(&self) -> Option<(u8, u8, u8)> {
        Some((
            self.unique(ChannelRole::Trigger)?,
            self.unique(ChannelRole::SignalA)?,
            self.unique(ChannelRole::SignalB)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStream {
    tags: Vec<TimeTag>,
    duration_ps: u64,
    roles: ChannelRoles,
    pub meta: BTreeMap<String, String>,
}

impl TagStream {
    /// Builds a stream, checking sortedness, channel membership and duration.
    pub fn new(tags: Vec<TimeTag>, duration_ps: u64, roles: ChannelRoles) -> Result<Self, StreamError> {
        validate(&tags, duration_ps, &roles)?;
        Ok(Self { tags, duration_ps, roles, meta: BTreeMap::new() })
    }

    pub fn empty(duration_ps: u64, roles: ChannelRoles) -> Self {
        Self { tags: Vec::new(), duration_ps, roles, meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn roles(&self) -> &ChannelRoles {
        &self.roles
    }

    /// Replaces the role map; every tag must still be on a declared channel.
    pub fn with_roles(self, roles: ChannelRoles) -> Result<Self, StreamError> {
        check_channels(&self.tags, &roles)?;
        Ok(Self { roles, ..self })
    }

    pub fn count_on(&self, channel: u8) -> usize {
        self.tags.iter().filter(|t| t.channel == channel).count()
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }
}

fn check_channels(tags: &[TimeTag], roles: &ChannelRoles) -> Result<(), StreamError> {
    match tags.iter().position(|t| !roles.contains(t.channel)) {
        Some(index) => Err(StreamError::UnknownChannel { index, channel: tags[index].channel }),
        None => Ok(()),
    }
}

fn validate(tags: &[TimeTag], duration_ps: u64, roles: &ChannelRoles) -> Result<(), StreamError> {
    if let Some(i) = tags.windows(2).position(|w| w[1].time_ps < w[0].time_ps) {
        return Err(StreamError::Unsorted { index: i + 1 });
    }
    check_channels(tags, roles)?;
    if let Some(last) = tags.last() {
        if last.time_ps > duration_ps {
            let index = tags.partition_point(|t| t.time_ps <= duration_ps);
            return Err(StreamError::BeyondDuration { index, time_ps: tags[index].time_ps, duration_ps });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Binary,
    Csv,
}

impl Format {
    /// Guesses the format from the file extension (`.csv` → CSV, else binary).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvSidecar {
    duration_ps: u64,
}

pub fn csv_sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Reads a stream with the default channel roles.
pub fn read_stream(path: &Path, format: Format) -> Result<TagStream, StreamError> {
    read_stream_with(path, format, &ChannelRoles::default(), None)
}

/// Reads a stream. For CSV, `duration_ps` overrides the sidecar.
pub fn read_stream_with(
    path: &Path,
    format: Format,
    roles: &ChannelRoles,
    duration_ps: Option<u64>,
) -> Result<TagStream, StreamError> {
    let (tags, duration) = match format {
        Format::Binary => {
            let mut reader = BufReader::new(File::open(path)?);
            let (tags, header_duration) = decode_binary(&mut reader)?;
            (tags, duration_ps.unwrap_or(header_duration))
        }
        Format::Csv => {
            let duration = match duration_ps {
                Some(d) => d,
                None => {
                    let sidecar = csv_sidecar_path(path);
                    let file = File::open(&sidecar).map_err(|_| StreamError::MissingDuration(sidecar.clone()))?;
                    let meta: CsvSidecar = serde_json::from_reader(BufReader::new(file))
                        .map_err(|e| StreamError::MalformedHeader(format!("sidecar {}: {e}", sidecar.display())))?;
                    meta.duration_ps
                }
            };
            let reader = BufReader::new(File::open(path)?);
            (decode_csv(reader)?, duration)
        }
    };
    TagStream::new(tags, duration, roles.clone())
}

pub fn write_stream(stream: &TagStream, path: &Path, format: Format) -> Result<(), StreamError> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    match format {
        Format::Binary => encode_binary(stream, &mut writer)?,
        Format::Csv => {
            encode_csv(stream, &mut writer)?;
            let sidecar = File::create(csv_sidecar_path(path))?;
            serde_json::to_writer(sidecar, &CsvSidecar { duration_ps: stream.duration_ps })
                .map_err(io::Error::other)?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn encode_binary<W: Write>(stream: &TagStream, out: &mut W) -> io::Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&RESOLUTION_PS.to_le_bytes())?;
    out.write_all(&stream.duration_ps.to_le_bytes())?;
    let mut record = [0u8; RECORD_LEN];
    for tag in &stream.tags {
        record[0] = tag.channel;
        record[1..].copy_from_slice(&tag.time_ps.to_le_bytes());
        out.write_all(&record)?;
    }
    Ok(())
}

/// Decodes a `PTAG v1` image into tags (file order) and the header duration.
pub fn decode_binary<R: Read>(input: &mut R) -> Result<(Vec<TimeTag>, u64), StreamError> {
    let mut header = [0u8; HEADER_LEN];
    input.read_exact(&mut header).map_err(|_| StreamError::MalformedHeader("shorter than 16 bytes".into()))?;
    if header[..4] != MAGIC {
        return Err(StreamError::MalformedHeader(format!("bad magic {:02x?}", &header[..4])));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FORMAT_VERSION {
        return Err(StreamError::MalformedHeader(format!("unsupported version {version}")));
    }
    let resolution = u16::from_le_bytes([header[6], header[7]]);
    if resolution != RESOLUTION_PS {
        return Err(StreamError::UnsupportedResolution(resolution));
    }
    let duration = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));

    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() % RECORD_LEN != 0 {
        let offset = HEADER_LEN + body.len() / RECORD_LEN * RECORD_LEN;
        return Err(StreamError::TruncatedRecord(offset as u64));
    }
    let tags = body
        .chunks_exact(RECORD_LEN)
        .map(|rec| TimeTag { channel: rec[0], time_ps: u64::from_le_bytes(rec[1..].try_into().expect("8 bytes")) })
        .collect();
    Ok((tags, duration))
}

pub fn encode_csv<W: Write>(stream: &TagStream, out: &mut W) -> io::Result<()> {
    writeln!(out, "channel,time_ps")?;
    for tag in &stream.tags {
        writeln!(out, "{},{}", tag.channel, tag.time_ps)?;
    }
    Ok(())
}

pub fn decode_csv<R: BufRead>(input: R) -> Result<Vec<TimeTag>, StreamError> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some("channel,time_ps") {
        return Err(StreamError::MalformedHeader("expected `channel,time_ps`".into()));
    }
    let mut tags = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| StreamError::MalformedRecord { line: line_no, reason: reason.to_string() };
        let (ch, t) = line.trim().split_once(',').ok_or_else(|| bad("expected two fields"))?;
        let channel = ch.trim().parse().map_err(|_| bad("channel is not a u8"))?;
        let time_ps = t.trim().parse().map_err(|_| bad("time_ps is not a u64"))?;
        tags.push(TimeTag { channel, time_ps });
    }
    Ok(tags)
}

/// Sorted merge of two streams. Ties keep `a`'s tags before `b`'s.
///
/// Role maps must agree on any shared channel.
pub fn merge_streams(a: &TagStream, b: &TagStream) -> Result<TagStream, StreamError> {
    if a.duration_ps != b.duration_ps {
        return Err(StreamError::DurationMismatch(a.duration_ps, b.duration_ps));
    }
    let mut roles = a.roles.0.clone();
    for (ch, role) in b.roles.iter() {
        match roles.get(&ch) {
            Some(&existing) if existing != role => return Err(StreamError::RoleConflict(ch)),
            _ => {
                roles.insert(ch, role);
            }
        }
    }

    let mut tags = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.tags.len() && j < b.tags.len() {
        if b.tags[j].time_ps < a.tags[i].time_ps {
            tags.push(b.tags[j]);
            j += 1;
        } else {
            tags.push(a.tags[i]);
            i += 1;
        }
    }
    tags.extend_from_slice(&a.tags[i..]);
    tags.extend_from_slice(&b.tags[j..]);

    let mut meta = a.meta.clone();
    for (k, v) in &b.meta {
        meta.entry(k.clone()).or_insert_with(|| v.clone());
    }
    Ok(TagStream { tags, duration_ps: a.duration_ps, roles: ChannelRoles(roles), meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(tags: &[(u8, u64)], duration: u64) -> TagStream {
        let tags = tags.iter().map(|&(c, t)| TimeTag::new(c, t)).collect();
        TagStream::new(tags, duration, ChannelRoles::default()).unwrap()
    }

    #[test]
    fn empty_stream_is_header_only() {
        let s = TagStream::empty(1000, ChannelRoles::default());
        let mut buf = Vec::new();
        encode_binary(&s, &mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN);
        assert_eq!(&buf[..4], b"PTAG");
        assert_eq!(&buf[4..8], &[1, 0, 1, 0]);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 1000);
        let (tags, d) = decode_binary(&mut buf.as_slice()).unwrap();
        assert!(tags.is_empty());
        assert_eq!(d, 1000);
    }

    #[test]
    fn single_record_layout() {
        let s = stream(&[(1, 42)], 100);
        let mut buf = Vec::new();
        encode_binary(&s, &mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + RECORD_LEN);
        assert_eq!(&buf[16..], &[0x01, 0x2A, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn ties_are_preserved() {
        let s = stream(&[(0, 100), (1, 150), (2, 150)], 200);
        let mut buf = Vec::new();
        encode_binary(&s, &mut buf).unwrap();
        let (tags, _) = decode_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(tags, s.tags());
    }

    #[test]
    fn unsorted_reports_first_offender() {
        let tags = vec![TimeTag::new(0, 5), TimeTag::new(1, 9), TimeTag::new(2, 7), TimeTag::new(0, 1)];
        match TagStream::new(tags, 10, ChannelRoles::default()) {
            Err(StreamError::Unsorted { index }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_channel_and_late_tag() {
        let err = TagStream::new(vec![TimeTag::new(7, 1)], 10, ChannelRoles::default()).unwrap_err();
        assert!(matches!(err, StreamError::UnknownChannel { index: 0, channel: 7 }));
        let err =
            TagStream::new(vec![TimeTag::new(0, 1), TimeTag::new(0, 11)], 10, ChannelRoles::default()).unwrap_err();
        assert!(matches!(err, StreamError::BeyondDuration { index: 1, .. }));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(decode_binary(&mut &b"PTA"[..]), Err(StreamError::MalformedHeader(_))));
        let mut bad = b"XTAG".to_vec();
        bad.extend_from_slice(&[1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert!(matches!(decode_binary(&mut bad.as_slice()), Err(StreamError::MalformedHeader(_))));
        let mut res = b"PTAG".to_vec();
        res.extend_from_slice(&[1, 0, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert!(matches!(decode_binary(&mut res.as_slice()), Err(StreamError::UnsupportedResolution(4))));
        let mut trunc = b"PTAG".to_vec();
        trunc.extend_from_slice(&[1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 3]);
        assert!(matches!(decode_binary(&mut trunc.as_slice()), Err(StreamError::TruncatedRecord(16))));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let s = stream(&[(0, 100), (1, 150), (2, 150)], 200);
        let mut buf = Vec::new();
        encode_csv(&s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "channel,time_ps\n0,100\n1,150\n2,150\n");
        assert_eq!(decode_csv(buf.as_slice()).unwrap(), s.tags());
        assert!(matches!(decode_csv(&b"ch,t\n"[..]), Err(StreamError::MalformedHeader(_))));
        assert!(matches!(
            decode_csv(&b"channel,time_ps\n1;2\n"[..]),
            Err(StreamError::MalformedRecord { line: 2, .. })
        ));
    }

    #[test]
    fn merge_identity_and_order() {
        let x = stream(&[(0, 1), (1, 5)], 10);
        let empty = TagStream::empty(10, ChannelRoles::default());
        assert_eq!(merge_streams(&x, &empty).unwrap().tags(), x.tags());
        let a = stream(&[(0, 5)], 10);
        let b = stream(&[(1, 3)], 10);
        let m = merge_streams(&a, &b).unwrap();
        assert_eq!(m.tags(), &[TimeTag::new(1, 3), TimeTag::new(0, 5)]);
        let c = stream(&[(2, 5)], 10);
        assert_eq!(merge_streams(&a, &c).unwrap().tags(), &[TimeTag::new(0, 5), TimeTag::new(2, 5)]);
        assert!(matches!(
            merge_streams(&a, &TagStream::empty(11, ChannelRoles::default())),
            Err(StreamError::DurationMismatch(10, 11))
        ));
    }

    #[test]
    fn roles_parse() {
        let r = ChannelRoles::parse("a=4, trigger=3,b=5").unwrap();
        assert_eq!(r.triggered_channels(), Some((3, 4, 5)));
        assert!(ChannelRoles::parse("trigger=0,a=0").is_err());
        assert!(ChannelRoles::parse("x=1").is_err());
        let partial = ChannelRoles::parse("trigger=0,a=1").unwrap();
        assert_eq!(partial.triggered_channels(), None);
    }
}
