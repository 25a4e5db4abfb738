//! Segment records, trial pairs and their manifest formats.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::textio;

/// Every segment covers exactly this much speech.
pub const SEGMENT_SECONDS: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub recording_id: String,
    pub speaker_id: Option<String>,
    pub features: Vec<f64>,
}

impl SegmentRecord {
    pub fn duration_s(&self) -> f64 {
        SEGMENT_SECONDS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    DevValidation,
    DevTest,
}

impl Role {
    /// Speakers below this many segments are dropped during preprocessing.
    pub fn min_segments_per_speaker(self) -> usize {
        match self {
            Role::Train => 3,
            Role::DevValidation | Role::DevTest => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub segments: Vec<SegmentRecord>,
    pub role: Role,
    pub channel: String,
}

impl PreparedDataset {
    pub fn new(segments: Vec<SegmentRecord>, role: Role, channel: impl Into<String>) -> Self {
        PreparedDataset {
            segments,
            role,
            channel: channel.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segment indices grouped by speaker, speakers in ascending ID order.
    /// Segments without a speaker are skipped.
    pub fn by_speaker(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.segments.iter().enumerate() {
            if let Some(spk) = &s.speaker_id {
                map.entry(spk.as_str()).or_default().push(i);
            }
        }
        map
    }

    pub fn speakers(&self) -> Vec<&str> {
        self.by_speaker().into_keys().collect()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.segments.first().map(|s| s.features.len())
    }

    pub fn index(&self) -> SegmentIndex<'_> {
        SegmentIndex::new(&self.segments)
    }

    /// `<segment_id>\t<recording_id>\t<speaker_id>\t<channel>\t<f1> ... <fF>`,
    /// with `-` standing in for an unknown speaker.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            write!(
                out,
                "{}\t{}\t{}\t{}\t",
                s.segment_id,
                s.recording_id,
                s.speaker_id.as_deref().unwrap_or("-"),
                self.channel
            )
            .unwrap();
            textio::push_floats(&mut out, &s.features, ' ');
            out.push('\n');
        }
        out
    }

    pub fn from_manifest(text: &str, role: Role) -> Result<Self> {
        let mut segments = Vec::new();
        let mut channel: Option<String> = None;
        let mut ids = HashSet::new();
        let mut dim = None;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::parse(
                    lineno,
                    format!("expected 5 tab-separated columns, found {}", cols.len()),
                ));
            }
            for (tok, what) in
                cols[..4]
                    .iter()
                    .zip(["segment id", "recording id", "speaker id", "channel"])
            {
                textio::check_id(tok, lineno, what)?;
            }
            match &channel {
                None => channel = Some(cols[3].to_string()),
                Some(c) if c != cols[3] => {
                    return Err(Error::parse(
                        lineno,
                        format!("mixed channels `{c}` and `{}`", cols[3]),
                    ))
                }
                _ => {}
            }
            let features = textio::parse_floats(cols[4].split_whitespace(), lineno)?;
            if features.is_empty() {
                return Err(Error::parse(lineno, "no feature values"));
            }
            match dim {
                None => dim = Some(features.len()),
                Some(d) if d != features.len() => {
                    return Err(Error::parse(
                        lineno,
                        format!("feature dimension {} differs from {d}", features.len()),
                    ))
                }
                _ => {}
            }
            if !ids.insert(cols[0]) {
                return Err(Error::parse(
                    lineno,
                    format!("duplicate segment id `{}`", cols[0]),
                ));
            }
            segments.push(SegmentRecord {
                segment_id: cols[0].to_string(),
                recording_id: cols[1].to_string(),
                speaker_id: (cols[2] != "-").then(|| cols[2].to_string()),
                features,
            });
        }
        Ok(PreparedDataset {
            segments,
            role,
            channel: channel.unwrap_or_default(),
        })
    }
}

/// Lookup from segment id to record.
pub struct SegmentIndex<'a> {
    map: HashMap<&'a str, &'a SegmentRecord>,
}

impl<'a> SegmentIndex<'a> {
    pub fn new(segments: &'a [SegmentRecord]) -> Self {
        SegmentIndex {
            map: segments
                .iter()
                .map(|s| (s.segment_id.as_str(), s))
                .collect(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&'a SegmentRecord> {
        self.map
            .get(id)
            .copied()
            .ok_or_else(|| Error::MissingSegment(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrialPair {
    pub seg_a: String,
    pub seg_b: String,
    /// `true` for a same-speaker (target) trial.
    pub target: bool,
}

pub fn trials_to_text(pairs: &[TrialPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        writeln!(out, "{}\t{}\t{}", p.seg_a, p.seg_b, u8::from(p.target)).unwrap();
    }
    out
}

pub fn parse_trials(text: &str) -> Result<Vec<TrialPair>> {
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(lineno, "expected `<a>\\t<b>\\t<0|1>`"));
        }
        textio::check_id(cols[0], lineno, "segment id")?;
        textio::check_id(cols[1], lineno, "segment id")?;
        if cols[0] == cols[1] {
            return Err(Error::parse(lineno, "self-pair"));
        }
        let target = match cols[2] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(lineno, format!("bad label `{other}`"))),
        };
        pairs.push(TrialPair {
            seg_a: cols[0].to_string(),
            seg_b: cols[1].to_string(),
            target,
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: &str, rec: &str, spk: Option<&str>, f: &[f64]) -> SegmentRecord {
        SegmentRecord {
            segment_id: id.into(),
            recording_id: rec.into(),
            speaker_id: spk.map(Into::into),
            features: f.to_vec(),
        }
    }

    #[test]
    fn manifest_roundtrip() {
        let ds = PreparedDataset::new(
            vec![
                seg("s1", "r1", Some("spk001"), &[0.5, -1.25]),
                seg("s2", "r1", None, &[1e-12, 3.0]),
            ],
            Role::Train,
            "A",
        );
        let text = ds.to_manifest();
        assert_eq!(text.lines().next().unwrap(), "s1\tr1\tspk001\tA\t0.5 -1.25");
        assert_eq!(
            PreparedDataset::from_manifest(&text, Role::Train).unwrap(),
            ds
        );
    }

    #[test]
    fn manifest_errors() {
        assert!(PreparedDataset::from_manifest("a\tb\tc\n", Role::Train).is_err());
        assert!(PreparedDataset::from_manifest("a\tr\ts\tI\tx\n", Role::Train).is_err());
        assert!(
            PreparedDataset::from_manifest("a\tr\ts\tI\t1\nb\tr\ts\tA\t1\n", Role::Train).is_err()
        );
        assert!(
            PreparedDataset::from_manifest("a\tr\ts\tI\t1\na\tr\ts\tI\t1\n", Role::Train).is_err()
        );
        assert!(
            PreparedDataset::from_manifest("a\tr\ts\tI\t1\nb\tr\ts\tI\t1 2\n", Role::Train)
                .is_err()
        );
    }

    #[test]
    fn trial_roundtrip_and_errors() {
        let pairs = vec![
            TrialPair {
                seg_a: "a".into(),
                seg_b: "b".into(),
                target: true,
            },
            TrialPair {
                seg_a: "a".into(),
                seg_b: "c".into(),
                target: false,
            },
        ];
        let text = trials_to_text(&pairs);
        assert_eq!(text, "a\tb\t1\na\tc\t0\n");
        assert_eq!(parse_trials(&text).unwrap(), pairs);
        assert!(parse_trials("a\ta\t1\n").is_err());
        assert!(parse_trials("a\tb\t2\n").is_err());
        assert!(parse_trials("a b 1\n").is_err());
    }
}
