//! Phone-like segmentation of discrete unit sequences.
//!
//! A segment is a maximal run of identical consecutive cluster IDs. Segment
//! boundaries are kept on the raw frame axis so matched spans can be mapped
//! back to frames.

use serde::{Deserialize, Serialize};

use crate::corpus::{ClusterId, Segment, UnitSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSequence {
    pub utterance_id: String,
    segments: Vec<Segment>,
}

impl SegmentSequence {
    /// Builds a sequence from explicit segments, checking contiguity and
    /// that neighbours differ.
    pub fn from_segments(utterance_id: impl Into<String>, segments: Vec<Segment>) -> Result<Self> {
        let utterance_id = utterance_id.into();
        if segments.is_empty() {
            return Err(Error::validation(format!("{utterance_id}: no segments")));
        }
        let mut expected_start = 0;
        for (i, s) in segments.iter().enumerate() {
            if s.length_frames == 0 || s.start_frame != expected_start {
                return Err(Error::validation(format!(
                    "{utterance_id}: segment {i} is empty or not contiguous"
                )));
            }
            if i > 0 && segments[i - 1].cluster_id == s.cluster_id {
                return Err(Error::validation(format!(
                    "{utterance_id}: segments {} and {i} share cluster id {}",
                    i - 1,
                    s.cluster_id
                )));
            }
            expected_start = s.end_frame();
        }
        Ok(Self {
            utterance_id,
            segments,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn num_frames(&self) -> usize {
        self.segments.last().map_or(0, Segment::end_frame)
    }

    /// Raw frames covered by segments `first..end` (half-open).
    pub fn frame_span(&self, first: usize, end: usize) -> (usize, usize) {
        if first >= end {
            let at = self
                .segments
                .get(first)
                .map_or_else(|| self.num_frames(), |s| s.start_frame);
            return (at, at);
        }
        (
            self.segments[first].start_frame,
            self.segments[end - 1].end_frame(),
        )
    }
}

/// Run-length encodes a unit sequence.
pub fn segment(units: &UnitSequence) -> Result<SegmentSequence> {
    if units.frames.is_empty() {
        return Err(Error::domain(format!(
            "utterance {} has no frames",
            units.utterance_id
        )));
    }
    let mut segments: Vec<Segment> = Vec::new();
    for (i, &id) in units.frames.iter().enumerate() {
        match segments.last_mut() {
            Some(last) if last.cluster_id == id => last.length_frames += 1,
            _ => segments.push(Segment {
                cluster_id: id,
                start_frame: i,
                length_frames: 1,
            }),
        }
    }
    Ok(SegmentSequence {
        utterance_id: units.utterance_id.clone(),
        segments,
    })
}

/// The alignment alphabet: one cluster ID per segment.
pub fn segment_ids(segments: &SegmentSequence) -> Vec<ClusterId> {
    segments.segments.iter().map(|s| s.cluster_id).collect()
}

/// Inverse of [`segment`].
pub fn expand(segments: &SegmentSequence) -> UnitSequence {
    let frames = segments
        .segments
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.cluster_id, s.length_frames))
        .collect();
    UnitSequence::new(segments.utterance_id.clone(), frames)
}

/// JSONL record: `{"id": ..., "segments": [[cid, start, len], ...]}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    pub segments: Vec<(ClusterId, usize, usize)>,
}

impl From<&SegmentSequence> for SegmentRecord {
    fn from(s: &SegmentSequence) -> Self {
        Self {
            id: s.utterance_id.clone(),
            segments: s
                .segments
                .iter()
                .map(|g| (g.cluster_id, g.start_frame, g.length_frames))
                .collect(),
        }
    }
}

impl TryFrom<SegmentRecord> for SegmentSequence {
    type Error = Error;

    fn try_from(r: SegmentRecord) -> Result<Self> {
        let segments = r
            .segments
            .into_iter()
            .map(|(cluster_id, start_frame, length_frames)| Segment {
                cluster_id,
                start_frame,
                length_frames,
            })
            .collect();
        SegmentSequence::from_segments(r.id, segments)
    }
}

pub fn to_jsonl(seqs: &[SegmentSequence]) -> String {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&serde_json::to_string(&SegmentRecord::from(s)).expect("serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str, source: &str) -> Result<Vec<SegmentSequence>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: SegmentRecord = serde_json::from_str(l).map_err(|e| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            SegmentSequence::try_from(rec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(frames: &[u32]) -> SegmentSequence {
        segment(&UnitSequence::new("u", frames.to_vec())).unwrap()
    }

    fn triples(s: &SegmentSequence) -> Vec<(u32, usize, usize)> {
        s.segments()
            .iter()
            .map(|g| (g.cluster_id, g.start_frame, g.length_frames))
            .collect()
    }

    #[test]
    fn run_length_encodes() {
        let s = seg(&[7, 7, 7, 2, 2, 9]);
        assert_eq!(triples(&s), vec![(7, 0, 3), (2, 3, 2), (9, 5, 1)]);
        assert_eq!(segment_ids(&s), vec![7, 2, 9]);
    }

    #[test]
    fn singleton_and_no_repeats() {
        assert_eq!(triples(&seg(&[4])), vec![(4, 0, 1)]);
        assert_eq!(segment_ids(&seg(&[4])), vec![4]);
        let s = seg(&[1, 2, 1, 2]);
        assert_eq!(s.len(), 4);
        assert!(s.segments().iter().all(|g| g.length_frames == 1));
    }

    #[test]
    fn empty_is_domain_error() {
        let err = segment(&UnitSequence::new("e", vec![])).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn frame_span_maps_segment_range() {
        let s = seg(&[7, 7, 7, 2, 2, 9]);
        assert_eq!(s.frame_span(1, 3), (3, 6));
        assert_eq!(s.frame_span(0, 1), (0, 3));
        assert_eq!(s.frame_span(1, 1), (3, 3));
    }

    #[test]
    fn from_segments_rejects_gaps_and_equal_neighbours() {
        let g = |c, s, l| Segment {
            cluster_id: c,
            start_frame: s,
            length_frames: l,
        };
        assert!(SegmentSequence::from_segments("x", vec![g(1, 0, 2), g(2, 3, 1)]).is_err());
        assert!(SegmentSequence::from_segments("x", vec![g(1, 0, 2), g(1, 2, 1)]).is_err());
        assert!(SegmentSequence::from_segments("x", vec![g(1, 0, 2), g(2, 2, 1)]).is_ok());
    }

    #[test]
    fn jsonl_round_trip() {
        let a = seg(&[1, 1, 3]);
        let text = to_jsonl(std::slice::from_ref(&a));
        assert_eq!(text, "{\"id\":\"u\",\"segments\":[[1,0,2],[3,2,1]]}\n");
        assert_eq!(parse_jsonl(&text, "t").unwrap(), vec![a]);
    }

    proptest! {
        #[test]
        fn expand_inverts_segment(frames in prop::collection::vec(0u32..5, 1..60)) {
            let s = seg(&frames);
            prop_assert_eq!(expand(&s).frames, frames.clone());
            prop_assert!(s.len() <= frames.len());
            let distinct_neighbours = frames.windows(2).all(|w| w[0] != w[1]);
            prop_assert_eq!(s.len() == frames.len(), distinct_neighbours);
        }
    }
}
