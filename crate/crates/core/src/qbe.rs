//! Query-by-example search over discrete-unit speech.
//!
//! A query word (as segment IDs) is aligned against every utterance with a
//! fitting alignment: the whole query must be consumed while the parts of
//! the utterance before and after the matched region cost nothing. Scores
//! are normalized by query length, the best score over a class's K examples
//! ranks each utterance, and the matched region is mapped back to raw frames.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Captions, ClusterId};
use crate::error::{Error, Result};
use crate::segmenter::{segment_ids, SegmentSequence};

/// Default ranking depth for large mining pools.
pub const DEFAULT_TOP_N: usize = 600;
/// Ranking depth used for small pools.
pub const SMALL_POOL_TOP_N: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scoring {
    #[serde(rename = "match")]
    pub match_score: f64,
    pub mismatch: f64,
    pub gap: f64,
}

impl Default for Scoring {
    fn default() -> Self {
        Self {
            match_score: 1.0,
            mismatch: -1.0,
            gap: -1.0,
        }
    }
}

impl Scoring {
    fn substitution(&self, a: ClusterId, b: ClusterId) -> f64 {
        if a == b {
            self.match_score
        } else {
            self.mismatch
        }
    }
}

impl FromStr for Scoring {
    type Err = Error;

    /// Parses `match=1,mismatch=-1,gap=-1`; omitted keys keep their defaults.
    fn from_str(s: &str) -> Result<Self> {
        let mut scoring = Scoring::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::validation(format!("bad scoring term {part:?}")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::validation(format!("bad scoring value in {part:?}")))?;
            if !value.is_finite() {
                return Err(Error::validation(format!("non-finite scoring value in {part:?}")));
            }
            match key.trim() {
                "match" => scoring.match_score = value,
                "mismatch" => scoring.mismatch = value,
                "gap" => scoring.gap = value,
                other => return Err(Error::validation(format!("unknown scoring key {other:?}"))),
            }
        }
        Ok(scoring)
    }
}

impl fmt::Display for Scoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "match={},mismatch={},gap={}",
            self.match_score, self.mismatch, self.gap
        )
    }
}

/// Best fitting alignment of a query inside a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub score: f64,
    /// First aligned target index.
    pub start: usize,
    /// One past the last aligned target index. `start == end` when the
    /// whole query is aligned to gaps.
    pub end: usize,
}

#[derive(Clone, Copy)]
struct Cell {
    score: f64,
    start: usize,
}

impl Cell {
    /// Higher score wins; equal scores keep the earlier start.
    fn better(self, other: Cell) -> Cell {
        if other.score > self.score || (other.score == self.score && other.start < self.start) {
            other
        } else {
            self
        }
    }
}

/// Fitting ("glocal") alignment: the maximum over all target windows of the
/// global alignment score of the full query against that window.
///
/// Ties are broken by the smallest window start, then the smallest end.
pub fn fit_align(query: &[ClusterId], target: &[ClusterId], scoring: &Scoring) -> Result<Fit> {
    if query.is_empty() || target.is_empty() {
        return Err(Error::domain("fit_align needs a non-empty query and target"));
    }
    let n = target.len();
    let mut prev: Vec<Cell> = Vec::with_capacity(n + 1);
    // row 0: nothing of the query consumed; a window may open at any column
    prev.push(Cell {
        score: 0.0,
        start: 0,
    });
    for j in 1..=n {
        let open = Cell {
            score: 0.0,
            start: j,
        };
        let extend = Cell {
            score: prev[j - 1].score + scoring.gap,
            start: prev[j - 1].start,
        };
        prev.push(extend.better(open));
    }
    let mut cur = vec![
        Cell {
            score: 0.0,
            start: 0
        };
        n + 1
    ];
    for &q in query {
        cur[0] = Cell {
            score: prev[0].score + scoring.gap,
            start: prev[0].start,
        };
        for j in 1..=n {
            let diag = Cell {
                score: prev[j - 1].score + scoring.substitution(q, target[j - 1]),
                start: prev[j - 1].start,
            };
            let up = Cell {
                score: prev[j].score + scoring.gap,
                start: prev[j].start,
            };
            let left = Cell {
                score: cur[j - 1].score + scoring.gap,
                start: cur[j - 1].start,
            };
            cur[j] = diag.better(up).better(left);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let mut best = Fit {
        score: prev[0].score,
        start: prev[0].start,
        end: 0,
    };
    for (j, cell) in prev.iter().enumerate().skip(1) {
        let better = cell.score > best.score
            || (cell.score == best.score && cell.start < best.start);
        if better {
            best = Fit {
                score: cell.score,
                start: cell.start,
                end: j,
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the number of query segments.
    #[default]
    QueryLength,
    /// Report the raw alignment score.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub utterance_id: String,
    pub score: f64,
    pub normalized_score: f64,
    /// Half-open range of matched target segments.
    pub segment_range: (usize, usize),
    /// Half-open range on the target's raw frame axis.
    pub frame_span: (usize, usize),
}

fn align_one(
    query: &[ClusterId],
    target: &SegmentSequence,
    scoring: &Scoring,
    norm: Normalization,
) -> Result<AlignmentResult> {
    let fit = fit_align(query, &segment_ids(target), scoring)?;
    let normalized_score = match norm {
        Normalization::QueryLength => fit.score / query.len() as f64,
        Normalization::None => fit.score,
    };
    Ok(AlignmentResult {
        utterance_id: target.utterance_id.clone(),
        score: fit.score,
        normalized_score,
        segment_range: (fit.start, fit.end),
        frame_span: target.frame_span(fit.start, fit.end),
    })
}

/// Aligns the query against every utterance; results follow collection order.
pub fn search(
    query: &SegmentSequence,
    collection: &[SegmentSequence],
    scoring: &Scoring,
    norm: Normalization,
) -> Result<Vec<AlignmentResult>> {
    let q = segment_ids(query);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        collection
            .par_iter()
            .map(|t| align_one(&q, t, scoring, norm))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        collection
            .iter()
            .map(|t| align_one(&q, t, scoring, norm))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedUtterance {
    pub utterance_id: String,
    pub score: f64,
    /// Half-open raw frame span of the best match.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRanking {
    pub class_label: String,
    pub ranked: Vec<RankedUtterance>,
    /// Set when fewer than `n` utterances were available.
    pub short: bool,
}

/// Keeps, per utterance, the best normalized score over the K example
/// searches, sorts descending (ties by utterance ID) and truncates to `n`.
pub fn rank_for_class(
    class_label: &str,
    results_per_example: &[Vec<AlignmentResult>],
    n: usize,
) -> Result<ClassRanking> {
    if n == 0 {
        return Err(Error::domain("ranking depth n must be positive"));
    }
    let Some(first) = results_per_example.first() else {
        return Err(Error::domain("need at least one example's search results"));
    };
    let mut best: BTreeMap<&str, RankedUtterance> = BTreeMap::new();
    for r in first {
        best.insert(
            &r.utterance_id,
            RankedUtterance {
                utterance_id: r.utterance_id.clone(),
                score: r.normalized_score,
                span: r.frame_span,
            },
        );
    }
    if best.len() != first.len() {
        return Err(Error::validation("duplicate utterance in search results"));
    }
    for results in &results_per_example[1..] {
        if results.len() != best.len() {
            return Err(Error::validation(
                "example searches cover different utterance sets",
            ));
        }
        for r in results {
            let entry = best.get_mut(r.utterance_id.as_str()).ok_or_else(|| {
                Error::validation(format!(
                    "utterance {} missing from another example's results",
                    r.utterance_id
                ))
            })?;
            // order-independent: higher score, then earlier span
            if r.normalized_score > entry.score
                || (r.normalized_score == entry.score && r.frame_span < entry.span)
            {
                entry.score = r.normalized_score;
                entry.span = r.frame_span;
            }
        }
    }
    let mut ranked: Vec<RankedUtterance> = best.into_values().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.utterance_id.cmp(&b.utterance_id))
    });
    let short = ranked.len() < n;
    ranked.truncate(n);
    Ok(ClassRanking {
        class_label: class_label.to_string(),
        ranked,
        short,
    })
}

/// DTW over frame vectors with cosine local distance (1 - cosine) and
/// steps (1,0), (0,1), (1,1). Returns the minimum accumulated cost divided
/// by the length of the warping path (cells visited). Among equal-cost
/// paths the longest is taken.
pub fn dtw_align(query: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    if query.is_empty() || target.is_empty() {
        return Err(Error::domain("dtw needs non-empty sequences"));
    }
    let dim = query[0].len();
    if query.iter().chain(target).any(|v| v.len() != dim) {
        return Err(Error::domain("dtw frames have differing dimensions"));
    }
    let unit = |v: &Vec<f64>| -> Result<Vec<f64>> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::domain("zero vector: cosine distance undefined"));
        }
        Ok(v.iter().map(|x| x / norm).collect())
    };
    let q: Vec<Vec<f64>> = query.iter().map(unit).collect::<Result<_>>()?;
    let t: Vec<Vec<f64>> = target.iter().map(unit).collect::<Result<_>>()?;
    let dist = |a: &[f64], b: &[f64]| 1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let (n, m) = (q.len(), t.len());
    // (accumulated cost, path length)
    let mut acc = vec![(f64::INFINITY, 0usize); n * m];
    for i in 0..n {
        for j in 0..m {
            let d = dist(&q[i], &t[j]);
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut cands = Vec::with_capacity(3);
                if i > 0 && j > 0 {
                    cands.push(acc[(i - 1) * m + j - 1]);
                }
                if i > 0 {
                    cands.push(acc[(i - 1) * m + j]);
                }
                if j > 0 {
                    cands.push(acc[i * m + j - 1]);
                }
                cands
                    .into_iter()
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                    .unwrap()
            };
            acc[i * m + j] = (best.0 + d, best.1 + 1);
        }
    }
    let (cost, len) = acc[n * m - 1];
    Ok(cost / len as f64)
}

/// Fraction of ranked utterances whose caption contains `keyword` anywhere.
pub fn mining_precision(ranking: &ClassRanking, captions: &Captions, keyword: &str) -> Result<f64> {
    if ranking.ranked.is_empty() {
        return Err(Error::domain("precision of an empty ranking is undefined"));
    }
    let mut hits = 0usize;
    for r in &ranking.ranked {
        let found = captions.contains(&r.utterance_id, keyword).ok_or_else(|| {
            Error::validation(format!("no caption for utterance {}", r.utterance_id))
        })?;
        hits += found as usize;
    }
    Ok(hits as f64 / ranking.ranked.len() as f64)
}

/// Serialized form: class -> ranked list.
pub fn rankings_to_map(rankings: &[ClassRanking]) -> BTreeMap<String, Vec<RankedUtterance>> {
    rankings
        .iter()
        .map(|r| (r.class_label.clone(), r.ranked.clone()))
        .collect()
}

/// Inverse of [`rankings_to_map`]; `short` is not stored and reads as false.
pub fn rankings_from_map(map: BTreeMap<String, Vec<RankedUtterance>>) -> Vec<ClassRanking> {
    map.into_iter()
        .map(|(class_label, ranked)| ClassRanking {
            class_label,
            ranked,
            short: false,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UnitSequence;
    use crate::segmenter::segment;
    use proptest::prelude::*;

    fn nw() -> Scoring {
        Scoring::default()
    }

    /// Exhaustive global alignment score of `q` against `t`.
    fn brute_global(q: &[u32], t: &[u32], s: &Scoring) -> f64 {
        match (q.split_first(), t.split_first()) {
            (None, None) => 0.0,
            (Some((_, qr)), None) => s.gap + brute_global(qr, t, s),
            (None, Some((_, tr))) => s.gap + brute_global(q, tr, s),
            (Some((&a, qr)), Some((&b, tr))) => {
                let diag = s.substitution(a, b) + brute_global(qr, tr, s);
                let up = s.gap + brute_global(qr, t, s);
                let left = s.gap + brute_global(q, tr, s);
                diag.max(up).max(left)
            }
        }
    }

    /// Best window by exhaustive enumeration, lexicographically smallest on ties.
    fn brute_fit(q: &[u32], t: &[u32], s: &Scoring) -> Fit {
        let mut best: Option<Fit> = None;
        for start in 0..=t.len() {
            for end in start..=t.len() {
                let score = brute_global(q, &t[start..end], s);
                if best.is_none_or(|b| score > b.score) {
                    best = Some(Fit { score, start, end });
                }
            }
        }
        best.unwrap()
    }

    #[test]
    fn identity_alignment() {
        let f = fit_align(&[1, 2, 3], &[1, 2, 3], &nw()).unwrap();
        assert_eq!(f, Fit { score: 3.0, start: 0, end: 3 });
    }

    #[test]
    fn embedded_query() {
        let f = fit_align(&[1, 2, 3], &[5, 1, 2, 3, 8], &nw()).unwrap();
        assert_eq!(f, brute_fit(&[1, 2, 3], &[5, 1, 2, 3, 8], &nw()));
        // inclusive range [1, 3]
        assert_eq!((f.score, f.start, f.end - 1), (3.0, 1, 3));
    }

    #[test]
    fn all_mismatch_scores_minus_three() {
        let f = fit_align(&[1, 2, 3], &[5, 9, 8], &nw()).unwrap();
        assert_eq!(f.score, -3.0);
        assert_eq!(f, brute_fit(&[1, 2, 3], &[5, 9, 8], &nw()));
    }

    #[test]
    fn empty_inputs_are_domain_errors() {
        assert!(fit_align(&[], &[1], &nw()).is_err());
        assert!(fit_align(&[1], &[], &nw()).is_err());
    }

    #[test]
    fn scoring_parses() {
        let s: Scoring = "match=2, mismatch=-0.5,gap=-3".parse().unwrap();
        assert_eq!(
            s,
            Scoring {
                match_score: 2.0,
                mismatch: -0.5,
                gap: -3.0
            }
        );
        assert_eq!(s.to_string().parse::<Scoring>().unwrap(), s);
        assert!("match=x".parse::<Scoring>().is_err());
        assert!("foo=1".parse::<Scoring>().is_err());
    }

    fn seg(id: &str, frames: &[u32]) -> SegmentSequence {
        segment(&UnitSequence::new(id, frames.to_vec())).unwrap()
    }

    #[test]
    fn search_self_match_covers_full_utterance() {
        let q = seg("q", &[4, 4, 5, 6, 6, 6]);
        let coll = vec![seg("u", &[4, 4, 5, 6, 6, 6])];
        let r = search(&q, &coll, &nw(), Normalization::QueryLength).unwrap();
        assert_eq!(r[0].normalized_score, 1.0);
        assert_eq!(r[0].frame_span, (0, 6));
    }

    #[test]
    fn search_with_disjoint_alphabet_is_negative() {
        let q = seg("q", &[1, 2, 3]);
        let coll = vec![seg("a", &[7, 8, 9, 7]), seg("b", &[5])];
        for r in search(&q, &coll, &nw(), Normalization::QueryLength).unwrap() {
            assert!(r.normalized_score < 0.0, "{r:?}");
        }
    }

    #[test]
    fn search_recovers_planted_span() {
        let q = seg("q", &[10, 10, 11, 12, 12]);
        // background 0..5 frames, planted word at frames 5..10, then background
        let frames = [1, 1, 2, 3, 3, 10, 10, 11, 12, 12, 4, 4, 5];
        let r = search(&q, &[seg("u", &frames)], &nw(), Normalization::QueryLength).unwrap();
        assert_eq!(r[0].frame_span, (5, 10));
        assert_eq!(r[0].normalized_score, 1.0);
    }

    fn res(id: &str, score: f64, span: (usize, usize)) -> AlignmentResult {
        AlignmentResult {
            utterance_id: id.into(),
            score,
            normalized_score: score,
            segment_range: span,
            frame_span: span,
        }
    }

    #[test]
    fn rank_takes_max_over_examples() {
        let a = vec![res("u1", 0.9, (0, 1)), res("u2", 0.1, (0, 1))];
        let b = vec![res("u1", 0.2, (0, 1)), res("u2", 0.5, (2, 3))];
        let r = rank_for_class("c", &[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(r.ranked.len(), 1);
        assert_eq!(r.ranked[0].utterance_id, "u1");
        assert_eq!(r.ranked[0].score, 0.9);
        assert!(!r.short);
        let full = rank_for_class("c", &[b, a], 5).unwrap();
        assert_eq!(full.ranked[1].span, (2, 3));
        assert!(full.short);
    }

    #[test]
    fn rank_ties_by_id_and_validates() {
        let a = vec![res("b", 0.5, (0, 1)), res("a", 0.5, (0, 1)), res("c", 0.5, (0, 1))];
        let r = rank_for_class("c", std::slice::from_ref(&a), 3).unwrap();
        let ids: Vec<&str> = r.ranked.iter().map(|x| x.utterance_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(rank_for_class("c", std::slice::from_ref(&a), 0).is_err());
        assert!(rank_for_class("c", &[], 1).is_err());
        assert!(rank_for_class("c", &[a, vec![res("a", 0.1, (0, 1))]], 1).is_err());
    }

    #[test]
    fn rank_truncation_flags_short_corpus() {
        let list: Vec<_> = (0..300).map(|i| res(&format!("u{i:03}"), 0.5, (0, 1))).collect();
        let r = rank_for_class("c", &[list], DEFAULT_TOP_N).unwrap();
        assert_eq!(r.ranked.len(), 300);
        assert!(r.short);
    }

    #[test]
    fn dtw_identical_is_zero() {
        let a = vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 2.0]];
        assert!(dtw_align(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn dtw_single_frames() {
        // cosine 0.5 between [1,0] and [1, sqrt(3)]
        let c = dtw_align(&[vec![1.0, 0.0]], &[vec![1.0, 3f64.sqrt()]]).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dtw_reversed_orthogonal_pair() {
        // local distances: d(0,0)=1, d(0,1)=0, d(1,0)=0, d(1,1)=1.
        // Paths: diagonal = 2/2; via (0,1) = 2/3; via (1,0) = 2/3.
        // All share cost 2, so the longest (3 cells) is taken: 2/3.
        let q = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let t = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let c = dtw_align(&q, &t).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-12, "{c}");
    }

    #[test]
    fn dtw_zero_vector_is_error() {
        assert!(dtw_align(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn precision_counts_caption_hits() {
        let mut map = BTreeMap::new();
        for (id, text) in [("a", "a zebra"), ("b", "grass"), ("c", "two zebra here"), ("d", "x")] {
            map.insert(id.to_string(), vec![text.to_string()]);
        }
        let caps = Captions::from_map(map);
        let ranking = ClassRanking {
            class_label: "zebra".into(),
            ranked: ["a", "b", "c", "d"]
                .iter()
                .map(|id| RankedUtterance {
                    utterance_id: id.to_string(),
                    score: 1.0,
                    span: (0, 1),
                })
                .collect(),
            short: false,
        };
        assert_eq!(mining_precision(&ranking, &caps, "zebra").unwrap(), 0.5);
        let empty = ClassRanking {
            ranked: vec![],
            ..ranking.clone()
        };
        assert!(mining_precision(&empty, &caps, "zebra").is_err());
        let mut missing = ranking;
        missing.ranked[0].utterance_id = "nope".into();
        let err = mining_precision(&missing, &caps, "zebra").unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    fn small_scoring() -> impl Strategy<Value = Scoring> {
        // halves keep every partial sum exact
        (0i32..6, -6i32..1, -6i32..1).prop_map(|(m, x, g)| Scoring {
            match_score: m as f64 / 2.0,
            mismatch: x as f64 / 2.0,
            gap: g as f64 / 2.0,
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            q in prop::collection::vec(0u32..4, 1..=5),
            t in prop::collection::vec(0u32..4, 1..=8),
            s in small_scoring(),
        ) {
            prop_assert_eq!(fit_align(&q, &t, &s).unwrap(), brute_fit(&q, &t, &s));
        }

        #[test]
        fn appending_to_target_never_lowers_score(
            q in prop::collection::vec(0u32..4, 1..=5),
            t in prop::collection::vec(0u32..4, 1..=8),
            extra in 0u32..4,
        ) {
            let base = fit_align(&q, &t, &nw()).unwrap().score;
            let mut longer = t.clone();
            longer.push(extra);
            prop_assert!(fit_align(&q, &longer, &nw()).unwrap().score >= base);
        }

        #[test]
        fn ranking_ignores_example_order(
            scores in prop::collection::vec(prop::collection::vec(-4i32..4, 6), 1..4),
        ) {
            let lists: Vec<Vec<AlignmentResult>> = scores
                .iter()
                .enumerate()
                .map(|(k, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(u, &s)| res(&format!("u{u}"), s as f64 / 4.0, (k, k + 1)))
                        .collect()
                })
                .collect();
            let forward = rank_for_class("c", &lists, 4).unwrap();
            let mut rev = lists.clone();
            rev.reverse();
            prop_assert_eq!(forward, rank_for_class("c", &rev, 4).unwrap());
        }

        #[test]
        fn search_is_permutation_equivariant(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let coll: Vec<SegmentSequence> = (0..6)
                .map(|i| seg(&format!("u{i}"), &[(i % 3) as u32, 1, 2, (seed % 4) as u32 + 3]))
                .collect();
            let q = seg("q", &[1, 2, 3]);
            let base = search(&q, &coll, &nw(), Normalization::QueryLength).unwrap();
            let mut shuffled = coll.clone();
            shuffled.shuffle(&mut rng);
            let out = search(&q, &shuffled, &nw(), Normalization::QueryLength).unwrap();
            for (s, r) in shuffled.iter().zip(&out) {
                let orig = base.iter().find(|b| b.utterance_id == s.utterance_id).unwrap();
                prop_assert_eq!(orig, r);
            }
        }
    }
}
