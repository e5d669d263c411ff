//! Attention-flow analysis over exported attention tensors.
//!
//! A dump holds `a[l][h][i][j]`, the attention of query token `i` to key
//! token `j`, plus named half-open token segments. For a target segment the
//! per-key score is `ā_j = (1/H) Σ_{i∈target} Σ_h a[l][h][i][j]`, and the
//! share of a source segment is its summed score over the summed score of all
//! declared segments.
//!
//! File layout: the magic `ATTNDMP1`, a little-endian `u32` header length, a
//! UTF-8 JSON header `{layers, heads, seq_len, dtype: "f32", segments}`, then
//! the weights as little-endian `f32` in `[layer][head][query][key]` order.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"ATTNDMP1";
/// Allowed deviation of a row sum from 1.
pub const ROW_SUM_TOL: f64 = 1e-4;
/// Default target segments of a report.
pub const DEFAULT_TARGETS: [&str; 2] = ["reasoning", "planning"];
pub const RESERVED_SEGMENTS: [&str; 5] = ["image", "priors", "reasoning", "planning", "other_text"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttentionError {
    #[error("file does not start with the ATTNDMP1 magic")]
    BadMagic,
    #[error("file truncated: {0}")]
    Truncated(&'static str),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported dtype `{0}` (only f32)")]
    Dtype(String),
    #[error("file is {actual} bytes but the header implies {expected}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("segment `{name}` [{start}, {end}) is empty or exceeds seq_len {seq_len}")]
    SegmentRange {
        name: String,
        start: usize,
        end: usize,
        seq_len: usize,
    },
    #[error("segments `{0}` and `{1}` overlap")]
    SegmentOverlap(String, String),
    #[error("weight at layer {layer}, head {head}, query {query}, key {key} is {value} (byte {offset})")]
    BadWeight {
        layer: usize,
        head: usize,
        query: usize,
        key: usize,
        value: f32,
        offset: u64,
    },
    #[error("causal mask violated at layer {layer}, head {head}, query {query}, key {key} (byte {offset})")]
    CausalMask {
        layer: usize,
        head: usize,
        query: usize,
        key: usize,
        offset: u64,
    },
    #[error("row at layer {layer}, head {head}, query {query} sums to {sum} (row starts at byte {offset})")]
    RowSum {
        layer: usize,
        head: usize,
        query: usize,
        sum: f64,
        offset: u64,
    },
    #[error("layer {layer} out of range (dump has {layers})")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("target segment is empty")]
    EmptyTarget,
    #[error("unknown segment `{0}`")]
    UnknownSegment(String),
    #[error("token {0} receives attention but lies outside every declared segment")]
    Coverage(usize),
    #[error("target attends to nothing inside the declared segments")]
    ZeroDenominator,
    #[error("dump declares none of the target segments")]
    NoTargets,
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    layers: usize,
    heads: usize,
    seq_len: usize,
    dtype: String,
    segments: BTreeMap<String, [usize; 2]>,
}

/// Named, pairwise-disjoint, non-empty token ranges.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SegmentMap {
    segments: BTreeMap<String, Range<usize>>,
}

impl SegmentMap {
    pub fn new(
        segments: impl IntoIterator<Item = (String, Range<usize>)>,
        seq_len: usize,
    ) -> Result<Self, AttentionError> {
        let segments: BTreeMap<String, Range<usize>> = segments.into_iter().collect();
        for (name, r) in &segments {
            if r.start >= r.end || r.end > seq_len {
                return Err(AttentionError::SegmentRange {
                    name: name.clone(),
                    start: r.start,
                    end: r.end,
                    seq_len,
                });
            }
        }
        let mut sorted: Vec<(&String, &Range<usize>)> = segments.iter().collect();
        sorted.sort_by_key(|(_, r)| r.start);
        for w in sorted.windows(2) {
            if w[1].1.start < w[0].1.end {
                return Err(AttentionError::SegmentOverlap(w[0].0.clone(), w[1].0.clone()));
            }
        }
        Ok(Self { segments })
    }

    pub fn get(&self, name: &str) -> Option<&Range<usize>> {
        self.segments.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Range<usize>)> {
        self.segments.iter()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct AttentionDump {
    layers: usize,
    heads: usize,
    seq_len: usize,
    segments: SegmentMap,
    weights: Vec<f32>,
    /// File offset of the first weight, for error reporting.
    payload_offset: u64,
}

/// Equality of content; where the payload sat in a source file is ignored.
impl PartialEq for AttentionDump {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.heads == other.heads
            && self.seq_len == other.seq_len
            && self.segments == other.segments
            && self.weights == other.weights
    }
}

fn checked_len(layers: usize, heads: usize, seq_len: usize) -> Option<usize> {
    layers.checked_mul(heads)?.checked_mul(seq_len)?.checked_mul(seq_len)
}

impl AttentionDump {
    /// Builds a dump and checks shape and segments (not the weights).
    pub fn new(
        layers: usize,
        heads: usize,
        seq_len: usize,
        segments: SegmentMap,
        weights: Vec<f32>,
    ) -> Result<Self, AttentionError> {
        if layers == 0 || heads == 0 || seq_len == 0 {
            return Err(AttentionError::Header("layers, heads and seq_len must be positive".into()));
        }
        let expected = checked_len(layers, heads, seq_len)
            .ok_or_else(|| AttentionError::Header("tensor size overflows".into()))?;
        if weights.len() != expected {
            return Err(AttentionError::SizeMismatch {
                expected: expected as u64 * 4,
                actual: weights.len() as u64 * 4,
            });
        }
        for (name, r) in segments.iter() {
            if r.end > seq_len {
                return Err(AttentionError::SegmentRange {
                    name: name.clone(),
                    start: r.start,
                    end: r.end,
                    seq_len,
                });
            }
        }
        let mut dump = Self {
            layers,
            heads,
            seq_len,
            segments,
            weights,
            payload_offset: 0,
        };
        dump.payload_offset = 12 + dump.header_json().len() as u64;
        Ok(dump)
    }

    fn header_json(&self) -> Vec<u8> {
        let header = Header {
            layers: self.layers,
            heads: self.heads,
            seq_len: self.seq_len,
            dtype: "f32".into(),
            segments: self
                .segments
                .iter()
                .map(|(k, r)| (k.clone(), [r.start, r.end]))
                .collect(),
        };
        serde_json::to_vec(&header).expect("header serializes")
    }

    /// Byte offset of weight `(layer, head, query, key)` in the file.
    pub fn byte_offset(&self, layer: usize, head: usize, query: usize, key: usize) -> u64 {
        let s = self.seq_len as u64;
        let index = ((layer as u64 * self.heads as u64 + head as u64) * s + query as u64) * s + key as u64;
        self.payload_offset + 4 * index
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn segments(&self) -> &SegmentMap {
        &self.segments
    }

    #[inline]
    pub fn get(&self, layer: usize, head: usize, query: usize, key: usize) -> f32 {
        let s = self.seq_len;
        self.weights[((layer * self.heads + head) * s + query) * s + key]
    }

    fn row(&self, layer: usize, head: usize, query: usize) -> &[f32] {
        let s = self.seq_len;
        let start = ((layer * self.heads + head) * s + query) * s;
        &self.weights[start..start + s]
    }

    /// Parses the binary layout; checks structure only.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AttentionError> {
        if bytes.len() < 8 {
            return Err(AttentionError::Truncated("magic"));
        }
        if &bytes[..8] != MAGIC {
            return Err(AttentionError::BadMagic);
        }
        let len_bytes: [u8; 4] = bytes
            .get(8..12)
            .ok_or(AttentionError::Truncated("header length"))?
            .try_into()
            .expect("4 bytes");
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let offset = 12usize
            .checked_add(header_len)
            .ok_or(AttentionError::Truncated("header"))?;
        let header_bytes = bytes.get(12..offset).ok_or(AttentionError::Truncated("header"))?;
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| AttentionError::Header(e.to_string()))?;
        if header.dtype != "f32" {
            return Err(AttentionError::Dtype(header.dtype));
        }
        let n = checked_len(header.layers, header.heads, header.seq_len)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| AttentionError::Header("tensor size overflows".into()))?;
        let expected = (offset as u64).saturating_add(n as u64);
        if bytes.len() as u64 != expected {
            return Err(AttentionError::SizeMismatch {
                expected,
                actual: bytes.len() as u64,
            });
        }
        let segments = SegmentMap::new(
            header
                .segments
                .into_iter()
                .map(|(name, [a, b])| (name, a..b)),
            header.seq_len,
        )?;
        let weights = bytes[offset..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mut dump = Self::new(header.layers, header.heads, header.seq_len, segments, weights)?;
        dump.payload_offset = offset as u64;
        Ok(dump)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = self.header_json();
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.weights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// Weights are finite and non-negative, masked entries are exactly 0 and
    /// every row sums to 1 within [`ROW_SUM_TOL`].
    pub fn validate(&self) -> Result<(), AttentionError> {
        for layer in 0..self.layers {
            for head in 0..self.heads {
                for query in 0..self.seq_len {
                    let row = self.row(layer, head, query);
                    let mut sum = 0.0f64;
                    for (key, &value) in row.iter().enumerate() {
                        if !value.is_finite() || value < 0.0 {
                            return Err(AttentionError::BadWeight {
                                layer,
                                head,
                                query,
                                key,
                                value,
                                offset: self.byte_offset(layer, head, query, key),
                            });
                        }
                        if key > query && value != 0.0 {
                            return Err(AttentionError::CausalMask {
                                layer,
                                head,
                                query,
                                key,
                                offset: self.byte_offset(layer, head, query, key),
                            });
                        }
                        sum += value as f64;
                    }
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(AttentionError::RowSum {
                            layer,
                            head,
                            query,
                            sum,
                            offset: self.byte_offset(layer, head, query, 0),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn check_layer(&self, layer: usize) -> Result<(), AttentionError> {
        if layer >= self.layers {
            return Err(AttentionError::LayerOutOfRange {
                layer,
                layers: self.layers,
            });
        }
        Ok(())
    }
}

/// Parses and validates a dump file.
pub fn load_dump(path: impl AsRef<Path>) -> Result<AttentionDump, AttentionError> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| AttentionError::Io(e.to_string()))?;
    let dump = AttentionDump::from_bytes(&bytes)?;
    dump.validate()?;
    Ok(dump)
}

/// Head-averaged attention summed over the target queries, one value per key.
pub fn aggregate(dump: &AttentionDump, layer: usize, target: &Range<usize>) -> Result<Vec<f64>, AttentionError> {
    dump.check_layer(layer)?;
    if target.start >= target.end || target.end > dump.seq_len {
        return Err(AttentionError::EmptyTarget);
    }
    let mut scores = vec![0.0f64; dump.seq_len];
    for head in 0..dump.heads {
        for query in target.clone() {
            for (s, &w) in scores.iter_mut().zip(dump.row(layer, head, query)) {
                *s += w as f64;
            }
        }
    }
    let h = dump.heads as f64;
    scores.iter_mut().for_each(|s| *s /= h);
    Ok(scores)
}

fn check_coverage(scores: &[f64], sources: &[Range<usize>]) -> Result<(), AttentionError> {
    for (j, &s) in scores.iter().enumerate() {
        if s > 0.0 && !sources.iter().any(|r| r.contains(&j)) {
            return Err(AttentionError::Coverage(j));
        }
    }
    Ok(())
}

fn share(scores: &[f64], source: &Range<usize>, sources: &[Range<usize>]) -> Result<f64, AttentionError> {
    check_coverage(scores, sources)?;
    let denom: f64 = sources.iter().map(|r| scores[r.clone()].iter().sum::<f64>()).sum();
    if denom <= 0.0 {
        return Err(AttentionError::ZeroDenominator);
    }
    Ok(scores[source.clone()].iter().sum::<f64>() / denom)
}

/// Share of the target's attention that lands on `source`, relative to all
/// declared `sources`.
pub fn proportional(
    dump: &AttentionDump,
    layer: usize,
    source: &Range<usize>,
    target: &Range<usize>,
    sources: &[Range<usize>],
) -> Result<f64, AttentionError> {
    let scores = aggregate(dump, layer, target)?;
    share(&scores, source, sources)
}

/// Layers reported as shallow, middle and final.
pub fn bucket_layers(layers: usize) -> [(&'static str, usize); 3] {
    [("shallow", 0), ("middle", layers / 2), ("final", layers.saturating_sub(1))]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: String,
    pub layer: usize,
    pub target: String,
    /// Share per source segment, summing to 1.
    pub proportions: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub layers: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub segments: BTreeMap<String, [usize; 2]>,
    pub rows: Vec<BucketRow>,
}

/// Proportions for every bucket, present target and declared source.
pub fn build_report(dump: &AttentionDump, targets: &[&str]) -> Result<AttentionReport, AttentionError> {
    let names: Vec<&String> = dump.segments.iter().map(|(n, _)| n).collect();
    let ranges: Vec<Range<usize>> = dump.segments.iter().map(|(_, r)| r.clone()).collect();
    let present: Vec<(&str, &Range<usize>)> = targets
        .iter()
        .filter_map(|&t| dump.segments.get(t).map(|r| (t, r)))
        .collect();
    if present.is_empty() {
        return Err(AttentionError::NoTargets);
    }
    let mut rows = Vec::new();
    for (bucket, layer) in bucket_layers(dump.layers) {
        for &(target, range) in &present {
            let scores = aggregate(dump, layer, range)?;
            let proportions = names
                .iter()
                .zip(&ranges)
                .map(|(name, r)| share(&scores, r, &ranges).map(|g| ((*name).clone(), g)))
                .collect::<Result<_, _>>()?;
            rows.push(BucketRow {
                bucket: bucket.to_owned(),
                layer,
                target: target.to_owned(),
                proportions,
            });
        }
    }
    Ok(AttentionReport {
        layers: dump.layers,
        heads: dump.heads,
        seq_len: dump.seq_len,
        segments: dump
            .segments
            .iter()
            .map(|(k, r)| (k.clone(), [r.start, r.end]))
            .collect(),
        rows,
    })
}

/// Causal dump in which every query spreads its attention evenly over
/// itself and all earlier tokens.
pub fn uniform_causal_dump(layers: usize, heads: usize, seq_len: usize, segments: SegmentMap) -> AttentionDump {
    let mut w = Vec::with_capacity(layers * heads * seq_len * seq_len);
    for _ in 0..layers * heads {
        for i in 0..seq_len {
            for j in 0..seq_len {
                w.push(if j <= i { 1.0 / (i + 1) as f32 } else { 0.0 });
            }
        }
    }
    AttentionDump::new(layers, heads, seq_len, segments, w).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn segs(pairs: &[(&str, Range<usize>)], s: usize) -> SegmentMap {
        SegmentMap::new(pairs.iter().map(|(n, r)| (n.to_string(), r.clone())), s).unwrap()
    }

    fn dump_from_rows(heads: &[Vec<Vec<f32>>], segments: SegmentMap) -> AttentionDump {
        let s = heads[0].len();
        let w: Vec<f32> = heads.iter().flatten().flatten().copied().collect();
        AttentionDump::new(1, heads.len(), s, segments, w).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let rows = vec![vec![1.0, 0.0, 0.0], vec![0.5, 0.5, 0.0], vec![0.2, 0.3, 0.5]];
        let d = dump_from_rows(&[rows], segs(&[("all", 0..3)], 3));
        let a = aggregate(&d, 0, &(2..3)).unwrap();
        let expected = [0.2f32 as f64, 0.3f32 as f64, 0.5f32 as f64];
        assert_eq!(a, expected);

        let h1 = vec![vec![1.0, 0.0], vec![0.4, 0.6]];
        let h2 = vec![vec![1.0, 0.0], vec![0.6, 0.4]];
        let d = dump_from_rows(&[h1, h2], segs(&[("all", 0..2)], 2));
        let a = aggregate(&d, 0, &(1..2)).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-7 && (a[1] - 0.5).abs() < 1e-7);

        let rows = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let d = AttentionDump::new(1, 1, 2, segs(&[("all", 0..2)], 2), rows.concat()).unwrap();
        assert_eq!(aggregate(&d, 0, &(0..2)).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(aggregate(&d, 1, &(0..2)), Err(AttentionError::LayerOutOfRange { .. })));
        assert!(matches!(aggregate(&d, 0, &(1..1)), Err(AttentionError::EmptyTarget)));
    }

    #[test]
    fn uniform_shares_follow_segment_length() {
        let d = uniform_causal_dump(1, 1, 6, segs(&[("a", 0..2), ("b", 2..5), ("planning", 5..6)], 6));
        let g_a = proportional(&d, 0, &(0..2), &(5..6), &[0..2, 2..5, 5..6]).unwrap();
        assert!((g_a - 2.0 / 6.0).abs() < 1e-7);
        // five context tokens split 2/3, target excluded from the sources
        let d = uniform_causal_dump(1, 1, 5, segs(&[("a", 0..2), ("b", 2..5)], 5));
        let g = proportional(&d, 0, &(0..2), &(4..5), &[0..2, 2..5]).unwrap();
        assert!((g - 0.4).abs() < 1e-7);
    }

    #[test]
    fn coverage_and_denominator_errors() {
        let d = uniform_causal_dump(1, 1, 4, segs(&[("a", 0..2), ("planning", 3..4)], 4));
        assert_eq!(
            proportional(&d, 0, &(0..2), &(3..4), &[0..2, 3..4]),
            Err(AttentionError::Coverage(2))
        );
        assert!(matches!(build_report(&d, &DEFAULT_TARGETS), Err(AttentionError::Coverage(2))));
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let d = AttentionDump::new(1, 1, 2, segs(&[("a", 0..1)], 2), rows.concat()).unwrap();
        assert_eq!(proportional(&d, 0, &(0..1), &(0..1), &[0..1]), Ok(1.0));
        let rows = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let d = AttentionDump::new(1, 1, 2, segs(&[("a", 0..1), ("b", 1..2)], 2), rows.concat()).unwrap();
        assert_eq!(proportional(&d, 0, &(0..1), &(1..2), &[1..2]), Err(AttentionError::Coverage(0)));
    }

    #[test]
    fn segment_map_rules() {
        assert!(matches!(
            SegmentMap::new([("a".into(), 0..3), ("b".into(), 2..4)], 4),
            Err(AttentionError::SegmentOverlap(..))
        ));
        assert!(matches!(
            SegmentMap::new([("a".into(), 0..5)], 4),
            Err(AttentionError::SegmentRange { .. })
        ));
        assert!(SegmentMap::new([("a".into(), 2..2)], 4).is_err());
    }

    #[test]
    fn binary_round_trip_and_validation() {
        let d = uniform_causal_dump(2, 3, 5, segs(&[("priors", 0..2), ("planning", 2..5)], 5));
        let bytes = d.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = AttentionDump::from_bytes(&bytes).unwrap();
        assert_eq!(back, d);
        back.validate().unwrap();

        assert_eq!(AttentionDump::from_bytes(b"NOTADUMP\0\0\0\0"), Err(AttentionError::BadMagic));
        assert!(matches!(
            AttentionDump::from_bytes(&bytes[..bytes.len() - 1]),
            Err(AttentionError::SizeMismatch { .. })
        ));

        let mut masked = d.clone();
        masked.weights[1] = 0.0001;
        assert!(matches!(masked.validate(), Err(AttentionError::CausalMask { query: 0, key: 1, .. })));
        let mut off = d.clone();
        off.weights[0] = 0.9;
        assert!(matches!(off.validate(), Err(AttentionError::RowSum { .. })));
        let mut neg = d;
        neg.weights[0] = -1.0;
        assert!(matches!(neg.validate(), Err(AttentionError::BadWeight { .. })));
    }

    #[test]
    fn errors_point_at_the_offending_bytes() {
        let d = uniform_causal_dump(2, 2, 4, segs(&[("planning", 0..4)], 4));
        let mut bytes = d.to_bytes();
        // layer 1, head 0, query 2, key 3 is masked and must be zero
        let at = d.byte_offset(1, 0, 2, 3) as usize;
        bytes[at..at + 4].copy_from_slice(&0.5f32.to_le_bytes());
        let err = AttentionDump::from_bytes(&bytes).unwrap().validate().unwrap_err();
        assert_eq!(
            err,
            AttentionError::CausalMask { layer: 1, head: 0, query: 2, key: 3, offset: at as u64 }
        );
        assert!(err.to_string().contains(&format!("byte {at}")));
        assert_eq!(d.byte_offset(0, 0, 0, 0) as usize, bytes.len() - 4 * 2 * 2 * 4 * 4);
    }

    #[test]
    fn report_for_single_segment_is_all_ones() {
        let d = uniform_causal_dump(3, 2, 6, segs(&[("planning", 0..6)], 6));
        let r = build_report(&d, &DEFAULT_TARGETS).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert!(r.rows.iter().all(|row| row.proportions["planning"] == 1.0));
        assert_eq!(
            r.rows.iter().map(|row| row.layer).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn report_sees_priors_heavy_planning() {
        // planning queries put 90% of their mass on prior tokens
        let s = 8;
        let seg = segs(&[("priors", 0..2), ("reasoning", 2..5), ("planning", 5..8)], s);
        let mut w = Vec::new();
        for _layer in 0..4 {
            for i in 0..s {
                for j in 0..s {
                    let v = if i < 5 {
                        if j <= i { 1.0 / (i + 1) as f32 } else { 0.0 }
                    } else if j < 2 {
                        0.45
                    } else if j <= i {
                        0.1 / (i - 1) as f32
                    } else {
                        0.0
                    };
                    w.push(v);
                }
            }
        }
        let d = AttentionDump::new(4, 1, s, seg, w).unwrap();
        d.validate().unwrap();
        let r = build_report(&d, &DEFAULT_TARGETS).unwrap();
        for row in r.rows.iter().filter(|r| r.target == "planning") {
            assert!(row.proportions["priors"] >= 0.9 - 1e-6, "{row:?}");
        }
    }

    fn arb_dump() -> impl Strategy<Value = AttentionDump> {
        (1usize..=3, 1usize..=3, 2usize..=12).prop_flat_map(|(l, h, s)| {
            prop::collection::vec(0.01f32..1.0, l * h * s * s).prop_map(move |raw| {
                let mut w = vec![0.0f32; l * h * s * s];
                for r in 0..l * h * s {
                    let i = r % s;
                    let row = &raw[r * s..r * s + i + 1];
                    let sum: f32 = row.iter().sum();
                    for j in 0..=i {
                        w[r * s + j] = row[j] / sum;
                    }
                }
                let cut = s / 2;
                let seg = SegmentMap::new([("priors".into(), 0..cut), ("planning".into(), cut..s)], s).unwrap();
                AttentionDump::new(l, h, s, seg, w).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn shares_sum_to_one(d in arb_dump()) {
            d.validate().unwrap();
            let r = build_report(&d, &DEFAULT_TARGETS).unwrap();
            for row in &r.rows {
                let total: f64 = row.proportions.values().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn head_permutation_invariance(d in arb_dump()) {
            let (l, h, s) = (d.layers, d.heads, d.seq_len);
            let mut w = Vec::with_capacity(d.weights.len());
            for layer in 0..l {
                for head in (0..h).rev() {
                    for q in 0..s {
                        w.extend_from_slice(d.row(layer, head, q));
                    }
                }
            }
            let p = AttentionDump::new(l, h, s, d.segments.clone(), w).unwrap();
            let target = d.segments.get("planning").unwrap().clone();
            for layer in 0..l {
                let a = aggregate(&d, layer, &target).unwrap();
                let b = aggregate(&p, layer, &target).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn layer_scaling_invariance(d in arb_dump(), k in 0.1f32..10.0) {
            let mut scaled = d.clone();
            let block = d.heads * d.seq_len * d.seq_len;
            scaled.weights[..block].iter_mut().for_each(|w| *w *= k);
            let target = d.segments.get("planning").unwrap().clone();
            let src = d.segments.get("priors").unwrap().clone();
            let all = [src.clone(), target.clone()];
            let g0 = proportional(&d, 0, &src, &target, &all).unwrap();
            let g1 = proportional(&scaled, 0, &src, &target, &all).unwrap();
            prop_assert!((g0 - g1).abs() < 1e-5);
        }

        #[test]
        fn parse_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = AttentionDump::from_bytes(&bytes);
            let mut framed = MAGIC.to_vec();
            framed.extend_from_slice(&bytes);
            let _ = AttentionDump::from_bytes(&framed);
        }
    }
}
