//! Stage-1 frame reduction: a consecutive-difference pre-filter followed by
//! density-adaptive sampling inside change-point segments.

use serde::{Deserialize, Serialize};

use crate::changepoint::ChangePointSet;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::ingest::FrameRecord;
use crate::util::median;

pub const SAMPLING_MANIFEST: &str = "sampling.json";
pub const CHANGEPOINTS_MANIFEST: &str = "changepoints.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// On the 0-100 scale of max-normalized consecutive differences.
    pub diff_threshold: f64,
    pub batch_size: usize,
    pub delta: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            diff_threshold: 30.0,
            batch_size: 10,
            delta: 0.30,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.diff_threshold) {
            return Err(Error::Config(format!(
                "diff_threshold must be in [0, 100], got {}",
                self.diff_threshold
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        // Zero is allowed: every multi-frame batch then keeps two frames.
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(Error::Config(format!("delta must be >= 0, got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentBatch {
    pub segment: usize,
    #[serde(rename = "frames")]
    pub frame_indices: Vec<usize>,
    #[serde(rename = "med_s")]
    pub median_distance: f64,
    pub retained: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub diff_threshold: f64,
    pub batch_size: usize,
    pub delta: f64,
    pub survivors: Vec<usize>,
    pub batches: Vec<SegmentBatch>,
    pub retained: Vec<usize>,
}

/// `d_i = ‖f_i − f_{i−1}‖` with `d_0 = 0`.
pub fn consecutive_distances(embeddings: &[EmbeddingVector]) -> Vec<f64> {
    let mut out = Vec::with_capacity(embeddings.len());
    if !embeddings.is_empty() {
        out.push(0.0);
    }
    out.extend(embeddings.windows(2).map(|w| w[1].distance(&w[0])));
    out
}

fn max_normalize(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Consecutive distances scaled so the largest is 1. All zeros when nothing moves.
pub fn motion_scores(embeddings: &[EmbeddingVector]) -> Vec<f64> {
    max_normalize(&consecutive_distances(embeddings))
}

/// Writes `s1` for every frame and marks non-survivors. Returns survivor indices.
pub fn diff_filter(
    frames: &mut [FrameRecord],
    embeddings: &[EmbeddingVector],
    diff_threshold: f64,
) -> Result<Vec<usize>> {
    check_lengths(frames, embeddings)?;
    let scores = motion_scores(embeddings);
    // With no motion at all only the first frame is kept, whatever the threshold.
    let any_motion = scores.iter().any(|&v| v > 0.0);
    let mut survivors = Vec::new();
    for (i, (frame, &s1)) in frames.iter_mut().zip(&scores).enumerate() {
        frame.set_score("s1", s1)?;
        if i == 0 || (any_motion && 100.0 * s1 >= diff_threshold) {
            survivors.push(i);
        } else {
            frame.drop_at("s1");
        }
    }
    Ok(survivors)
}

fn check_lengths(frames: &[FrameRecord], embeddings: &[EmbeddingVector]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames to sample".into()));
    }
    if frames.len() != embeddings.len() {
        return Err(Error::InvalidInput(format!(
            "{} frames but {} embeddings",
            frames.len(),
            embeddings.len()
        )));
    }
    Ok(())
}

/// Median of all pairwise distances. Zero for a single point.
pub fn median_pairwise_distance(points: &[&EmbeddingVector]) -> f64 {
    let mut dists = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            dists.push(points[i].distance(points[j]));
        }
    }
    if dists.is_empty() {
        0.0
    } else {
        median(&dists)
    }
}

/// Positions (within `points`) of the medoid and, optionally, the point farthest
/// from it. Ties go to the lower position.
fn representatives(points: &[&EmbeddingVector], two: bool) -> Vec<usize> {
    let n = points.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = points[i].distance(points[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut medoid = 0;
    let mut best = f64::INFINITY;
    for (i, row) in dist.iter().enumerate() {
        let total: f64 = row.iter().sum();
        if total < best {
            best = total;
            medoid = i;
        }
    }
    if !two || n < 2 {
        return vec![medoid];
    }
    let mut far = None;
    let mut far_d = f64::NEG_INFINITY;
    for (j, &d) in dist[medoid].iter().enumerate() {
        if j != medoid && d > far_d {
            far_d = d;
            far = Some(j);
        }
    }
    let mut out = vec![medoid, far.expect("n >= 2")];
    out.sort_unstable();
    out
}

/// Batches survivors inside change-point segments and keeps one or two
/// representatives per batch. Writes `s2` for every survivor and marks the
/// rest as dropped.
pub fn adaptive_sample(
    frames: &mut [FrameRecord],
    survivors: &[usize],
    embeddings: &[EmbeddingVector],
    changepoints: &ChangePointSet,
    config: &SamplerConfig,
) -> Result<SamplingReport> {
    config.validate()?;
    check_lengths(frames, embeddings)?;
    let n = frames.len();
    if let Some(&t) = changepoints.indices.iter().find(|&&t| t == 0 || t >= n) {
        return Err(Error::InvalidInput(format!("change point {t} outside (0, {n})")));
    }
    if survivors.windows(2).any(|w| w[0] >= w[1]) || survivors.last().is_some_and(|&i| i >= n) {
        return Err(Error::InvalidInput("survivor indices must be increasing and in range".into()));
    }
    let raw = consecutive_distances(embeddings);

    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for &i in survivors {
        let seg = changepoints.segment_of(i);
        match groups.last_mut() {
            Some((s, members)) if *s == seg && members.len() < config.batch_size => members.push(i),
            _ => groups.push((seg, vec![i])),
        }
    }

    let mut batches = Vec::with_capacity(groups.len());
    let mut retained = Vec::new();
    for (segment, members) in groups {
        let points: Vec<&EmbeddingVector> = members.iter().map(|&i| &embeddings[i]).collect();
        let med = median_pairwise_distance(&points);
        let keep: Vec<usize> = representatives(&points, med >= config.delta)
            .into_iter()
            .map(|p| members[p])
            .collect();

        let batch_raw: Vec<f64> = members.iter().map(|&i| raw[i]).collect();
        let max = batch_raw.iter().copied().fold(0.0, f64::max);
        for (&i, &d) in members.iter().zip(&batch_raw) {
            let s2 = if members.len() == 1 || max <= 0.0 { 1.0 } else { d / max };
            frames[i].set_score("s2", s2)?;
            if !keep.contains(&i) {
                frames[i].drop_at("s2");
            }
        }
        retained.extend(keep.iter().copied());
        batches.push(SegmentBatch {
            segment,
            frame_indices: members,
            median_distance: med,
            retained: keep,
        });
    }
    Ok(SamplingReport {
        diff_threshold: config.diff_threshold,
        batch_size: config.batch_size,
        delta: config.delta,
        survivors: survivors.to_vec(),
        batches,
        retained,
    })
}

pub fn reduction_report(before: usize, after: usize) -> Result<f64> {
    if before == 0 || after > before {
        return Err(Error::InvalidInput(format!(
            "reduction needs before > 0 and after <= before, got {before}/{after}"
        )));
    }
    Ok(after as f64 / before as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Space;
    use proptest::prelude::*;

    fn frames(n: usize) -> Vec<FrameRecord> {
        (0..n)
            .map(|i| FrameRecord::new(i, i as f64, format!("frames/{i:06}.jpg")))
            .collect()
    }

    fn vecs(rows: &[&[f32]]) -> Vec<EmbeddingVector> {
        rows.iter()
            .map(|r| EmbeddingVector::new(r.to_vec(), Space::Frame).unwrap())
            .collect()
    }

    /// 1-d positions whose consecutive gaps are the given diffs.
    fn line(diffs: &[f32]) -> Vec<EmbeddingVector> {
        let mut x = 1.0;
        let mut out = vec![EmbeddingVector::new(vec![x], Space::Frame).unwrap()];
        for d in diffs {
            x += d;
            out.push(EmbeddingVector::new(vec![x], Space::Frame).unwrap());
        }
        out
    }

    fn no_changes() -> ChangePointSet {
        ChangePointSet {
            indices: vec![],
            penalty: 1.0,
            cost_total: 0.0,
        }
    }

    #[test]
    fn defaults() {
        let c = SamplerConfig::default();
        assert_eq!((c.diff_threshold, c.batch_size, c.delta), (30.0, 10, 0.30));
        let parsed: SamplerConfig = serde_json::from_str("{\"batch_size\": 4}").unwrap();
        assert_eq!(parsed.delta, 0.30);
        assert!(SamplerConfig { batch_size: 1, ..c }.validate().is_err());
        assert!(SamplerConfig { diff_threshold: 101.0, ..c }.validate().is_err());
        assert!(SamplerConfig { delta: -0.1, ..c }.validate().is_err());
    }

    #[test]
    fn diff_filter_example() {
        // diffs on the 0-100 scale: frame1=10, frame2=100, frame3=20
        let emb = line(&[1.0, 10.0, 2.0]);
        let mut f = frames(4);
        let s = diff_filter(&mut f, &emb, 30.0).unwrap();
        assert_eq!(s, vec![0, 2]);
        assert_eq!(f[1].dropped_at.as_deref(), Some("s1"));
        assert!(f[0].dropped_at.is_none());
        assert_eq!(f[0].score("s1"), Some(0.0));
        assert!((f[1].score("s1").unwrap() - 0.1).abs() < 1e-6);
        assert_eq!(f[2].score("s1"), Some(1.0));
    }

    #[test]
    fn diff_filter_edges() {
        let mut f = frames(1);
        assert_eq!(diff_filter(&mut f, &line(&[]), 30.0).unwrap(), vec![0]);

        let mut f = frames(4);
        assert_eq!(diff_filter(&mut f, &line(&[1.0, 10.0, 2.0]), 0.0).unwrap(), vec![0, 1, 2, 3]);

        let mut f = frames(5);
        let same = vecs(&[&[1.0f32, 0.0][..]; 5]);
        assert_eq!(diff_filter(&mut f, &same, 0.0).unwrap(), vec![0]);
        assert!(f[1..].iter().all(|r| r.score("s1") == Some(0.0)));

        let mut f = frames(3);
        assert!(diff_filter(&mut f, &line(&[1.0]), 30.0).is_err());
    }

    #[test]
    fn identical_batch_keeps_one() {
        let emb = vecs(&[&[0.5f32, 0.5][..]; 10]);
        let mut f = frames(10);
        let survivors: Vec<usize> = (0..10).collect();
        let r = adaptive_sample(&mut f, &survivors, &emb, &no_changes(), &SamplerConfig::default()).unwrap();
        assert_eq!(r.batches.len(), 1);
        assert_eq!(r.batches[0].median_distance, 0.0);
        assert_eq!(r.retained, vec![0]);
        assert!(f[1..].iter().all(|x| x.dropped_at.as_deref() == Some("s2")));
        assert!(f.iter().all(|x| x.score("s2") == Some(1.0)));
    }

    #[test]
    fn orthogonal_pair_keeps_both() {
        let emb = vecs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let mut f = frames(2);
        let r = adaptive_sample(&mut f, &[0, 1], &emb, &no_changes(), &SamplerConfig::default()).unwrap();
        assert!((r.batches[0].median_distance - 2f64.sqrt()).abs() < 1e-6);
        assert_eq!(r.retained, vec![0, 1]);
    }

    #[test]
    fn batches_respect_segments_and_size() {
        let rows: Vec<Vec<f32>> = (0..25).map(|i| vec![i as f32 * 0.01, 0.0]).collect();
        let emb: Vec<EmbeddingVector> = rows
            .into_iter()
            .map(|r| EmbeddingVector::new(if r[0] == 0.0 { vec![0.0, 1e-3] } else { r }, Space::Frame).unwrap())
            .collect();
        let mut f = frames(25);
        let cps = ChangePointSet {
            indices: vec![7],
            penalty: 1.0,
            cost_total: 0.0,
        };
        let cfg = SamplerConfig {
            batch_size: 4,
            ..Default::default()
        };
        let survivors: Vec<usize> = (0..25).collect();
        let r = adaptive_sample(&mut f, &survivors, &emb, &cps, &cfg).unwrap();
        let sizes: Vec<(usize, usize)> = r.batches.iter().map(|b| (b.segment, b.frame_indices.len())).collect();
        assert_eq!(sizes, vec![(0, 4), (0, 3), (1, 4), (1, 4), (1, 4), (1, 4), (1, 2)]);
        for b in &r.batches {
            assert!(b.retained.iter().all(|i| b.frame_indices.contains(i)));
        }
    }

    #[test]
    fn medoid_and_farthest() {
        // 1-d points 0, 1, 2, 10: medoid is 1 (sum 1+1+9=11 vs 2: 2+1+8=11, tie -> lower)
        let emb = line(&[1.0, 1.0, 8.0]);
        let pts: Vec<&EmbeddingVector> = emb.iter().collect();
        assert_eq!(representatives(&pts, false), vec![1]);
        assert_eq!(representatives(&pts, true), vec![1, 3]);
    }

    #[test]
    fn s2_normalized_within_batch() {
        let emb = line(&[2.0, 4.0, 1.0]);
        let mut f = frames(4);
        let cfg = SamplerConfig {
            batch_size: 2,
            ..Default::default()
        };
        adaptive_sample(&mut f, &[0, 1, 2, 3], &emb, &no_changes(), &cfg).unwrap();
        let s2: Vec<f64> = f.iter().map(|x| x.score("s2").unwrap()).collect();
        assert_eq!(s2, vec![0.0, 1.0, 1.0, 0.25]);
    }

    #[test]
    fn reduction() {
        assert_eq!(reduction_report(100, 4).unwrap(), 0.04);
        assert_eq!(reduction_report(1, 1).unwrap(), 1.0);
        assert!(reduction_report(0, 0).is_err());
        assert!(reduction_report(2, 3).is_err());
    }

    fn random_embeddings(values: &[(f32, f32)]) -> Vec<EmbeddingVector> {
        values
            .iter()
            .map(|&(a, b)| EmbeddingVector::new(vec![a, b, 1.0], Space::Frame).unwrap())
            .collect()
    }

    proptest! {
        #[test]
        fn raising_threshold_shrinks_survivors(
            pts in proptest::collection::vec((-1.0f32..1.0, -1.0f32..1.0), 1..40),
            t1 in 0.0f64..100.0,
            bump in 0.0f64..100.0,
        ) {
            let emb = random_embeddings(&pts);
            let t2 = (t1 + bump).min(100.0);
            let low = diff_filter(&mut frames(pts.len()), &emb, t1).unwrap();
            let high = diff_filter(&mut frames(pts.len()), &emb, t2).unwrap();
            prop_assert!(high.iter().all(|i| low.contains(i)));
        }

        #[test]
        fn retained_subset_and_delta_extremes(
            pts in proptest::collection::vec((-1.0f32..1.0, -1.0f32..1.0), 1..40),
            cut in proptest::collection::btree_set(1usize..39, 0..4),
            s in 2usize..12,
        ) {
            let n = pts.len();
            let emb = random_embeddings(&pts);
            let cps = ChangePointSet {
                indices: cut.into_iter().filter(|&t| t < n).collect(),
                penalty: 1.0,
                cost_total: 0.0,
            };
            let mut f = frames(n);
            let survivors = diff_filter(&mut f, &emb, 20.0).unwrap();
            for delta in [0.0, f64::INFINITY, 0.3] {
                let cfg = SamplerConfig { diff_threshold: 20.0, batch_size: s, delta };
                let mut g = f.clone();
                let r = adaptive_sample(&mut g, &survivors, &emb, &cps, &cfg).unwrap();
                prop_assert!(r.retained.iter().all(|i| survivors.contains(i)));
                prop_assert!(r.retained.windows(2).all(|w| w[0] < w[1]));
                for b in &r.batches {
                    let expect = if b.frame_indices.len() == 1 || delta == f64::INFINITY {
                        1
                    } else if delta == 0.0 {
                        2
                    } else if b.median_distance < delta { 1 } else { 2 };
                    prop_assert_eq!(b.retained.len(), expect);
                }
                let mut h = f.clone();
                let again = adaptive_sample(&mut h, &survivors, &emb, &cps, &cfg).unwrap();
                prop_assert_eq!(&again, &r);
                prop_assert_eq!(&h, &g);
            }
        }
    }
}
