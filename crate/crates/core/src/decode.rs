//! Heatmap decoding and localization metrics.
//!
//! Single-instance channels decode by argmax. Multi-instance channels go
//! through a median filter, greedy non-maximum suppression and a threshold;
//! each peak is located at the nearby raw maximum with log-parabola
//! sub-pixel refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::{LandmarkSet, Point};

/// Borrowed single heatmap channel, row-major.
#[derive(Debug, Clone, Copy)]
pub struct Channel<'a> {
    pub data: &'a [f64],
    pub height: usize,
    pub width: usize,
}

impl<'a> Channel<'a> {
    pub fn new(data: &'a [f64], height: usize, width: usize) -> Result<Self> {
        if data.len() != height * width || data.is_empty() {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width],
                actual: vec![data.len()],
            });
        }
        Ok(Self { data, height, width })
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Odd median filter size.
    pub median_kernel: usize,
    /// Peaks closer than this (Euclidean, pixels) to a stronger peak are suppressed.
    pub nms_window: f64,
    /// Minimum filtered peak value, in `(0, 1]` of the unit peak.
    pub threshold: f64,
    /// Correctness radius for precision/recall matching.
    pub match_radius: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            median_kernel: 7,
            nms_window: 10.0,
            threshold: 0.35,
            match_radius: 10.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.median_kernel % 2 == 0 {
            return Err(Error::invalid("median kernel must be odd"));
        }
        if !(self.nms_window >= 1.0) {
            return Err(Error::invalid("NMS window must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::invalid("threshold must lie in (0, 1]"));
        }
        if !(self.match_radius > 0.0) {
            return Err(Error::invalid("match radius must be positive"));
        }
        Ok(())
    }
}

/// Location of the maximum; ties resolve to the first in row-major order.
pub fn argmax_decode(ch: Channel<'_>) -> Point {
    let mut best = 0;
    for (i, &v) in ch.data.iter().enumerate() {
        if v > ch.data[best] || (ch.data[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    Point::new((best / ch.width) as f64, (best % ch.width) as f64)
}

/// Index reflected into `0..n` with the edge sample repeated (`d c b a | a b c d | d c b a`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// `k × k` median filter with reflected borders.
pub fn median_filter(ch: Channel<'_>, k: usize) -> Vec<f64> {
    let half = (k / 2) as isize;
    let mut window = Vec::with_capacity(k * k);
    let mut out = vec![0.0; ch.data.len()];
    for r in 0..ch.height {
        for c in 0..ch.width {
            window.clear();
            for dr in -half..=half {
                let rr = reflect(r as isize + dr, ch.height);
                for dc in -half..=half {
                    window.push(ch.at(rr, reflect(c as isize + dc, ch.width)));
                }
            }
            let mid = window.len() / 2;
            let (_, m, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
            out[r * ch.width + c] = *m;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub point: Point,
    /// Filtered peak value.
    pub score: f64,
}

/// Vertex offset of the parabola through `(-1, ln a)`, `(0, ln b)`, `(1, ln c)`.
///
/// Exact for a sampled Gaussian. Zero when a neighbour is missing or a value
/// is not positive, or when `b` is not a strict local maximum.
fn subpixel_offset(a: Option<f64>, b: f64, c: Option<f64>) -> f64 {
    let (Some(a), Some(c)) = (a, c) else { return 0.0 };
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return 0.0;
    }
    let (la, lb, lc) = (a.ln(), b.ln(), c.ln());
    let curvature = la - 2.0 * lb + lc;
    if !(curvature < 0.0) {
        return 0.0;
    }
    (0.5 * (la - lc) / curvature).clamp(-0.5, 0.5)
}

/// Decodes every instance in a channel, strongest first.
pub fn multi_decode(ch: Channel<'_>, cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let filtered = median_filter(ch, cfg.median_kernel);
    let (h, w) = (ch.height, ch.width);
    let f = |r: usize, c: usize| filtered[r * w + c];

    // Regional maxima above threshold: 8-connected plateaus of equal value
    // with no strictly greater neighbour. Median filtering flattens peaks and
    // shoulders alike, so single-pixel tests would keep shoulder plateaus.
    // Each plateau contributes the member nearest its centroid.
    let neighbours = |r: usize, c: usize| {
        (-1isize..=1)
            .flat_map(move |dr| (-1isize..=1).map(move |dc| (dr, dc)))
            .filter(|&d| d != (0, 0))
            .map(move |(dr, dc)| (r as isize + dr, c as isize + dc))
            .filter(move |&(rr, cc)| rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize)
            .map(|(rr, cc)| (rr as usize, cc as usize))
    };
    let mut visited = vec![false; h * w];
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    let mut stack = Vec::new();
    let mut plateau = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = f(r, c);
            if visited[r * w + c] || v < cfg.threshold {
                continue;
            }
            plateau.clear();
            stack.push((r, c));
            visited[r * w + c] = true;
            let mut regional = true;
            while let Some((pr, pc)) = stack.pop() {
                plateau.push((pr, pc));
                for (nr, nc) in neighbours(pr, pc) {
                    let nv = f(nr, nc);
                    if nv > v {
                        regional = false;
                    } else if nv == v && !visited[nr * w + nc] {
                        visited[nr * w + nc] = true;
                        stack.push((nr, nc));
                    }
                }
            }
            if !regional {
                continue;
            }
            let n = plateau.len() as f64;
            let mr = plateau.iter().map(|p| p.0 as f64).sum::<f64>() / n;
            let mc = plateau.iter().map(|p| p.1 as f64).sum::<f64>() / n;
            let centroid = Point::new(mr, mc);
            let &(br, bc) = plateau
                .iter()
                .min_by(|a, b| {
                    let da = Point::new(a.0 as f64, a.1 as f64).distance(&centroid);
                    let db = Point::new(b.0 as f64, b.1 as f64).distance(&centroid);
                    da.total_cmp(&db).then(a.cmp(b))
                })
                .expect("plateau has a member");
            candidates.push((br, bc, v));
        }
    }
    // Each candidate's centre is the raw maximum reached by steepest ascent
    // (at most half a window away), refined per axis by a parabola through
    // the log of the three values. Suppression compares these centres.
    let radius = cfg.nms_window / 2.0;
    let refine = |r: usize, c: usize| -> Point {
        let start = Point::new(r as f64, c as f64);
        let (mut pr, mut pc) = (r, c);
        loop {
            let next = neighbours(pr, pc)
                .filter(|&(nr, nc)| Point::new(nr as f64, nc as f64).distance(&start) <= radius)
                .fold((pr, pc), |b, n| if ch.at(n.0, n.1) > ch.at(b.0, b.1) { n } else { b });
            if next == (pr, pc) {
                break;
            }
            (pr, pc) = next;
        }
        let row = pr as f64
            + subpixel_offset(
                (pr > 0).then(|| ch.at(pr - 1, pc)),
                ch.at(pr, pc),
                (pr + 1 < h).then(|| ch.at(pr + 1, pc)),
            );
        let col = pc as f64
            + subpixel_offset(
                (pc > 0).then(|| ch.at(pr, pc - 1)),
                ch.at(pr, pc),
                (pc + 1 < w).then(|| ch.at(pr, pc + 1)),
            );
        Point::new(row, col)
    };

    // strongest first; row-major among equals
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut detections: Vec<Detection> = Vec::new();
    for (r, c, score) in candidates {
        let point = refine(r, c);
        if detections.iter().all(|d| d.point.distance(&point) >= cfg.nms_window) {
            detections.push(Detection { point, score });
        }
    }
    Ok(detections)
}

fn single_points(set: &LandmarkSet, what: &str) -> Result<Vec<Point>> {
    set.landmarks
        .iter()
        .enumerate()
        .map(|(l, inst)| match inst.as_slice() {
            [p] => Ok(*p),
            _ => Err(Error::invalid(format!(
                "{what} landmark {l} has {} instances; expected exactly one",
                inst.len()
            ))),
        })
        .collect()
}

fn per_landmark_errors(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<Vec<f64>> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::invalid(format!(
            "landmark counts differ: {} predicted, {} ground truth",
            pred.len(),
            gt.len()
        )));
    }
    let p = single_points(pred, "predicted")?;
    let g = single_points(gt, "ground-truth")?;
    Ok(p.iter().zip(&g).map(|(a, b)| a.distance(b)).collect())
}

/// Mean Euclidean distance over single-instance landmarks.
pub fn euclidean_error(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<f64> {
    let errs = per_landmark_errors(pred, gt)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Mean landmark error divided by the ground-truth inter-ocular distance.
pub fn nme(pred: &LandmarkSet, gt: &LandmarkSet, left_eye: usize, right_eye: usize) -> Result<f64> {
    let g = single_points(gt, "ground-truth")?;
    let (l, r) = (
        g.get(left_eye).ok_or_else(|| Error::invalid("left eye index out of range"))?,
        g.get(right_eye).ok_or_else(|| Error::invalid("right eye index out of range"))?,
    );
    let iod = l.distance(r);
    if !(iod > 0.0) {
        return Err(Error::invalid("eye landmarks coincide; inter-ocular distance is zero"));
    }
    Ok(euclidean_error(pred, gt)? / iod)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// Mean distance of matched pairs; `None` when nothing matched.
    pub mean_distance: Option<f64>,
    pub matched: usize,
    pub predicted: usize,
    pub expected: usize,
    /// Precision was defined by convention because there were no predictions.
    pub no_predictions: bool,
}

/// Greedy nearest-first one-to-one matching within `radius`.
pub fn precision_recall(pred: &[Point], gt: &[Point], radius: f64) -> Result<PrecisionRecall> {
    if !(radius > 0.0) {
        return Err(Error::invalid("match radius must be positive"));
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let d = p.distance(g);
            if d <= radius {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut total = 0.0;
    let mut matched = 0;
    for (d, i, j) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            total += d;
            matched += 1;
        }
    }
    let precision = if pred.is_empty() { 1.0 } else { matched as f64 / pred.len() as f64 };
    let recall = if gt.is_empty() { 1.0 } else { matched as f64 / gt.len() as f64 };
    Ok(PrecisionRecall {
        precision,
        recall,
        mean_distance: (matched > 0).then(|| total / matched as f64),
        matched,
        predicted: pred.len(),
        expected: gt.len(),
        no_predictions: pred.is_empty(),
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LandmarkMetrics {
    pub mean_distance: Option<f64>,
    pub nme: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Samples whose precision fell back to the empty-prediction convention.
    pub empty_prediction_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub per_landmark: Vec<LandmarkMetrics>,
    pub aggregate: LandmarkMetrics,
}

/// Metrics over single-instance predictions; NME when eye indices are given.
pub fn evaluate_single(
    preds: &[LandmarkSet],
    gts: &[LandmarkSet],
    eyes: Option<(usize, usize)>,
) -> Result<MetricReport> {
    if preds.len() != gts.len() || gts.is_empty() {
        return Err(Error::invalid("prediction and ground-truth sample counts differ"));
    }
    let l = gts[0].len();
    let mut dist = vec![0.0; l];
    let mut norm = vec![0.0; l];
    for (p, g) in preds.iter().zip(gts) {
        let errs = per_landmark_errors(p, g)?;
        if errs.len() != l {
            return Err(Error::invalid("landmark count varies across samples"));
        }
        let iod = match eyes {
            Some((a, b)) => {
                let pts = single_points(g, "ground-truth")?;
                let iod = pts[a].distance(&pts[b]);
                if !(iod > 0.0) {
                    return Err(Error::invalid("eye landmarks coincide"));
                }
                Some(iod)
            }
            None => None,
        };
        for (i, e) in errs.iter().enumerate() {
            dist[i] += e;
            if let Some(iod) = iod {
                norm[i] += e / iod;
            }
        }
    }
    let n = gts.len() as f64;
    let per_landmark: Vec<LandmarkMetrics> = (0..l)
        .map(|i| LandmarkMetrics {
            mean_distance: Some(dist[i] / n),
            nme: eyes.map(|_| norm[i] / n),
            ..LandmarkMetrics::default()
        })
        .collect();
    let aggregate = LandmarkMetrics {
        mean_distance: Some(dist.iter().sum::<f64>() / (n * l as f64)),
        nme: eyes.map(|_| norm.iter().sum::<f64>() / (n * l as f64)),
        ..LandmarkMetrics::default()
    };
    Ok(MetricReport {
        samples: gts.len(),
        per_landmark,
        aggregate,
    })
}

/// Metrics over multi-instance detections, pooled per landmark across samples.
pub fn evaluate_multi(preds: &[LandmarkSet], gts: &[LandmarkSet], radius: f64) -> Result<MetricReport> {
    if preds.len() != gts.len() || gts.is_empty() {
        return Err(Error::invalid("prediction and ground-truth sample counts differ"));
    }
    let l = gts[0].len();
    #[derive(Default, Clone)]
    struct Acc {
        matched: usize,
        predicted: usize,
        expected: usize,
        dist: f64,
        empty: usize,
    }
    let mut acc = vec![Acc::default(); l];
    for (p, g) in preds.iter().zip(gts) {
        if p.len() != l || g.len() != l {
            return Err(Error::invalid("landmark count varies across samples"));
        }
        for (i, a) in acc.iter_mut().enumerate() {
            let pr = precision_recall(p.instances(i), g.instances(i), radius)?;
            a.matched += pr.matched;
            a.predicted += pr.predicted;
            a.expected += pr.expected;
            a.dist += pr.mean_distance.unwrap_or(0.0) * pr.matched as f64;
            if pr.no_predictions {
                a.empty += 1;
            }
        }
    }
    let summarize = |a: &Acc| LandmarkMetrics {
        mean_distance: (a.matched > 0).then(|| a.dist / a.matched as f64),
        nme: None,
        precision: Some(if a.predicted == 0 { 1.0 } else { a.matched as f64 / a.predicted as f64 }),
        recall: Some(if a.expected == 0 { 1.0 } else { a.matched as f64 / a.expected as f64 }),
        empty_prediction_samples: a.empty,
    };
    let total = acc.iter().fold(Acc::default(), |t, a| Acc {
        matched: t.matched + a.matched,
        predicted: t.predicted + a.predicted,
        expected: t.expected + a.expected,
        dist: t.dist + a.dist,
        empty: t.empty + a.empty,
    });
    Ok(MetricReport {
        samples: gts.len(),
        per_landmark: acc.iter().map(summarize).collect(),
        aggregate: summarize(&total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{render_targets, TargetSpec};

    fn render(points: &[Point], sigma: f64, h: usize, w: usize) -> Vec<f64> {
        let spec = TargetSpec {
            sigmas: vec![sigma],
            height: h,
            width: w,
            normalize_by_mean: false,
        };
        render_targets(&LandmarkSet::new(vec![points.to_vec()]), &spec)
            .unwrap()
            .into_data()
    }

    #[test]
    fn argmax_examples() {
        let mut d = vec![0.0; 8 * 10];
        d[3 * 10 + 7] = 1.0;
        assert_eq!(argmax_decode(Channel::new(&d, 8, 10).unwrap()), Point::new(3.0, 7.0));

        let g = render(&[Point::new(10.0, 20.0)], 3.0, 32, 32);
        assert_eq!(argmax_decode(Channel::new(&g, 32, 32).unwrap()), Point::new(10.0, 20.0));

        let mut tie = vec![0.0; 4 * 6];
        tie[5] = 2.0;
        tie[2 * 6 + 1] = 2.0;
        assert_eq!(argmax_decode(Channel::new(&tie, 4, 6).unwrap()), Point::new(0.0, 5.0));
    }

    #[test]
    fn euclidean_examples() {
        let gt = LandmarkSet::single(&[Point::new(5.0, 5.0)]);
        assert_eq!(euclidean_error(&gt, &gt).unwrap(), 0.0);
        let off = LandmarkSet::single(&[Point::new(8.0, 9.0)]);
        assert_eq!(euclidean_error(&off, &gt).unwrap(), 5.0);
        let gt2 = LandmarkSet::single(&[Point::new(0.0, 0.0), Point::new(1.0, 1.0)]);
        let p2 = LandmarkSet::single(&[Point::new(3.0, 4.0), Point::new(1.0, 1.0)]);
        assert_eq!(euclidean_error(&p2, &gt2).unwrap(), 2.5);
        let multi = LandmarkSet::new(vec![vec![Point::new(0.0, 0.0); 2]]);
        assert!(euclidean_error(&multi, &gt).is_err());
    }

    #[test]
    fn nme_examples() {
        let gt = LandmarkSet::single(&[
            Point::new(10.0, 10.0),
            Point::new(10.0, 30.0),
            Point::new(20.0, 20.0),
            Point::new(30.0, 20.0),
        ]);
        assert_eq!(nme(&gt, &gt, 0, 1).unwrap(), 0.0);
        let all_off = LandmarkSet::single(
            &gt.landmarks.iter().map(|v| Point::new(v[0].row + 20.0, v[0].col)).collect::<Vec<_>>(),
        );
        assert!((nme(&all_off, &gt, 0, 1).unwrap() - 1.0).abs() < 1e-15);
        let mut one_off = gt.clone();
        one_off.landmarks[3][0].col += 20.0;
        assert!((nme(&one_off, &gt, 0, 1).unwrap() - 0.25).abs() < 1e-15);
        let mut same = gt.clone();
        same.landmarks[1] = same.landmarks[0].clone();
        assert!(nme(&gt, &same, 0, 1).is_err());
    }

    #[test]
    fn multi_decode_examples() {
        let zero = vec![0.0; 32 * 32];
        assert!(multi_decode(Channel::new(&zero, 32, 32).unwrap(), &DecodeConfig::default())
            .unwrap()
            .is_empty());

        let truth = [Point::new(32.0, 12.0), Point::new(32.0, 52.0)];
        let two = render(&truth, 4.0, 64, 64);
        let cfg = DecodeConfig {
            threshold: 0.5,
            ..DecodeConfig::default()
        };
        let dets = multi_decode(Channel::new(&two, 64, 64).unwrap(), &cfg).unwrap();
        assert_eq!(dets.len(), 2);
        for t in truth {
            assert!(dets.iter().any(|d| d.point.distance(&t) <= 1.0));
        }

        let close = render(&[Point::new(30.0, 30.0), Point::new(30.0, 35.0)], 4.0, 64, 64);
        let dets = multi_decode(Channel::new(&close, 64, 64).unwrap(), &cfg).unwrap();
        assert_eq!(dets.len(), 1);
    }

    #[test]
    fn median_filter_removes_isolated_spike_and_keeps_constants() {
        let mut d = vec![0.5; 9 * 9];
        d[4 * 9 + 4] = 100.0;
        let out = median_filter(Channel::new(&d, 9, 9).unwrap(), 3);
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn reflection_repeats_the_edge() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn precision_recall_examples() {
        let gt = [Point::new(5.0, 5.0)];
        let same = precision_recall(&gt, &gt, 2.0).unwrap();
        assert_eq!((same.precision, same.recall, same.mean_distance), (1.0, 1.0, Some(0.0)));

        let preds = [Point::new(5.0, 6.0), Point::new(20.0, 20.0)];
        let pr = precision_recall(&preds, &gt, 2.0).unwrap();
        assert_eq!((pr.precision, pr.recall, pr.mean_distance), (0.5, 1.0, Some(1.0)));

        let none = precision_recall(&[], &gt, 2.0).unwrap();
        assert_eq!((none.precision, none.recall, none.mean_distance), (1.0, 0.0, None));
        assert!(none.no_predictions);

        let both_empty = precision_recall(&[], &[], 2.0).unwrap();
        assert_eq!((both_empty.precision, both_empty.recall), (1.0, 1.0));
        assert!(precision_recall(&gt, &gt, 0.0).is_err());
    }
}
