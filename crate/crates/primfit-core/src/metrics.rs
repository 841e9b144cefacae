//! Clustering and segmentation metrics: NMI, pair-counting
//! precision/recall, class-averaged IoU, and a k-means baseline on raw
//! coordinates.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::mat3::Vec3;
use crate::rng;

fn entropy(counts: &BTreeMap<usize, usize>, n: f64) -> f64 {
    let mut h = 0.0;
    for &c in counts.values() {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * libm::log(p);
        }
    }
    h
}

/// Normalized mutual information between two partitions, normalized by the
/// arithmetic mean of the entropies. Symmetric; 1 for identical
/// partitions, 0 when either side carries no information about the other.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64, CoreError> {
    if a.len() != b.len() {
        return Err(CoreError::shape("nmi: partition lengths differ"));
    }
    if a.len() < 2 {
        return Err(CoreError::invalid("nmi: need at least 2 points"));
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b.iter()) {
        *ca.entry(x).or_insert(0) += 1;
        *cb.entry(y).or_insert(0) += 1;
        *joint.entry((x, y)).or_insert(0) += 1;
    }
    let ha = entropy(&ca, n);
    let hb = entropy(&cb, n);
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c as f64 / n;
        let px = ca[&x] as f64 / n;
        let py = cb[&y] as f64 / n;
        mi += pxy * libm::log(pxy / (px * py));
    }
    let denom = 0.5 * (ha + hb);
    if denom <= 0.0 {
        // both partitions trivial, hence identical
        return Ok(1.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Pair-counting precision and recall of a predicted clustering against
/// ground truth: of the point pairs co-clustered in the prediction, the
/// fraction sharing a ground-truth class (precision), and of the pairs
/// sharing a class, the fraction co-clustered (recall).
pub fn pair_precision_recall(pred: &[usize], gt: &[usize]) -> Result<(f64, f64), CoreError> {
    if pred.len() != gt.len() {
        return Err(CoreError::shape("pair_precision_recall: lengths differ"));
    }
    let n = pred.len();
    if n < 2 {
        return Err(CoreError::invalid("pair_precision_recall: need at least 2 points"));
    }
    let mut both = 0u64;
    let mut pred_pairs = 0u64;
    let mut gt_pairs = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            let same_pred = pred[i] == pred[j];
            let same_gt = gt[i] == gt[j];
            if same_pred {
                pred_pairs += 1;
            }
            if same_gt {
                gt_pairs += 1;
            }
            if same_pred && same_gt {
                both += 1;
            }
        }
    }
    let precision = if pred_pairs == 0 {
        1.0
    } else {
        both as f64 / pred_pairs as f64
    };
    let recall = if gt_pairs == 0 {
        1.0
    } else {
        both as f64 / gt_pairs as f64
    };
    Ok((precision, recall))
}

/// Segmentation report: per-class IoU over all points of all shapes and
/// the mean over classes present in the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    pub per_class: BTreeMap<usize, f64>,
    pub mean: f64,
}

/// Class-averaged intersection-over-union. `pred` and `gt` are pooled
/// point labels across shapes; classes absent from the ground truth are
/// ignored.
pub fn class_iou(pred: &[usize], gt: &[usize]) -> Result<IouReport, CoreError> {
    if pred.len() != gt.len() {
        return Err(CoreError::shape("class_iou: lengths differ"));
    }
    if pred.is_empty() {
        return Err(CoreError::empty("class_iou"));
    }
    let mut classes: Vec<usize> = gt.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class = BTreeMap::new();
    let mut total = 0.0;
    for &c in &classes {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            let in_p = p == c;
            let in_g = g == c;
            if in_p && in_g {
                inter += 1;
            }
            if in_p || in_g {
                union += 1;
            }
        }
        let iou = if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
        per_class.insert(c, iou);
        total += iou;
    }
    Ok(IouReport {
        mean: total / classes.len() as f64,
        per_class,
    })
}

/// Lloyd's k-means on raw 3-D coordinates with k-means++ seeding and a
/// 100-iteration cap. Deterministic for a fixed seed.
pub fn kmeans_points(points: &[Vec3], k: usize, seed: u64) -> Result<Vec<usize>, CoreError> {
    let n = points.len();
    if k < 1 {
        return Err(CoreError::invalid("kmeans: k must be at least 1"));
    }
    if k > n {
        return Err(CoreError::invalid("kmeans: k exceeds point count"));
    }
    let mut r = rng::stream(seed, "kmeans");

    // k-means++ seeding
    let mut centers: Vec<Vec3> = Vec::with_capacity(k);
    centers.push(points[rng::below(&mut r, n)]);
    let mut d2 = vec![0.0_f64; n];
    while centers.len() < k {
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut best = f64::INFINITY;
            for c in &centers {
                let d = crate::mat3::sub(p, c);
                best = best.min(crate::mat3::dot(&d, &d));
            }
            d2[i] = best;
            total += best;
        }
        if total <= 0.0 {
            // all remaining points coincide with a center
            centers.push(points[rng::below(&mut r, n)]);
            continue;
        }
        let mut target = rng::uniform(&mut r) * total;
        let mut chosen = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            target -= w;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        centers.push(points[chosen]);
    }

    let mut labels = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let d = crate::mat3::sub(p, c);
                let dist = crate::mat3::dot(&d, &d);
                if dist < best_d {
                    best_d = dist;
                    best = j;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0_f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            for c in 0..3 {
                sums[labels[i]][c] += p[c];
            }
            counts[labels[i]] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                for c in 0..3 {
                    centers[j][c] = sums[j][c] / counts[j] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(labels)
}
