//! Evaluation metric kit for models trained against genome records:
//! text similarity (edit distance, token overlap, cosine, BLEU),
//! detection quality (mean average precision), and classification
//! accuracy.

use std::collections::{BTreeMap, BTreeSet};

use crate::bbox::BBox;
use crate::error::MetricError;
use crate::quality::jaccard;

/// Levenshtein distance over Unicode scalar values, divided by the longer
/// length. Identical strings (including two empty strings) score 0; a
/// string against an empty one scores 1.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let max_len = a.len().max(b.len());
    if max_len == 0 {
        return 0.0;
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()] as f64 / max_len as f64
}

/// Jaccard overlap of whitespace-token sets. Two empty texts are
/// identical and score 1.
pub fn token_set_jaccard(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<&str> = a.split_whitespace().collect();
    let sb: BTreeSet<&str> = b.split_whitespace().collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

/// Cosine similarity of token count vectors. Either side empty (a zero
/// vector) scores 0.
pub fn token_cosine(a: &str, b: &str) -> f64 {
    fn count(s: &str) -> BTreeMap<&str, u64> {
        let mut m = BTreeMap::new();
        for t in s.split_whitespace() {
            *m.entry(t).or_insert(0) += 1;
        }
        m
    }
    let ca = count(a);
    let cb = count(b);
    if ca.is_empty() || cb.is_empty() {
        return 0.0;
    }
    let dot: u64 = ca
        .iter()
        .filter_map(|(t, &n)| cb.get(t).map(|&m| n * m))
        .sum();
    let norm = |m: &BTreeMap<&str, u64>| (m.values().map(|&n| n * n).sum::<u64>() as f64).sqrt();
    dot as f64 / (norm(&ca) * norm(&cb))
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> BTreeMap<&'a [&'a str], u64> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// BLEU with up to 4-gram precision, uniform weights over the orders
/// actually used (capped by the candidate length), a multiplicative
/// brevity penalty, and no smoothing: any order with zero matches scores
/// the whole candidate 0.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    if c.is_empty() {
        return 0.0;
    }
    let max_n = c.len().min(4);
    let mut log_sum = 0.0f64;
    for n in 1..=max_n {
        let cc = ngram_counts(&c, n);
        let rc = ngram_counts(&r, n);
        let total: u64 = cc.values().sum();
        let matched: u64 = cc
            .iter()
            .map(|(g, &cnt)| cnt.min(rc.get(g).copied().unwrap_or(0)))
            .sum();
        if matched == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln() / max_n as f64;
    }
    let bp = if c.len() < r.len() {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    } else {
        1.0
    };
    bp * log_sum.exp()
}

/// Fraction of positions where prediction equals ground truth. The two
/// slices must have equal length; an empty pair scores 0.
pub fn top1_accuracy<T: PartialEq>(preds: &[T], gts: &[T]) -> Result<f64, MetricError> {
    if preds.len() != gts.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            gts: gts.len(),
        });
    }
    if gts.is_empty() {
        return Ok(0.0);
    }
    let correct = preds.iter().zip(gts).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gts.len() as f64)
}

/// One predicted box with confidence.
#[derive(Debug, Clone)]
pub struct Detection {
    /// Image/document key; matching never crosses keys.
    pub image_id: String,
    pub class: u8,
    pub bbox: BBox,
    pub score: f64,
}

/// One ground-truth box.
#[derive(Debug, Clone)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub class: u8,
    pub bbox: BBox,
}

/// Overlap thresholds for detection matching, in percent: 50 to 95 in
/// steps of 5. Matching compares exact rational overlap against these
/// integers, so threshold equality is never subject to float rounding.
const IOU_THRESHOLDS_PCT: [u64; 10] = [50, 55, 60, 65, 70, 75, 80, 85, 90, 95];

/// Mean average precision: greedy score-descending matching per class and
/// image, 101-point interpolated average precision per overlap threshold,
/// averaged over thresholds, then over the classes present in the ground
/// truth. Classes that are only predicted do not contribute. An empty
/// ground truth scores 0.
pub fn mean_average_precision(preds: &[Detection], gts: &[GroundTruthBox]) -> f64 {
    let classes: BTreeSet<u8> = gts.iter().map(|g| g.class).collect();
    if classes.is_empty() {
        return 0.0;
    }
    let mut class_sum = 0.0f64;
    for &class in &classes {
        let mut class_preds: Vec<&Detection> = preds.iter().filter(|p| p.class == class).collect();
        // Score descending; deterministic tie-break on image and geometry.
        class_preds.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.image_id.cmp(&b.image_id))
                .then_with(|| a.bbox.cmp(&b.bbox))
        });
        let class_gts: Vec<(usize, &GroundTruthBox)> = gts
            .iter()
            .enumerate()
            .filter(|(_, g)| g.class == class)
            .collect();
        let total_gt = class_gts.len();

        let mut threshold_sum = 0.0f64;
        for &t_pct in &IOU_THRESHOLDS_PCT {
            let mut matched: BTreeSet<usize> = BTreeSet::new();
            let mut tp = 0usize;
            let mut fp = 0usize;
            // (recall, precision) after each prediction.
            let mut curve: Vec<(f64, f64)> = Vec::with_capacity(class_preds.len());
            for pred in &class_preds {
                let mut best: Option<(usize, crate::quality::Ratio)> = None;
                for &(gt_idx, gt) in &class_gts {
                    if matched.contains(&gt_idx) || gt.image_id != pred.image_id {
                        continue;
                    }
                    let overlap = jaccard(&pred.bbox, &gt.bbox);
                    let beats = match best {
                        None => true,
                        Some((_, cur)) => {
                            (overlap.num as u128) * (cur.den as u128)
                                > (cur.num as u128) * (overlap.den as u128)
                        }
                    };
                    if beats {
                        best = Some((gt_idx, overlap));
                    }
                }
                let is_tp = match best {
                    Some((gt_idx, overlap))
                        if (overlap.num as u128) * 100 >= (t_pct as u128) * (overlap.den as u128) =>
                    {
                        matched.insert(gt_idx);
                        true
                    }
                    _ => false,
                };
                if is_tp {
                    tp += 1;
                } else {
                    fp += 1;
                }
                curve.push((
                    tp as f64 / total_gt as f64,
                    tp as f64 / (tp + fp) as f64,
                ));
            }
            threshold_sum += interpolated_ap_101(&curve);
        }
        class_sum += threshold_sum / IOU_THRESHOLDS_PCT.len() as f64;
    }
    class_sum / classes.len() as f64
}

/// 101-point interpolated average precision: at each recall level r in
/// {0, 0.01, .., 1.00}, take the maximum precision among curve points
/// with recall >= r.
fn interpolated_ap_101(curve: &[(f64, f64)]) -> f64 {
    let mut sum = 0.0f64;
    for step in 0..=100u32 {
        let r = step as f64 / 100.0;
        let p = curve
            .iter()
            .filter(|(recall, _)| *recall >= r - 1e-12)
            .map(|(_, precision)| *precision)
            .fold(0.0f64, f64::max);
        sum += p;
    }
    sum / 101.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn edit_distance_known_values() {
        // kitten -> sitting: 3 edits, max length 7.
        assert!((normalized_edit_distance("kitten", "sitting") - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(normalized_edit_distance("", ""), 0.0);
        assert_eq!(normalized_edit_distance("abc", ""), 1.0);
        assert_eq!(normalized_edit_distance("abc", "abc"), 0.0);
        assert_eq!(normalized_edit_distance("ab", "ba"), 1.0);
    }

    #[test]
    fn edit_distance_counts_chars_not_bytes() {
        // One substitution over two chars, not over several bytes.
        assert!((normalized_edit_distance("π1", "x1") - 0.5).abs() < 1e-15);
    }

    #[test]
    fn token_jaccard_known_values() {
        assert_eq!(token_set_jaccard("", ""), 1.0);
        assert_eq!(token_set_jaccard("a b", ""), 0.0);
        assert!((token_set_jaccard("a b c", "b c d") - 2.0 / 4.0).abs() < 1e-15);
        assert_eq!(token_set_jaccard("x x x", "x"), 1.0, "set semantics");
    }

    #[test]
    fn cosine_known_values() {
        assert_eq!(token_cosine("", "a"), 0.0);
        assert_eq!(token_cosine("", ""), 0.0);
        assert!((token_cosine("a b", "a b") - 1.0).abs() < 1e-12);
        // Count sensitivity: "a a b" = (2,1), "a b b" = (1,2); cos = 4/5.
        assert!((token_cosine("a a b", "a b b") - 0.8).abs() < 1e-12);
        assert_eq!(token_cosine("a", "b"), 0.0);
        assert!((token_cosine("a a", "a") - 1.0).abs() < 1e-12, "proportional vectors");
    }

    #[test]
    fn bleu_brevity_penalty_fixture() {
        // Candidate is a strict prefix: all used orders have precision 1,
        // only the brevity penalty remains: exp(1 - 4/3).
        let v = bleu("the cat sat", "the cat sat down");
        assert!((v - 0.7165313105737893).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn bleu_perfect_and_empty() {
        assert!((bleu("a b c d e", "a b c d e") - 1.0).abs() < 1e-15);
        assert_eq!(bleu("", "a"), 0.0);
        assert_eq!(bleu("a", ""), 0.0);
    }

    #[test]
    fn bleu_no_smoothing_zeroes_on_missing_order() {
        // Shares unigrams but no bigram; candidate has 4 tokens so orders
        // up to 4 apply and the bigram miss zeroes everything.
        assert_eq!(bleu("a x b y", "a b c d"), 0.0);
    }

    #[test]
    fn bleu_orders_capped_by_candidate_length() {
        // Two-token candidate: only orders 1 and 2; both perfect, so only
        // the brevity penalty applies: exp(1 - 5/2).
        let v = bleu("a b", "a b c d e");
        assert!((v - (1.0f64 - 5.0 / 2.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn bleu_no_penalty_when_candidate_longer() {
        // Perfect 4-gram containment, candidate longer than reference:
        // precisions dip below 1 but no brevity penalty applies.
        let v = bleu("a b c d e", "a b c d");
        let expected = ((4.0f64 / 5.0).ln() / 4.0
            + (3.0f64 / 4.0).ln() / 4.0
            + (2.0f64 / 3.0).ln() / 4.0
            + (1.0f64 / 2.0).ln() / 4.0)
            .exp();
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn top1_accuracy_and_length_check() {
        assert_eq!(top1_accuracy(&[1, 2, 3], &[1, 9, 3]).unwrap(), 2.0 / 3.0);
        assert!(matches!(
            top1_accuracy(&[1], &[1, 2]),
            Err(MetricError::LengthMismatch { preds: 1, gts: 2 })
        ));
        assert_eq!(top1_accuracy::<u8>(&[], &[]).unwrap(), 0.0);
    }

    fn det(id: &str, class: u8, b: BBox, score: f64) -> Detection {
        Detection {
            image_id: id.to_string(),
            class,
            bbox: b,
            score,
        }
    }

    fn gt(id: &str, class: u8, b: BBox) -> GroundTruthBox {
        GroundTruthBox {
            image_id: id.to_string(),
            class,
            bbox: b,
        }
    }

    #[test]
    fn map_single_prediction_at_exact_iou_070() {
        // Overlap exactly 70/100: counts as a hit for thresholds 50..=70
        // (5 of 10) with AP 1 each, a miss above, so the mean is 0.5.
        let g = vec![gt("im", 3, BBox::new(0, 0, 0, 10, 10))];
        let p = vec![det("im", 3, BBox::new(0, 0, 0, 10, 7), 0.9)];
        let v = mean_average_precision(&p, &g);
        assert!((v - 0.5).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn map_perfect_and_absent() {
        let g = vec![gt("im", 1, BBox::new(0, 2, 2, 8, 8))];
        let p = vec![det("im", 1, BBox::new(0, 2, 2, 8, 8), 0.5)];
        assert!((mean_average_precision(&p, &g) - 1.0).abs() < 1e-12);
        assert_eq!(mean_average_precision(&p, &[]), 0.0, "no ground truth");
        assert_eq!(mean_average_precision(&[], &g), 0.0, "no predictions");
    }

    #[test]
    fn map_is_class_aware() {
        let g = vec![gt("im", 1, BBox::new(0, 0, 0, 10, 10))];
        let p = vec![det("im", 2, BBox::new(0, 0, 0, 10, 10), 0.9)];
        assert_eq!(mean_average_precision(&p, &g), 0.0);
    }

    #[test]
    fn map_respects_image_boundaries() {
        let g = vec![gt("a", 1, BBox::new(0, 0, 0, 10, 10))];
        let p = vec![det("b", 1, BBox::new(0, 0, 0, 10, 10), 0.9)];
        assert_eq!(mean_average_precision(&p, &g), 0.0);
    }

    #[test]
    fn map_greedy_score_order_costs_precision() {
        // The confident prediction misses; the weak one hits. Precision at
        // full recall is 1/2 and interpolation keeps it there.
        let g = vec![gt("im", 1, BBox::new(0, 0, 0, 10, 10))];
        let p = vec![
            det("im", 1, BBox::new(0, 50, 50, 60, 60), 0.9),
            det("im", 1, BBox::new(0, 0, 0, 10, 10), 0.1),
        ];
        let v = mean_average_precision(&p, &g);
        assert!((v - 0.5).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn map_averages_over_gt_classes() {
        // Class 1 detected perfectly, class 2 never predicted.
        let g = vec![
            gt("im", 1, BBox::new(0, 0, 0, 10, 10)),
            gt("im", 2, BBox::new(0, 20, 20, 30, 30)),
        ];
        let p = vec![det("im", 1, BBox::new(0, 0, 0, 10, 10), 0.9)];
        let v = mean_average_precision(&p, &g);
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn map_second_prediction_cannot_rematch_taken_gt() {
        let g = vec![gt("im", 1, BBox::new(0, 0, 0, 10, 10))];
        let p = vec![
            det("im", 1, BBox::new(0, 0, 0, 10, 10), 0.9),
            det("im", 1, BBox::new(0, 0, 0, 10, 10), 0.8),
        ];
        // Duplicate becomes a false positive; precision at recall 1 is 1
        // (achieved by the first point), so AP stays 1 at every threshold.
        let v = mean_average_precision(&p, &g);
        assert!((v - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn edit_distance_bounded_and_symmetric(a in ".{0,12}", b in ".{0,12}") {
            let d = normalized_edit_distance(&a, &b);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((normalized_edit_distance(&b, &a) - d).abs() < 1e-15);
            prop_assert_eq!(normalized_edit_distance(&a, &a), 0.0);
        }

        #[test]
        fn text_similarities_bounded(a in "[a-c ]{0,20}", b in "[a-c ]{0,20}") {
            for v in [token_set_jaccard(&a, &b), token_cosine(&a, &b), bleu(&a, &b)] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "{v}");
            }
        }

        #[test]
        fn bleu_self_is_one_or_zero_for_empty(a in "[a-c ]{0,20}") {
            let v = bleu(&a, &a);
            if a.split_whitespace().next().is_none() {
                prop_assert_eq!(v, 0.0);
            } else {
                prop_assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }
}
