//! Closed-set and open-set evaluation.
//!
//! Open-set metrics treat unknown units as the positive class and predict
//! "unknown" when `score ≥ t`. Thresholds range over the distinct scores
//! plus `±∞`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub unit_id: String,
    pub score: f64,
    pub is_unknown: bool,
}

/// Unknown-class scores of a set of evaluation units (points or samples).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreDump {
    pub records: Vec<ScoreRecord>,
}

impl ScoreDump {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(scores: &[f64], is_unknown: &[bool]) -> Result<Self> {
        if scores.len() != is_unknown.len() {
            return Err(Error::invalid(format!(
                "{} scores but {} flags",
                scores.len(),
                is_unknown.len()
            )));
        }
        let records = scores
            .iter()
            .zip(is_unknown)
            .enumerate()
            .map(|(i, (&score, &is_unknown))| ScoreRecord {
                unit_id: i.to_string(),
                score,
                is_unknown,
            })
            .collect();
        Ok(Self { records })
    }

    pub fn push(&mut self, unit_id: impl Into<String>, score: f64, is_unknown: bool) {
        self.records.push(ScoreRecord {
            unit_id: unit_id.into(),
            score,
            is_unknown,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Counts of (unknown, known) units.
    pub fn class_counts(&self) -> (usize, usize) {
        let u = self.records.iter().filter(|r| r.is_unknown).count();
        (u, self.records.len() - u)
    }

    pub fn has_both_classes(&self) -> bool {
        let (u, k) = self.class_counts();
        u > 0 && k > 0
    }

    /// Reads `unit_id,score,is_unknown` rows with a header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let records = rdr.deserialize().collect::<std::result::Result<Vec<ScoreRecord>, _>>()?;
        Ok(Self { records })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let (u, k) = self.class_counts();
        if u == 0 || k == 0 {
            return Err(Error::invalid(format!(
                "open-set metrics need both classes, got {u} unknown and {k} known units"
            )));
        }
        if let Some(r) = self.records.iter().find(|r| !r.score.is_finite()) {
            return Err(Error::invalid(format!("non-finite score for unit {}", r.unit_id)));
        }
        Ok(())
    }
}

/// True and false positive counts at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
}

/// Counts at `t = +∞` followed by each distinct score in descending order.
fn sweep(dump: &ScoreDump) -> Result<(Vec<Counts>, usize, usize)> {
    dump.validate()?;
    let (u, k) = dump.class_counts();
    let mut order: Vec<&ScoreRecord> = dump.records.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out = Vec::with_capacity(order.len() + 1);
    let mut c = Counts { tp: 0, fp: 0 };
    out.push(c);
    let mut i = 0;
    while i < order.len() {
        let s = order[i].score;
        while i < order.len() && order[i].score == s {
            if order[i].is_unknown {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
            i += 1;
        }
        out.push(c);
    }
    Ok((out, u, k))
}

/// Probability that a random unknown unit outscores a random known unit, ties counted ½.
pub fn auroc(dump: &ScoreDump) -> Result<f64> {
    let (counts, u, k) = sweep(dump)?;
    // Twice the Mann-Whitney statistic, kept integral.
    let mut twice = 0usize;
    for w in counts.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        let new_pos = cur.tp - prev.tp;
        let new_neg = cur.fp - prev.fp;
        twice += 2 * new_pos * prev.fp + new_pos * new_neg;
    }
    // Wins are counted for negatives above positives; flip to positives above negatives.
    let total = 2 * u * k;
    Ok((total - twice) as f64 / total as f64)
}

/// Average precision with unknown as the positive class.
pub fn aupr(dump: &ScoreDump) -> Result<f64> {
    let (counts, u, _) = sweep(dump)?;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for c in &counts[1..] {
        let recall = c.tp as f64 / u as f64;
        let precision = c.tp as f64 / (c.tp + c.fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Smallest FPR among thresholds whose TPR reaches `tpr_floor`.
pub fn fpr_at_tpr(dump: &ScoreDump, tpr_floor: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tpr_floor) {
        return Err(Error::invalid(format!("TPR floor {tpr_floor} outside [0, 1]")));
    }
    let (counts, u, k) = sweep(dump)?;
    let best = counts
        .iter()
        .filter(|c| c.tp as f64 / u as f64 >= tpr_floor)
        .map(|c| c.fp as f64 / k as f64)
        .fold(f64::INFINITY, f64::min);
    Ok(best)
}

/// `min_t ½(1 − TPR) + ½·FPR`.
pub fn detection_error(dump: &ScoreDump) -> Result<f64> {
    let (counts, u, k) = sweep(dump)?;
    Ok(counts
        .iter()
        .map(|c| 0.5 * (1.0 - c.tp as f64 / u as f64) + 0.5 * (c.fp as f64 / k as f64))
        .fold(f64::INFINITY, f64::min))
}

/// Mean IoU over classes `0..num_classes`, on points whose ground truth is one of them.
///
/// Classes absent from both prediction and ground truth are skipped.
pub fn miou(pred: &[usize], gt: &[usize], num_classes: usize) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!("{} predictions for {} labels", pred.len(), gt.len())));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut evaluated = 0;
    for (&p, &g) in pred.iter().zip(gt) {
        if g >= num_classes {
            continue;
        }
        evaluated += 1;
        if p == g {
            tp[g] += 1;
        } else {
            fn_[g] += 1;
            if p < num_classes {
                fp[p] += 1;
            }
        }
    }
    if evaluated == 0 {
        return Err(Error::invalid("no known-labeled points to evaluate"));
    }
    let ious: Vec<f64> = (0..num_classes)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .map(|c| tp[c] as f64 / (tp[c] + fp[c] + fn_[c]) as f64)
        .collect();
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    PerSample,
    PerClassMean,
}

/// Overall fraction correct, or the unweighted mean of per-class recalls.
pub fn accuracy(pred: &[usize], gt: &[usize], mode: AccuracyMode) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!("{} predictions for {} labels", pred.len(), gt.len())));
    }
    if gt.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    match mode {
        AccuracyMode::PerSample => {
            let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
            Ok(correct as f64 / gt.len() as f64)
        }
        AccuracyMode::PerClassMean => {
            let classes = gt.iter().max().map_or(0, |m| m + 1);
            let mut total = vec![0usize; classes];
            let mut correct = vec![0usize; classes];
            for (&p, &g) in pred.iter().zip(gt) {
                total[g] += 1;
                if p == g {
                    correct[g] += 1;
                }
            }
            let recalls: Vec<f64> = (0..classes)
                .filter(|&c| total[c] > 0)
                .map(|c| correct[c] as f64 / total[c] as f64)
                .collect();
            Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
        }
    }
}

/// Evaluation results; metrics that could not be computed are left out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aupr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fpr_at_95_tpr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_sample: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_class: Option<f64>,
}

impl MetricsReport {
    /// Fills the four open-set metrics from `dump`.
    pub fn with_open_set(mut self, dump: &ScoreDump) -> Result<Self> {
        self.auroc = Some(auroc(dump)?);
        self.aupr = Some(aupr(dump)?);
        self.fpr_at_95_tpr = Some(fpr_at_tpr(dump, 0.95)?);
        self.detection_error = Some(detection_error(dump)?);
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dump(known: &[f64], unknown: &[f64]) -> ScoreDump {
        let mut d = ScoreDump::new();
        for (i, &s) in known.iter().enumerate() {
            d.push(format!("k{i}"), s, false);
        }
        for (i, &s) in unknown.iter().enumerate() {
            d.push(format!("u{i}"), s, true);
        }
        d
    }

    fn random_dump(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> ScoreDump {
        let mut d = ScoreDump::new();
        for i in 0..n {
            let unknown = i == 0 || (i > 1 && rng.random_bool(0.4));
            let s = rng.random_range(0..levels) as f64 / levels as f64;
            d.push(i.to_string(), s, unknown);
        }
        d
    }

    // Exhaustive oracles: every threshold is re-evaluated against every unit.

    fn oracle_auroc(d: &ScoreDump) -> f64 {
        let (u, k) = d.class_counts();
        let mut twice = 0usize;
        for a in d.records.iter().filter(|r| r.is_unknown) {
            for b in d.records.iter().filter(|r| !r.is_unknown) {
                twice += if a.score > b.score {
                    2
                } else if a.score == b.score {
                    1
                } else {
                    0
                };
            }
        }
        twice as f64 / (2 * u * k) as f64
    }

    fn oracle_thresholds(d: &ScoreDump) -> Vec<f64> {
        let mut t: Vec<f64> = d.records.iter().map(|r| r.score).collect();
        t.push(f64::INFINITY);
        t.push(f64::NEG_INFINITY);
        t.sort_by(|a, b| b.total_cmp(a));
        t.dedup();
        t
    }

    fn oracle_counts(d: &ScoreDump, t: f64) -> (usize, usize) {
        let tp = d.records.iter().filter(|r| r.is_unknown && r.score >= t).count();
        let fp = d.records.iter().filter(|r| !r.is_unknown && r.score >= t).count();
        (tp, fp)
    }

    fn oracle_aupr(d: &ScoreDump) -> f64 {
        let (u, _) = d.class_counts();
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for t in oracle_thresholds(d) {
            let (tp, fp) = oracle_counts(d, t);
            if tp + fp == 0 {
                continue;
            }
            let recall = tp as f64 / u as f64;
            let precision = tp as f64 / (tp + fp) as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    fn oracle_fpr(d: &ScoreDump, floor: f64) -> f64 {
        let (u, k) = d.class_counts();
        let mut best = f64::INFINITY;
        for t in oracle_thresholds(d) {
            let (tp, fp) = oracle_counts(d, t);
            if tp as f64 / u as f64 >= floor {
                best = best.min(fp as f64 / k as f64);
            }
        }
        best
    }

    fn oracle_det(d: &ScoreDump) -> f64 {
        let (u, k) = d.class_counts();
        let mut best = f64::INFINITY;
        for t in oracle_thresholds(d) {
            let (tp, fp) = oracle_counts(d, t);
            best = best.min(0.5 * (1.0 - tp as f64 / u as f64) + 0.5 * (fp as f64 / k as f64));
        }
        best
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&dump(&[0.1, 0.2], &[0.8, 0.9])).unwrap(), 1.0);
        assert_eq!(auroc(&dump(&[0.5; 4], &[0.5; 3])).unwrap(), 0.5);
        assert_eq!(auroc(&dump(&[0.1, 0.4, 0.35], &[0.3, 0.8])).unwrap(), 4.0 / 6.0);
        assert!(matches!(auroc(&dump(&[0.1, 0.2], &[])), Err(Error::InvalidArgument(_))));
        assert!(matches!(auroc(&dump(&[], &[0.3])), Err(Error::InvalidArgument(_))));
        assert!(auroc(&dump(&[f64::NAN], &[0.3])).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&dump(&[0.1, 0.2], &[0.8, 0.9])).unwrap(), 1.0);
        // Unknowns ranked last: AP is the mean of j / (K + j).
        let k = 5;
        let u = 3;
        let d = dump(&[0.9, 0.8, 0.7, 0.6, 0.5], &[0.3, 0.2, 0.1]);
        let closed: f64 = (1..=u).map(|j| j as f64 / (k + j) as f64).sum::<f64>() / u as f64;
        assert!((aupr(&d).unwrap() - closed).abs() < 1e-15);
    }

    #[test]
    fn fpr_examples() {
        assert_eq!(fpr_at_tpr(&dump(&[0.1, 0.2], &[0.8, 0.9]), 0.95).unwrap(), 0.0);
        assert_eq!(fpr_at_tpr(&dump(&[0.2, 0.3, 0.4], &[0.15]), 0.95).unwrap(), 1.0);
        assert_eq!(fpr_at_tpr(&dump(&[0.1, 0.2, 0.3, 0.4], &[0.5]), 0.95).unwrap(), 0.0);
        assert!(fpr_at_tpr(&dump(&[0.1], &[0.5]), 1.5).is_err());
    }

    #[test]
    fn detection_error_examples() {
        assert_eq!(detection_error(&dump(&[0.1, 0.2], &[0.8, 0.9])).unwrap(), 0.0);
        assert_eq!(detection_error(&dump(&[0.4; 5], &[0.4; 5])).unwrap(), 0.5);
    }

    #[test]
    fn matches_sweep_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..300 {
            let n = rng.random_range(2..=200);
            let levels = if trial % 2 == 0 { 10 } else { 1_000_000 };
            let d = random_dump(&mut rng, n, levels);
            assert_eq!(auroc(&d).unwrap(), oracle_auroc(&d));
            assert_eq!(aupr(&d).unwrap(), oracle_aupr(&d));
            assert_eq!(fpr_at_tpr(&d, 0.95).unwrap(), oracle_fpr(&d, 0.95));
            assert_eq!(detection_error(&d).unwrap(), oracle_det(&d));
        }
    }

    #[test]
    fn swapping_flags_complements_auroc() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let d = random_dump(&mut rng, 40, 7);
            let mut swapped = d.clone();
            for r in &mut swapped.records {
                r.is_unknown = !r.is_unknown;
            }
            let a = auroc(&d).unwrap();
            assert!((auroc(&swapped).unwrap() - (1.0 - a)).abs() < 1e-15);
        }
    }

    #[test]
    fn miou_cases() {
        assert_eq!(miou(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), 1.0);
        assert_eq!(miou(&[1, 0, 1, 0], &[0, 1, 0, 1], 2).unwrap(), 0.0);
        // 10 points, 3 classes.
        let gt = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2];
        let pred = [0, 0, 1, 2, 1, 1, 0, 2, 2, 2];
        // class 0: tp 2, fp 1, fn 2 -> 2/5; class 1: tp 2, fp 1, fn 1 -> 2/4; class 2: tp 3, fp 1, fn 0 -> 3/4
        let expect = (2.0 / 5.0 + 2.0 / 4.0 + 3.0 / 4.0) / 3.0;
        assert!((miou(&pred, &gt, 3).unwrap() - expect).abs() < 1e-15);
        // Class 2 absent everywhere is skipped; unknown-labeled points are ignored.
        assert_eq!(miou(&[0, 1, 0], &[0, 1, 3], 3).unwrap(), 1.0);
        assert!(miou(&[], &[], 3).is_err());
        assert!(miou(&[0], &[5], 3).is_err());
    }

    #[test]
    fn miou_matches_confusion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = 100;
            let c = 4;
            let gt: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let mut conf = vec![vec![0usize; c]; c];
            for (&p, &g) in pred.iter().zip(&gt) {
                conf[g][p] += 1;
            }
            let mut ious = vec![];
            for k in 0..c {
                let tp = conf[k][k];
                let row: usize = conf[k].iter().sum();
                let col: usize = (0..c).map(|g| conf[g][k]).sum();
                if row + col > 0 {
                    ious.push(tp as f64 / (row + col - tp) as f64);
                }
            }
            let expect = ious.iter().sum::<f64>() / ious.len() as f64;
            assert!((miou(&pred, &gt, c).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2], AccuracyMode::PerSample).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2], AccuracyMode::PerClassMean).unwrap(), 1.0);
        let mut gt = vec![0; 9];
        gt.push(1);
        let pred = vec![0; 10];
        assert!((accuracy(&pred, &gt, AccuracyMode::PerSample).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(accuracy(&pred, &gt, AccuracyMode::PerClassMean).unwrap(), 0.5);
        assert!(accuracy(&[], &[], AccuracyMode::PerSample).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt: Vec<usize> = (0..200).map(|_| rng.random_range(0..5)).collect();
        let pred: Vec<usize> = (0..200).map(|_| rng.random_range(0..5)).collect();
        let correct = (0..200).filter(|&i| pred[i] == gt[i]).count();
        assert_eq!(accuracy(&pred, &gt, AccuracyMode::PerSample).unwrap(), correct as f64 / 200.0);
    }

    #[test]
    fn report_omits_missing_keys() {
        let r = MetricsReport {
            miou: Some(0.5),
            ..Default::default()
        };
        let json = r.to_json().unwrap();
        assert!(json.contains("miou"));
        assert!(!json.contains("auroc"));
        assert!(!json.contains("null"));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut d = ScoreDump::new();
        for i in 0..50 {
            d.push(format!("s{i}"), rng.random::<f64>(), i % 3 == 0);
        }
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("unit_id,score,is_unknown\n"));
        assert_eq!(ScoreDump::read_csv(&buf[..]).unwrap(), d);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn quantized() -> impl Strategy<Value = Vec<(u16, bool)>> {
            prop::collection::vec((0u16..1000, any::<bool>()), 2..120)
                .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
        }

        fn to_dump(v: &[(u16, bool)], f: impl Fn(f64) -> f64) -> ScoreDump {
            let scores: Vec<f64> = v.iter().map(|x| f(x.0 as f64 / 1000.0)).collect();
            let flags: Vec<bool> = v.iter().map(|x| x.1).collect();
            ScoreDump::from_parts(&scores, &flags).unwrap()
        }

        proptest! {
            #[test]
            fn invariant_under_monotone_maps(v in quantized(), slope in 0.1f64..10.0, shift in -5.0f64..5.0) {
                let base = to_dump(&v, |s| s);
                for d in [to_dump(&v, f64::exp), to_dump(&v, |s| slope * s + shift)] {
                    prop_assert_eq!(auroc(&d).unwrap(), auroc(&base).unwrap());
                    prop_assert_eq!(aupr(&d).unwrap(), aupr(&base).unwrap());
                    prop_assert_eq!(fpr_at_tpr(&d, 0.95).unwrap(), fpr_at_tpr(&base, 0.95).unwrap());
                    prop_assert_eq!(detection_error(&d).unwrap(), detection_error(&base).unwrap());
                }
            }

            #[test]
            fn bounds_hold(v in quantized()) {
                let d = to_dump(&v, |s| s);
                let de = detection_error(&d).unwrap();
                prop_assert!((0.0..=0.5).contains(&de));
                let f = fpr_at_tpr(&d, 0.95).unwrap();
                prop_assert!((0.0..=1.0).contains(&f));
                let a = auroc(&d).unwrap();
                prop_assert!((0.0..=1.0).contains(&a));
                let p = aupr(&d).unwrap();
                prop_assert!(p > 0.0 && p <= 1.0 + 1e-12);
            }
        }
    }
}
