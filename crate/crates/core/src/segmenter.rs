//! Action segmentation: per-frame transition probabilities from pose and
//! patch descriptors, ordered keyframe decoding, the segmentation loss,
//! and the phase-interval IoU metric.

use rand::Rng;

use crate::diff::{Conv1d, Linear, LrGroup, Mlp, Var};
use crate::error::AqaError;
use crate::posedata::LoadedItem;
use crate::{Graph, ParamStore, Real, Tensor};

/// Per-frame transition probabilities, `T x H`, entries strictly inside
/// (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionProbs {
    probs: Tensor,
}

impl TransitionProbs {
    pub fn new(probs: Tensor) -> Result<Self, AqaError> {
        if !probs.is_matrix() {
            return Err(AqaError::invalid(format!(
                "transition probabilities must be 2-d, got {:?}",
                probs.shape()
            )));
        }
        if let Some(&v) = probs.data().iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(AqaError::invalid(format!(
                "transition probability {v} outside (0, 1)"
            )));
        }
        Ok(TransitionProbs { probs })
    }

    pub fn frames(&self) -> usize {
        self.probs.rows()
    }

    pub fn heads(&self) -> usize {
        self.probs.cols()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.probs
    }
}

/// Ordered keyframes: `H` strictly increasing transition indices inside
/// `[1, end)` plus the end index (sequence length).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct KeyframeSet {
    transitions: Vec<usize>,
    end_index: usize,
}

impl KeyframeSet {
    pub fn new(transitions: Vec<usize>, end_index: usize) -> Result<Self, AqaError> {
        if transitions.is_empty() {
            return Err(AqaError::invalid("keyframe set has no transitions"));
        }
        let ordered = transitions.windows(2).all(|w| w[0] < w[1]);
        if !ordered || transitions[0] < 1 || *transitions.last().unwrap() >= end_index {
            return Err(AqaError::invalid(format!(
                "keyframes {transitions:?} must satisfy 1 <= k_1 < ... < k_H < {end_index}"
            )));
        }
        Ok(KeyframeSet {
            transitions,
            end_index,
        })
    }

    pub fn transitions(&self) -> &[usize] {
        &self.transitions
    }

    pub fn count(&self) -> usize {
        self.transitions.len()
    }

    pub fn end_index(&self) -> usize {
        self.end_index
    }

    /// Phase intervals `[start, end)` delimited by 0, the transitions,
    /// and the end index.
    pub fn phases(&self) -> Vec<(usize, usize)> {
        let mut bounds = Vec::with_capacity(self.transitions.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.transitions);
        bounds.push(self.end_index);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Per-frame embedding MLP over pose vector plus pooled patch descriptor,
/// a three-layer temporal conv stack (kernel 5, same padding), and a
/// per-frame linear head with one sigmoid output per transition.
#[derive(Debug, Clone)]
pub struct SegmenterModel {
    pub embed: Mlp,
    pub convs: Vec<Conv1d>,
    pub head: Linear,
    pub heads: usize,
}

impl SegmenterModel {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        input_dim: usize,
        hidden: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        let embed = Mlp::new(store, "segmenter.embed", &[input_dim, hidden], LrGroup::Other, rng);
        let convs = (0..3)
            .map(|i| {
                Conv1d::new(
                    store,
                    &format!("segmenter.conv{i}"),
                    hidden,
                    hidden,
                    5,
                    LrGroup::Other,
                    rng,
                )
            })
            .collect();
        let head = Linear::new(store, "segmenter.head", hidden, heads, LrGroup::Other, rng);
        SegmenterModel {
            embed,
            convs,
            head,
            heads,
        }
    }

    /// Graph forward: input `T x (pose_dim + descriptor_dim)`, output
    /// sigmoid probabilities `T x heads`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: Var,
    ) -> Result<Var, AqaError> {
        let mut h = self.embed.forward(g, store, input)?;
        h = g.tanh(h);
        for conv in &self.convs {
            h = conv.forward(g, store, h)?;
            h = g.tanh(h);
        }
        let logits = self.head.forward(g, store, h)?;
        Ok(g.sigmoid(logits))
    }
}

/// Stacks pose vectors and descriptors column-wise into the segmenter
/// input matrix.
pub fn segmenter_input(item: &LoadedItem) -> Tensor {
    let t = item.len();
    let pd = item.pose_vectors.cols();
    let dd = item.descriptors.cols();
    let mut data = Vec::with_capacity(t * (pd + dd));
    for ti in 0..t {
        data.extend_from_slice(&item.pose_vectors.data()[ti * pd..(ti + 1) * pd]);
        data.extend_from_slice(&item.descriptors.data()[ti * dd..(ti + 1) * dd]);
    }
    Tensor::matrix(t, pd + dd, data)
}

/// Runs the segmenter on one item (throwaway graph).
pub fn predict_transition_probs(
    model: &SegmenterModel,
    store: &ParamStore,
    item: &LoadedItem,
) -> Result<TransitionProbs, AqaError> {
    let t = item.len();
    if t < model.heads + 2 {
        return Err(AqaError::invalid(format!(
            "sequence length {t} too short for {} transitions",
            model.heads
        )));
    }
    let mut g = Graph::new();
    let input = g.input(segmenter_input(item));
    let probs = model.forward(&mut g, store, input)?;
    TransitionProbs::new(g.value(probs).clone())
}

/// Ordered maximum-likelihood keyframe decoding.
///
/// Maximizes `sum_h ln p[k_h, h]` subject to `1 <= k_1 < ... < k_H <= T-1`
/// by dynamic programming over (frame, transition); among maximizers the
/// lexicographically smallest tuple wins, which reduces to the per-row
/// argmax whenever that argmax is already strictly ordered.
pub fn decode_keyframes(probs: &TransitionProbs) -> KeyframeSet {
    let t = probs.frames();
    let h = probs.heads();
    assert!(t > h, "need more frames ({t}) than transitions ({h})");
    let lp = |ti: usize, hi: usize| probs.matrix().at(ti, hi).ln();

    // suffix tables over frames 1..t-1:
    // score[hi][ti] = best total for transitions hi.. with k_hi = ti
    // best[hi][ti]  = max over u >= ti of score[hi][u]
    let neg = f64::NEG_INFINITY;
    let mut score = vec![vec![neg; t]; h];
    let mut best = vec![vec![neg; t + 1]; h];
    for hi in (0..h).rev() {
        // k_hi must leave room for the remaining h-1-hi transitions
        let hi_max = t - 1 - (h - 1 - hi);
        for ti in (1..=hi_max).rev() {
            let tail = if hi + 1 < h { best[hi + 1][ti + 1] } else { 0.0 };
            score[hi][ti] = lp(ti, hi) + tail;
        }
        for ti in (1..t).rev() {
            best[hi][ti] = score[hi][ti].max(best[hi][ti + 1]);
        }
    }

    let mut out = Vec::with_capacity(h);
    let mut lo = 1usize;
    for hi in 0..h {
        let target = best[hi][lo];
        let mut pick = lo;
        while score[hi][pick] != target {
            pick += 1;
        }
        out.push(pick);
        lo = pick + 1;
    }
    KeyframeSet::new(out, t).expect("dp output is ordered and interior")
}

/// One-hot targets for the segmentation loss: row `k_h` of column `h` is
/// one.
pub fn transition_targets(gt: &KeyframeSet, frames: usize) -> Tensor {
    let h = gt.count();
    let mut targets = Tensor::zeros(vec![frames, h]);
    for (hi, &k) in gt.transitions().iter().enumerate() {
        *targets.at_mut(k, hi) = 1.0;
    }
    targets
}

/// Segmentation loss on a graph: summed BCE between predicted and one-hot
/// target transition distributions.
pub fn asm_loss_var(
    g: &mut Graph,
    probs: Var,
    gt: &KeyframeSet,
) -> Result<Var, AqaError> {
    let frames = g.value(probs).rows();
    if gt.end_index() != frames || *gt.transitions().last().unwrap() >= frames {
        return Err(AqaError::invalid(format!(
            "ground-truth keyframes {:?} do not fit {frames} frames",
            gt.transitions()
        )));
    }
    let targets = transition_targets(gt, frames);
    Ok(g.bce_sum(probs, &targets)?)
}

/// Plain-value segmentation loss.
pub fn asm_loss(probs: &TransitionProbs, gt: &KeyframeSet) -> Result<Real, AqaError> {
    let mut g = Graph::new();
    let p = g.input(probs.matrix().clone());
    let loss = asm_loss_var(&mut g, p, gt)?;
    Ok(g.value(loss).item())
}

/// Mean phase-interval IoU of one video plus per-threshold indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct AiouResult {
    pub mean_iou: Real,
    pub passes: Vec<(Real, bool)>,
}

/// Mean IoU over corresponding phase intervals given by two boundary
/// lists of equal length (each includes start and end).
pub fn mean_interval_iou(pred_bounds: &[usize], gt_bounds: &[usize]) -> Real {
    assert_eq!(pred_bounds.len(), gt_bounds.len(), "phase counts differ");
    let phases = pred_bounds.len() - 1;
    let mut total = 0.0;
    for i in 0..phases {
        let (a0, a1) = (pred_bounds[i], pred_bounds[i + 1]);
        let (b0, b1) = (gt_bounds[i], gt_bounds[i + 1]);
        let inter = a1.min(b1).saturating_sub(a0.max(b0));
        let union = a1.max(b1) - a0.min(b0);
        total += inter as Real / union as Real;
    }
    total / phases as Real
}

/// Phase-interval IoU between two keyframe sets over the same frame span.
pub fn aiou(pred: &KeyframeSet, gt: &KeyframeSet, thresholds: &[Real]) -> AiouResult {
    assert_eq!(pred.count(), gt.count(), "phase counts differ");
    assert_eq!(pred.end_index(), gt.end_index(), "frame spans differ");
    let bounds = |k: &KeyframeSet| {
        let mut b = vec![0usize];
        b.extend_from_slice(k.transitions());
        b.push(k.end_index());
        b
    };
    let mean_iou = mean_interval_iou(&bounds(pred), &bounds(gt));
    AiouResult {
        mean_iou,
        passes: thresholds.iter().map(|&t| (t, mean_iou >= t)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn probs_from(rows: usize, cols: usize, data: Vec<Real>) -> TransitionProbs {
        TransitionProbs::new(Tensor::matrix(rows, cols, data)).unwrap()
    }

    fn random_probs(t: usize, h: usize, rng: &mut StdRng) -> TransitionProbs {
        probs_from(t, h, (0..t * h).map(|_| rng.gen_range(0.01..0.99)).collect())
    }

    /// Exhaustive search over all ordered tuples, lexicographic tie-break.
    fn brute_force(probs: &TransitionProbs) -> Vec<usize> {
        let t = probs.frames();
        let h = probs.heads();
        let mut best_score = f64::NEG_INFINITY;
        let mut best: Vec<usize> = Vec::new();
        let mut idx: Vec<usize> = (1..=h).collect();
        loop {
            let score: f64 = idx
                .iter()
                .enumerate()
                .map(|(hi, &k)| probs.matrix().at(k, hi).ln())
                .sum();
            if score > best_score {
                best_score = score;
                best = idx.clone();
            }
            // next ordered tuple in lexicographic order
            let mut pos = h;
            loop {
                if pos == 0 {
                    return best;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] <= t - 1 - (h - 1 - pos) {
                    for i in pos + 1..h {
                        idx[i] = idx[i - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn ordered_peaks_decode_directly() {
        // 5 frames, 2 heads: peaks at t=1 (head 0) and t=3 (head 1)
        let mut data = vec![0.1; 10];
        data[1 * 2] = 0.9;
        data[3 * 2 + 1] = 0.9;
        let k = decode_keyframes(&probs_from(5, 2, data));
        assert_eq!(k.transitions(), &[1, 3]);
    }

    #[test]
    fn unordered_peaks_match_brute_force() {
        // head-0 peak after head-1 peak forces the DP to trade off
        let mut data = vec![0.1; 10];
        data[3 * 2] = 0.9;
        data[1 * 2 + 1] = 0.9;
        let p = probs_from(5, 2, data);
        assert_eq!(decode_keyframes(&p).transitions(), brute_force(&p).as_slice());
    }

    #[test]
    fn uniform_probs_take_smallest_indices() {
        let p = probs_from(6, 3, vec![0.5; 18]);
        assert_eq!(decode_keyframes(&p).transitions(), &[1, 2, 3]);
    }

    #[test]
    fn decoder_equals_exhaustive_search() {
        let mut rng = StdRng::seed_from_u64(123);
        for case in 0..100 {
            let h = 1 + case % 3;
            let t = (h + 2) + (case % 10);
            let p = random_probs(t.min(12), h, &mut rng);
            assert_eq!(
                decode_keyframes(&p).transitions(),
                brute_force(&p).as_slice(),
                "case {case}: T={t} H={h}"
            );
        }
    }

    #[test]
    fn asm_loss_closed_form_uniform() {
        // all predictions 0.5, T=4, H=2 -> loss = 8 ln 2
        let p = probs_from(4, 2, vec![0.5; 8]);
        let gt = KeyframeSet::new(vec![1, 2], 4).unwrap();
        let loss = asm_loss(&p, &gt).unwrap();
        assert!((loss - 8.0 * (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn asm_loss_near_zero_at_one_hot() {
        let gt = KeyframeSet::new(vec![1, 2], 4).unwrap();
        let eps = 1e-7;
        let mut data = vec![eps; 8];
        data[1 * 2] = 1.0 - eps;
        data[2 * 2 + 1] = 1.0 - eps;
        let p = probs_from(4, 2, data);
        let loss = asm_loss(&p, &gt).unwrap();
        assert!(loss <= 2.0 * 4.0 * 1e-6, "loss = {loss}");
    }

    #[test]
    fn asm_loss_matches_double_loop_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        let (t, h) = (9, 3);
        let p = random_probs(t, h, &mut rng);
        let gt = KeyframeSet::new(vec![2, 5, 7], t).unwrap();
        let loss = asm_loss(&p, &gt).unwrap();
        let mut oracle = 0.0;
        for hi in 0..h {
            for ti in 0..t {
                let target = if gt.transitions()[hi] == ti { 1.0 } else { 0.0 };
                let pv: f64 = p.matrix().at(ti, hi);
                oracle -= target * pv.ln() + (1.0 - target) * (1.0 - pv).ln();
            }
        }
        assert!((loss - oracle).abs() < 1e-10);
    }

    #[test]
    fn aiou_identical_sets_is_one() {
        let gt = KeyframeSet::new(vec![30, 60, 80], 100).unwrap();
        let r = aiou(&gt, &gt, &[0.5, 0.75]);
        assert_eq!(r.mean_iou, 1.0);
        assert!(r.passes.iter().all(|&(_, p)| p));
    }

    #[test]
    fn aiou_shifted_matches_interval_oracle() {
        let gt = KeyframeSet::new(vec![30, 60, 80], 100).unwrap();
        let pred = KeyframeSet::new(vec![35, 65, 85], 100).unwrap();
        // interval-arithmetic oracle, phases [0,30/35), [30,60/..), ...
        let phases_gt = [(0, 30), (30, 60), (60, 80), (80, 100)];
        let phases_pr = [(0, 35), (35, 65), (65, 85), (85, 100)];
        let mut acc = 0.0;
        for ((a0, a1), (b0, b1)) in phases_pr.iter().zip(phases_gt) {
            let inter = (*a1).min(b1) as f64 - (*a0).max(b0) as f64;
            let union = (*a1).max(b1) as f64 - (*a0).min(b0) as f64;
            acc += inter.max(0.0) / union;
        }
        let r = aiou(&pred, &gt, &[]);
        assert!((r.mean_iou - acc / 4.0).abs() < 1e-12);
    }

    #[test]
    fn aiou_adversarial_below_half() {
        let gt = KeyframeSet::new(vec![10, 20, 30], 40).unwrap();
        let pred = KeyframeSet::new(vec![29, 37, 39], 40).unwrap();
        let r = aiou(&pred, &gt, &[]);
        assert!(r.mean_iou < 0.5, "mean iou {}", r.mean_iou);
    }

    #[test]
    fn aiou_symmetric_and_shift_invariant() {
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..100 {
            let t = rng.gen_range(20..60);
            let pick = |rng: &mut StdRng| -> Vec<usize> {
                let a = rng.gen_range(1..t - 2);
                let b = rng.gen_range(a + 1..t - 1);
                vec![a, b]
            };
            let (ks, js) = (pick(&mut rng), pick(&mut rng));
            let a = KeyframeSet::new(ks.clone(), t).unwrap();
            let b = KeyframeSet::new(js.clone(), t).unwrap();
            let ab = aiou(&a, &b, &[]).mean_iou;
            let ba = aiou(&b, &a, &[]).mean_iou;
            assert!((ab - ba).abs() < 1e-12, "aiou must be symmetric");

            // shifting every boundary of both interval lists by the same
            // offset leaves the mean IoU unchanged
            let off = rng.gen_range(1..20usize);
            let shift = |ks: &[usize]| -> Vec<usize> {
                let mut v = vec![off];
                v.extend(ks.iter().map(|k| k + off));
                v.push(t + off);
                v
            };
            let plain = |ks: &[usize]| -> Vec<usize> {
                let mut v = vec![0];
                v.extend_from_slice(ks);
                v.push(t);
                v
            };
            let shifted = mean_interval_iou(&shift(&ks), &shift(&js));
            assert!((ab - shifted).abs() < 1e-12);
            assert!(
                (mean_interval_iou(&plain(&ks), &plain(&js)) - ab).abs() < 1e-12
            );
        }
    }

    #[test]
    fn keyframe_set_rejects_disorder() {
        assert!(KeyframeSet::new(vec![5, 5], 10).is_err());
        assert!(KeyframeSet::new(vec![0, 3], 10).is_err());
        assert!(KeyframeSet::new(vec![3, 10], 10).is_err());
    }
}
