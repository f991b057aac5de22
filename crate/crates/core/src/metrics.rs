//! Evaluation metrics and the tabular record emitted per evaluation point.
//!
//! Covers classification accuracy (deterministic argmax, ties to the lowest
//! index), corpus-level BLEU with unigrams and bigrams, a spectral-norm
//! probe over the network's weight matrices, the dormant-unit fraction, and
//! the CSV/JSONL record schema shared by the whole pipeline.

use crate::error::{CoreError, Result};
use crate::linalg::{top_singular, Matrix};
use crate::nn::MlpState;
use serde::{Deserialize, Serialize};

// ─── Accuracy ────────────────────────────────────────────────────────────

/// Index of the largest value; ties resolve to the lowest index so results
/// do not depend on scan order.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(CoreError::InvalidArgument(format!(
            "{} logit rows vs {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(CoreError::InvalidArgument("empty evaluation batch".into()));
    }
    let mut hits = 0usize;
    for (r, &y) in labels.iter().enumerate() {
        if argmax(logits.row(r)) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

// ─── BLEU (unigram + bigram) ─────────────────────────────────────────────

/// Corpus-level BLEU over n-gram orders 1 and 2 with clipped counts and the
/// brevity penalty `exp(min(0, 1 - r/c))`, where `r` and `c` are the total
/// reference and candidate lengths.  The score is
/// `BP * exp((ln p1 + ln p2) / 2)` and defined as 0 when either modified
/// precision is 0.  One reference per candidate.
pub fn bleu2(candidates: &[Vec<u32>], references: &[Vec<u32>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(CoreError::InvalidArgument(format!(
            "{} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(CoreError::InvalidArgument("empty corpus".into()));
    }
    let mut cand_total = 0usize;
    let mut ref_total = 0usize;
    // matched[n-1], possible[n-1] for n in {1, 2}.
    let mut matched = [0usize; 2];
    let mut possible = [0usize; 2];
    for (cand, reference) in candidates.iter().zip(references) {
        cand_total += cand.len();
        ref_total += reference.len();
        for n in 1..=2usize {
            if cand.len() < n {
                continue;
            }
            let cand_ngrams = count_ngrams(cand, n);
            let ref_ngrams = count_ngrams(reference, n);
            possible[n - 1] += cand.len() + 1 - n;
            for (gram, &count) in &cand_ngrams {
                let cap = ref_ngrams.get(gram).copied().unwrap_or(0);
                matched[n - 1] += count.min(cap);
            }
        }
    }
    if possible.contains(&0) || matched.contains(&0) {
        return Ok(0.0);
    }
    let p1 = matched[0] as f64 / possible[0] as f64;
    let p2 = matched[1] as f64 / possible[1] as f64;
    let bp = if cand_total >= ref_total {
        1.0
    } else {
        (1.0 - ref_total as f64 / cand_total as f64).exp()
    };
    Ok(bp * (0.5 * (p1.ln() + p2.ln())).exp())
}

fn count_ngrams(seq: &[u32], n: usize) -> std::collections::HashMap<&[u32], usize> {
    let mut map = std::collections::HashMap::new();
    if seq.len() + 1 > n {
        for w in seq.windows(n) {
            *map.entry(w).or_insert(0) += 1;
        }
    }
    map
}

// ─── Spectral-norm probe ─────────────────────────────────────────────────

/// Largest singular value across the network's weight matrices, computed by
/// power iteration with per-layer warm-started right vectors so repeated
/// probes over a slowly changing network converge in a few iterations.
#[derive(Debug, Clone, Default)]
pub struct SharpnessProbe {
    warm: Vec<Option<Vec<f64>>>,
}

impl SharpnessProbe {
    pub fn new() -> Self {
        Self::default()
    }

    /// Max spectral norm over all weight matrices.
    ///
    /// The delta-based stop stalls when the two leading singular values are
    /// nearly degenerate (common in a collapsing network): the vector keeps
    /// rotating inside the top subspace while the value estimate is already
    /// accurate.  After the tight passes, a relaxed measurement-tolerance
    /// pass accepts such cases; only a probe that cannot even reach 1e-6 is
    /// an error.
    pub fn measure(&mut self, state: &MlpState) -> Result<f64> {
        if self.warm.len() != state.layers.len() {
            self.warm = vec![None; state.layers.len()];
        }
        let mut max_sigma = 0.0f64;
        for (li, layer) in state.layers.iter().enumerate() {
            let mut res = top_singular(&layer.w, 100, 1e-9, self.warm[li].as_deref())?;
            let mut total_iters = res.iters;
            for (budget, tol) in [(500, 1e-9), (2000, 1e-6)] {
                if res.converged {
                    break;
                }
                res = top_singular(&layer.w, budget, tol, Some(&res.v))?;
                total_iters += res.iters;
            }
            if !res.converged {
                return Err(CoreError::NoConverge {
                    context: "spectral-norm probe",
                    iters: total_iters,
                });
            }
            max_sigma = max_sigma.max(res.sigma);
            self.warm[li] = Some(res.v);
        }
        Ok(max_sigma)
    }
}

// ─── Dormant units ───────────────────────────────────────────────────────

/// Fraction of hidden units whose normalized activity score is at or below
/// `tau`.  Per layer, a unit's score is its mean absolute activation
/// divided by the layer mean of those values; a layer with zero total
/// activity counts as entirely dormant.  The fraction pools all hidden
/// units across layers.
pub fn dormant_fraction(mean_abs: &[Vec<f64>], tau: f64) -> f64 {
    let mut dormant = 0usize;
    let mut total = 0usize;
    for layer in mean_abs {
        if layer.is_empty() {
            continue;
        }
        total += layer.len();
        let mean: f64 = layer.iter().sum::<f64>() / layer.len() as f64;
        if mean <= 0.0 {
            dormant += layer.len();
            continue;
        }
        for &a in layer {
            if a / mean <= tau {
                dormant += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        dormant as f64 / total as f64
    }
}

// ─── Metrics record ──────────────────────────────────────────────────────

/// One evaluation point.  `bleu2` is present only for sequence tasks;
/// `alpha` is the interpolation position of the stage that was just
/// trained (1.0 at a pure task boundary in abrupt mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub stage: usize,
    pub task: usize,
    pub alpha: f64,
    pub split: String,
    pub accuracy: f64,
    pub bleu2: Option<f64>,
    pub loss: f64,
    pub max_sigma: f64,
    pub dormant_frac: f64,
    pub weight_l2: f64,
    pub steps: u64,
    pub wall_ms: u64,
}

/// Exact column order of the CSV schema.
pub const CSV_HEADER: &str =
    "run_id,seed,stage,task,alpha,split,accuracy,bleu2,loss,max_sigma,dormant_frac,weight_l2,steps,wall_ms";

impl MetricsRecord {
    /// Serialize to one CSV row matching [`CSV_HEADER`].  Floats use the
    /// shortest representation that round-trips; a missing BLEU score is an
    /// empty field.
    pub fn to_csv_row(&self) -> String {
        let bleu = match self.bleu2 {
            Some(b) => format!("{b}"),
            None => String::new(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.seed,
            self.stage,
            self.task,
            self.alpha,
            self.split,
            self.accuracy,
            bleu,
            self.loss,
            self.max_sigma,
            self.dormant_frac,
            self.weight_l2,
            self.steps,
            self.wall_ms
        )
    }

    /// Parse one CSV row; `line_no` is used for error reporting.
    pub fn from_csv_line(line: &str, line_no: usize) -> Result<Self> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 14 {
            return Err(CoreError::Parse {
                line: line_no,
                msg: format!("expected 14 fields, found {}", parts.len()),
            });
        }
        fn num<T: std::str::FromStr>(s: &str, line: usize, field: &str) -> Result<T> {
            s.parse().map_err(|_| CoreError::Parse {
                line,
                msg: format!("bad {field}: {s:?}"),
            })
        }
        let bleu2 = if parts[7].is_empty() {
            None
        } else {
            Some(num(parts[7], line_no, "bleu2")?)
        };
        Ok(Self {
            run_id: parts[0].to_string(),
            seed: num(parts[1], line_no, "seed")?,
            stage: num(parts[2], line_no, "stage")?,
            task: num(parts[3], line_no, "task")?,
            alpha: num(parts[4], line_no, "alpha")?,
            split: parts[5].to_string(),
            accuracy: num(parts[6], line_no, "accuracy")?,
            bleu2,
            loss: num(parts[8], line_no, "loss")?,
            max_sigma: num(parts[9], line_no, "max_sigma")?,
            dormant_frac: num(parts[10], line_no, "dormant_frac")?,
            weight_l2: num(parts[11], line_no, "weight_l2")?,
            steps: num(parts[12], line_no, "steps")?,
            wall_ms: num(parts[13], line_no, "wall_ms")?,
        })
    }
}

// ─── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_relative_eq;

    #[test]
    fn argmax_breaks_ties_to_lowest_index() {
        assert_eq!(argmax(&[0.1, 0.9, 0.9, 0.2]), 1);
        assert_eq!(argmax(&[3.0, 3.0, 3.0]), 0);
        assert_eq!(argmax(&[-5.0, -2.0, -2.0]), 1);
        assert_eq!(argmax(&[7.0]), 0);
    }

    #[test]
    fn accuracy_counts_correct_rows() {
        let logits = Matrix::from_vec(
            3,
            3,
            vec![
                1.0, 2.0, 0.0, // argmax 1
                5.0, 1.0, 1.0, // argmax 0
                0.0, 0.0, 9.0, // argmax 2
            ],
        )
        .unwrap();
        assert_relative_eq!(
            accuracy(&logits, &[1, 0, 0]).unwrap(),
            2.0 / 3.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(accuracy(&logits, &[1, 0, 2]).unwrap(), 1.0);
        assert!(accuracy(&logits, &[0, 0]).is_err());
    }

    /// "a b c" against "a b d": p1 = 2/3, bigrams {ab,bc} vs {ab,bd} give
    /// p2 = 1/2, equal lengths so no brevity penalty, score sqrt(1/3).
    #[test]
    fn bleu2_hand_example() {
        let cand = vec![vec![0u32, 1, 2]];
        let refs = vec![vec![0u32, 1, 3]];
        let score = bleu2(&cand, &refs).unwrap();
        assert_relative_eq!(score, (1.0f64 / 3.0).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn bleu2_perfect_and_zero() {
        let cand = vec![vec![4u32, 5, 6, 7]];
        assert_relative_eq!(bleu2(&cand, &cand.clone()).unwrap(), 1.0);
        // No bigram overlap -> zero score.
        let refs = vec![vec![9u32, 4, 9, 5]];
        assert_eq!(bleu2(&cand, &refs).unwrap(), 0.0);
        // No unigram overlap either.
        let refs = vec![vec![8u32, 8, 8, 8]];
        assert_eq!(bleu2(&cand, &refs).unwrap(), 0.0);
    }

    #[test]
    fn bleu2_brevity_penalty() {
        // Candidate "a b" vs reference "a b c d": p1 = 1, p2 = 1, but the
        // candidate is half as long: BP = exp(1 - 4/2) = exp(-1).
        let cand = vec![vec![0u32, 1]];
        let refs = vec![vec![0u32, 1, 2, 3]];
        let score = bleu2(&cand, &refs).unwrap();
        assert_relative_eq!(score, (-1.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn bleu2_clipping_limits_repeats() {
        // Candidate "a a a a" vs reference "a a b a": the reference holds
        // three a's, so clipped unigram matches are 3 of 4 (p1 = 3/4); the
        // candidate's three "aa" bigrams clip against the single reference
        // "aa" (p2 = 1/3).  Equal lengths, so the score is sqrt(1/4).
        let cand = vec![vec![0u32, 0, 0, 0]];
        let refs = vec![vec![0u32, 0, 1, 0]];
        let score = bleu2(&cand, &refs).unwrap();
        assert_relative_eq!(score, 0.5, max_relative = 1e-12);
    }

    /// Independent brute-force oracle: recompute clipped-precision BLEU
    /// from scratch (counting by scanning, not hashing) on random corpora.
    #[test]
    fn bleu2_matches_brute_force_oracle() {
        fn oracle(cands: &[Vec<u32>], refs: &[Vec<u32>]) -> f64 {
            let mut matched = [0usize; 2];
            let mut possible = [0usize; 2];
            let (mut ctot, mut rtot) = (0usize, 0usize);
            for (c, r) in cands.iter().zip(refs) {
                ctot += c.len();
                rtot += r.len();
                for n in 1..=2usize {
                    if c.len() < n {
                        continue;
                    }
                    possible[n - 1] += c.len() - n + 1;
                    // For each distinct n-gram in the candidate, count
                    // occurrences in both by direct scanning.
                    let mut seen: Vec<&[u32]> = Vec::new();
                    for w in c.windows(n) {
                        if seen.contains(&w) {
                            continue;
                        }
                        seen.push(w);
                        let in_c = c.windows(n).filter(|x| *x == w).count();
                        let in_r = if r.len() < n {
                            0
                        } else {
                            r.windows(n).filter(|x| *x == w).count()
                        };
                        matched[n - 1] += in_c.min(in_r);
                    }
                }
            }
            if possible.contains(&0) || matched.contains(&0) {
                return 0.0;
            }
            let p1 = matched[0] as f64 / possible[0] as f64;
            let p2 = matched[1] as f64 / possible[1] as f64;
            let bp = if ctot >= rtot {
                1.0
            } else {
                (1.0 - rtot as f64 / ctot as f64).exp()
            };
            bp * (0.5 * (p1.ln() + p2.ln())).exp()
        }

        let mut rng = RngStream::new(2024, 7);
        for case in 0..100 {
            let sentences = 1 + rng.gen_range(4) as usize;
            let mut cands = Vec::new();
            let mut refs = Vec::new();
            for _ in 0..sentences {
                let cl = 1 + rng.gen_range(8) as usize;
                let rl = 1 + rng.gen_range(8) as usize;
                // Tiny vocabulary so overlaps and repeats are common.
                cands.push((0..cl).map(|_| rng.gen_range(4) as u32).collect::<Vec<u32>>());
                refs.push((0..rl).map(|_| rng.gen_range(4) as u32).collect::<Vec<u32>>());
            }
            let got = bleu2(&cands, &refs).unwrap();
            let want = oracle(&cands, &refs);
            assert!(
                (got - want).abs() <= 1e-12,
                "case {case}: got {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn sharpness_probe_matches_svd_oracle() {
        use crate::linalg::singular_values;
        use crate::nn::{init_mlp, MlpConfig};
        let cfg = MlpConfig::new(12, vec![9, 7], 4, true);
        let mut rng = RngStream::new(5, 5);
        let state = init_mlp(&cfg, &mut rng).unwrap();
        let mut probe = SharpnessProbe::new();
        let got = probe.measure(&state).unwrap();
        let mut want = 0.0f64;
        for layer in &state.layers {
            let svs = singular_values(&layer.w).unwrap();
            for s in svs {
                want = want.max(s);
            }
        }
        assert_relative_eq!(got, want, max_relative = 1e-8);
        // Second call exercises the warm path and must agree.
        let again = probe.measure(&state).unwrap();
        assert_relative_eq!(again, want, max_relative = 1e-8);
    }

    #[test]
    fn dormant_fraction_hand_cases() {
        // Layer of 4 with activities [0, 1, 1, 2]: mean 1.0; scores
        // [0, 1, 1, 2]; at tau = 0.1 only the zero unit is dormant.
        let acts = vec![vec![0.0, 1.0, 1.0, 2.0]];
        assert_relative_eq!(dormant_fraction(&acts, 0.1), 0.25);
        // tau = 1.0 catches three of four.
        assert_relative_eq!(dormant_fraction(&acts, 1.0), 0.75);
        // All-zero layer counts as fully dormant.
        let acts = vec![vec![0.0, 0.0], vec![1.0, 3.0]];
        assert_relative_eq!(dormant_fraction(&acts, 0.1), 0.5);
        // Pooling across layers of different widths.
        let acts = vec![vec![0.0, 2.0], vec![5.0, 5.0, 5.0, 5.0, 5.0, 5.0]];
        assert_relative_eq!(dormant_fraction(&acts, 0.1), 1.0 / 8.0);
    }

    fn sample_record() -> MetricsRecord {
        MetricsRecord {
            run_id: "random-label-abrupt".into(),
            seed: 3,
            stage: 17,
            task: 4,
            alpha: 0.25,
            split: "test".into(),
            accuracy: 0.8125,
            bleu2: None,
            loss: std::f64::consts::LN_2,
            max_sigma: 12.0625,
            dormant_frac: 0.0390625,
            weight_l2: 37.25,
            steps: 4800,
            wall_ms: 1234,
        }
    }

    #[test]
    fn csv_header_is_pinned() {
        assert_eq!(
            CSV_HEADER,
            "run_id,seed,stage,task,alpha,split,accuracy,bleu2,loss,max_sigma,dormant_frac,weight_l2,steps,wall_ms"
        );
    }

    #[test]
    fn csv_roundtrip_without_bleu() {
        let rec = sample_record();
        let row = rec.to_csv_row();
        // Empty bleu2 field between accuracy and loss.
        assert!(row.contains(",0.8125,,0.6931471805599453,"));
        let back = MetricsRecord::from_csv_line(&row, 2).unwrap();
        assert_eq!(rec, back);
    }

    #[test]
    fn csv_roundtrip_with_bleu_and_full_precision() {
        let mut rec = sample_record();
        rec.bleu2 = Some(1.0 / 3.0);
        rec.alpha = 0.1; // not exactly representable; Display must round-trip
        rec.loss = f64::MIN_POSITIVE;
        let row = rec.to_csv_row();
        let back = MetricsRecord::from_csv_line(&row, 1).unwrap();
        assert_eq!(rec, back);
    }

    #[test]
    fn csv_parse_errors_carry_line_numbers() {
        let err = MetricsRecord::from_csv_line("a,b,c", 41).unwrap_err();
        match err {
            CoreError::Parse { line, .. } => assert_eq!(line, 41),
            other => panic!("unexpected error {other:?}"),
        }
        let rec = sample_record();
        let row = rec.to_csv_row().replace("0.8125", "not-a-number");
        assert!(MetricsRecord::from_csv_line(&row, 7).is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let mut rec = sample_record();
        rec.bleu2 = Some(0.5773502691896258);
        let line = serde_json::to_string(&rec).unwrap();
        let back: MetricsRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(rec, back);
    }
}
