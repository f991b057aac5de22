//! Task generators for the four non-stationary streams, plus dataset
//! containers, fixed-window encodings for sequence tasks, and dataset I/O.
//!
//! The four families:
//! * **random labeling** — a fixed image pool is relabeled uniformly at
//!   random for every task, probing pure trainability;
//! * **pixel permuting** — a fresh input permutation is applied to the
//!   same image pool (train and test alike) for every task;
//! * **random sequence pairs** — arbitrary token sequences mapped to
//!   arbitrary token sequences, a memorization-only stream;
//! * **sliding substitution cipher** — outputs are a position-coupled
//!   substitution of the inputs, so the rule generalizes to unseen
//!   sequences; each task draws a new alphabet permutation.

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;

// ─── Dataset containers ──────────────────────────────────────────────────

/// Dataset-level targets: hard class labels or a full distribution per
/// sample (used by objective interpolation between neighboring tasks).
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Hard(Vec<usize>),
    Soft(Matrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Hard(v) => v.len(),
            Targets::Soft(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One-hot expansion of hard labels (soft targets pass through).
    pub fn to_soft(&self, classes: usize) -> Result<Matrix> {
        match self {
            Targets::Soft(m) => {
                if m.cols() != classes {
                    return Err(CoreError::InvalidArgument(format!(
                        "soft targets have {} columns, expected {classes}",
                        m.cols()
                    )));
                }
                Ok(m.clone())
            }
            Targets::Hard(labels) => {
                let mut m = Matrix::zeros(labels.len(), classes);
                for (r, &y) in labels.iter().enumerate() {
                    if y >= classes {
                        return Err(CoreError::LabelOutOfRange { label: y, classes });
                    }
                    m.set(r, y, 1.0);
                }
                Ok(m)
            }
        }
    }
}

/// Fixed-size input matrix plus targets for a classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    /// `n x dim` inputs, one row per sample.
    pub x: Matrix,
    pub targets: Targets,
    pub classes: usize,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }
}

/// Token-sequence dataset: parallel input/output sequences over a shared
/// vocabulary `0..vocab`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqDataset {
    pub inputs: Vec<Vec<u32>>,
    pub outputs: Vec<Vec<u32>>,
    pub vocab: usize,
}

impl SeqDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

// ─── Synthetic image pool ────────────────────────────────────────────────

/// Class prototype vectors, entries standard normal.
pub fn gen_class_means(classes: usize, dim: usize, rng: &mut RngStream) -> Matrix {
    let mut m = Matrix::zeros(classes, dim);
    for v in m.data_mut() {
        *v = rng.normal();
    }
    m
}

/// Samples around the given class prototypes: sample `j` belongs to class
/// `j % classes` (balanced), with isotropic Gaussian noise of the given
/// standard deviation.  Labels are the true classes.
pub fn gen_synthetic_images(
    means: &Matrix,
    n: usize,
    noise: f64,
    rng: &mut RngStream,
) -> ImageDataset {
    let classes = means.rows();
    let dim = means.cols();
    let mut x = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let c = j % classes;
        labels.push(c);
        let mean = means.row(c);
        let row = x.row_mut(j);
        for (v, mu) in row.iter_mut().zip(mean) {
            *v = noise.mul_add(rng.normal(), *mu);
        }
    }
    ImageDataset {
        x,
        targets: Targets::Hard(labels),
        classes,
    }
}

/// Train/test pair drawn around one shared set of class prototypes, so the
/// test split measures generalization of the same underlying structure.
pub fn gen_image_pair(
    classes: usize,
    dim: usize,
    n_train: usize,
    n_test: usize,
    noise: f64,
    rng: &mut RngStream,
) -> (ImageDataset, ImageDataset) {
    let means = gen_class_means(classes, dim, rng);
    let train = gen_synthetic_images(&means, n_train, noise, rng);
    let test = gen_synthetic_images(&means, n_test, noise, rng);
    (train, test)
}

// ─── Random labeling ─────────────────────────────────────────────────────

/// A fresh uniformly random label per sample; the image pool itself is
/// shared across tasks, so each task is a new arbitrary assignment.
pub fn random_label_task(n: usize, classes: usize, rng: &mut RngStream) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(classes as u64) as usize).collect()
}

// ─── Pixel permuting ─────────────────────────────────────────────────────

/// A uniformly random permutation of input coordinates for one task.
pub fn pixel_permutation(dim: usize, rng: &mut RngStream) -> Vec<usize> {
    rng.permutation(dim)
}

/// Rearranged inputs: `out[m][i] = x[m][perm[i]]`.  The same permutation
/// must be applied to the train and test splits of a task.
pub fn apply_pixel_permutation(x: &Matrix, perm: &[usize]) -> Result<Matrix> {
    if perm.len() != x.cols() {
        return Err(CoreError::InvalidArgument(format!(
            "permutation length {} vs {} input columns",
            perm.len(),
            x.cols()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for m in 0..x.rows() {
        let src = x.row(m);
        let dst = out.row_mut(m);
        for (i, &p) in perm.iter().enumerate() {
            dst[i] = src[p];
        }
    }
    Ok(out)
}

// ─── Random sequence pairs ───────────────────────────────────────────────

/// `n` pairs of uniformly random sequences: inputs of length `p`, outputs
/// of length `q`, tokens drawn from `0..vocab`.  There is no structure to
/// generalize; the stream probes memorization capacity.
pub fn random_seq2seq_task(
    vocab: usize,
    p: usize,
    q: usize,
    n: usize,
    rng: &mut RngStream,
) -> SeqDataset {
    let mut inputs = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    for _ in 0..n {
        inputs.push((0..p).map(|_| rng.gen_range(vocab as u64) as u32).collect());
        outputs.push((0..q).map(|_| rng.gen_range(vocab as u64) as u32).collect());
    }
    SeqDataset {
        inputs,
        outputs,
        vocab,
    }
}

// ─── Sliding substitution cipher ─────────────────────────────────────────

/// Encode one sequence under the position-coupled substitution rule: with
/// alphabet permutation `perm` (and its inverse), output token `i` is
/// `inv[(perm[x_i] + perm[x_{i-1}]) mod V]`, where the contribution of the
/// predecessor is defined as 0 at the first position.
pub fn cipher_encode(input: &[u32], perm: &[u32], inv: &[u32]) -> Vec<u32> {
    let v = perm.len() as u32;
    let mut out = Vec::with_capacity(input.len());
    let mut prev = 0u32;
    for &t in input {
        let cur = perm[t as usize];
        out.push(inv[((cur + prev) % v) as usize]);
        prev = cur;
    }
    out
}

/// Inverse lookup table of a permutation over `0..len`.
pub fn invert_perm(perm: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p as usize] = i as u32;
    }
    inv
}

/// One cipher task: a fresh alphabet permutation, `n_train` random input
/// sequences of length `len`, and `n_test` further inputs disjoint from
/// the train inputs (and from each other), each encoded under the rule.
/// Also returns the permutation so tests can verify the construction.
pub fn bigram_cipher_task(
    vocab: usize,
    len: usize,
    n_train: usize,
    n_test: usize,
    rng: &mut RngStream,
) -> Result<(SeqDataset, SeqDataset, Vec<u32>)> {
    if vocab < 2 || len == 0 {
        return Err(CoreError::InvalidArgument(
            "cipher needs vocab >= 2 and positive length".into(),
        ));
    }
    let space: f64 = (vocab as f64).powi(len as i32);
    if (n_train + n_test) as f64 > 0.5 * space {
        return Err(CoreError::InvalidArgument(format!(
            "cannot draw {} distinct sequences from a space of {space}",
            n_train + n_test
        )));
    }
    let perm: Vec<u32> = rng.permutation(vocab).into_iter().map(|v| v as u32).collect();
    let inv = invert_perm(&perm);
    let mut seen = std::collections::HashSet::new();
    let mut draw = |rng: &mut RngStream| -> Vec<u32> {
        loop {
            let s: Vec<u32> = (0..len).map(|_| rng.gen_range(vocab as u64) as u32).collect();
            if seen.insert(s.clone()) {
                return s;
            }
        }
    };
    let mut make = |n: usize, rng: &mut RngStream| -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
        let mut ins = Vec::with_capacity(n);
        let mut outs = Vec::with_capacity(n);
        for _ in 0..n {
            let s = draw(rng);
            outs.push(cipher_encode(&s, &perm, &inv));
            ins.push(s);
        }
        (ins, outs)
    };
    let (tr_in, tr_out) = make(n_train, rng);
    let (te_in, te_out) = make(n_test, rng);
    Ok((
        SeqDataset {
            inputs: tr_in,
            outputs: tr_out,
            vocab,
        },
        SeqDataset {
            inputs: te_in,
            outputs: te_out,
            vocab,
        },
        perm,
    ))
}

// ─── Fixed-window encodings ──────────────────────────────────────────────

/// Per-position window encoding for the cipher stream: each output token
/// becomes one training row with features
/// `[one-hot(x_i) | one-hot(x_{i-1}) | start-flag]` (dimension
/// `2*vocab + 1`); at the first position the predecessor block is zero and
/// the start flag is 1.  Returns the row matrix and per-row labels.
pub fn encode_cipher_windows(ds: &SeqDataset) -> Result<(Matrix, Vec<usize>)> {
    let vocab = ds.vocab;
    let dim = 2 * vocab + 1;
    let rows: usize = ds.inputs.iter().map(|s| s.len()).sum();
    let mut x = Matrix::zeros(rows, dim);
    let mut labels = Vec::with_capacity(rows);
    let mut r = 0usize;
    for (input, output) in ds.inputs.iter().zip(&ds.outputs) {
        if input.len() != output.len() {
            return Err(CoreError::InvalidArgument(
                "cipher sequences must have equal input/output length".into(),
            ));
        }
        for i in 0..input.len() {
            let row = x.row_mut(r);
            let cur = input[i] as usize;
            if cur >= vocab {
                return Err(CoreError::LabelOutOfRange {
                    label: cur,
                    classes: vocab,
                });
            }
            row[cur] = 1.0;
            if i == 0 {
                row[2 * vocab] = 1.0;
            } else {
                let prev = input[i - 1] as usize;
                row[vocab + prev] = 1.0;
            }
            labels.push(output[i] as usize);
            r += 1;
        }
    }
    Ok((x, labels))
}

/// Whole-sequence encoding for the random-pairs stream: each output
/// position becomes one row with features
/// `[flattened one-hot of the p input tokens | one-hot(position)]`
/// (dimension `p*vocab + q`); the label is the output token at that
/// position.  Rows are emitted sequence-major, position-minor.
pub fn encode_seq2seq(ds: &SeqDataset, p: usize, q: usize) -> Result<(Matrix, Vec<usize>)> {
    let vocab = ds.vocab;
    let dim = p * vocab + q;
    let rows = ds.len() * q;
    let mut x = Matrix::zeros(rows, dim);
    let mut labels = Vec::with_capacity(rows);
    let mut r = 0usize;
    for (input, output) in ds.inputs.iter().zip(&ds.outputs) {
        if input.len() != p || output.len() != q {
            return Err(CoreError::InvalidArgument(format!(
                "expected {p}-token inputs and {q}-token outputs, found {} and {}",
                input.len(),
                output.len()
            )));
        }
        for pos in 0..q {
            let row = x.row_mut(r);
            for (slot, &tok) in input.iter().enumerate() {
                if tok as usize >= vocab {
                    return Err(CoreError::LabelOutOfRange {
                        label: tok as usize,
                        classes: vocab,
                    });
                }
                row[slot * vocab + tok as usize] = 1.0;
            }
            row[p * vocab + pos] = 1.0;
            labels.push(output[pos] as usize);
            r += 1;
        }
    }
    Ok((x, labels))
}

/// Regroup flat per-row predictions back into sequences of the given
/// lengths (inverse of the row emission order of the encoders).
pub fn decode_window_preds(preds: &[usize], lens: &[usize]) -> Result<Vec<Vec<u32>>> {
    let total: usize = lens.iter().sum();
    if preds.len() != total {
        return Err(CoreError::InvalidArgument(format!(
            "{} predictions for {total} sequence positions",
            preds.len()
        )));
    }
    let mut out = Vec::with_capacity(lens.len());
    let mut i = 0usize;
    for &l in lens {
        out.push(preds[i..i + l].iter().map(|&p| p as u32).collect());
        i += l;
    }
    Ok(out)
}

// ─── IDX binary loading ──────────────────────────────────────────────────

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn idx_read_u32(bytes: &[u8], pos: usize) -> Result<u32> {
    if pos + 4 > bytes.len() {
        return Err(CoreError::IdxTruncated {
            needed: pos + 4,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()))
}

/// Load an unsigned-byte image file in the standard IDX layout
/// (big-endian magic 0x00000803, then count/rows/cols, then pixels) into a
/// `count x (rows*cols)` matrix scaled to `[0, 1]` by dividing by 255.
pub fn load_idx_images(path: &std::path::Path) -> Result<Matrix> {
    let bytes = std::fs::read(path)?;
    let magic = idx_read_u32(&bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CoreError::IdxBadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = idx_read_u32(&bytes, 4)? as usize;
    let rows = idx_read_u32(&bytes, 8)? as usize;
    let cols = idx_read_u32(&bytes, 12)? as usize;
    let dim = rows
        .checked_mul(cols)
        .ok_or(CoreError::IdxDimOverflow { context: "rows*cols" })?;
    let payload = n
        .checked_mul(dim)
        .ok_or(CoreError::IdxDimOverflow { context: "count*rows*cols" })?;
    let expected = 16usize
        .checked_add(payload)
        .ok_or(CoreError::IdxDimOverflow { context: "header+payload" })?;
    if bytes.len() < expected {
        return Err(CoreError::IdxTruncated {
            needed: expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CoreError::IdxTrailingBytes {
            extra: bytes.len() - expected,
        });
    }
    let mut x = Matrix::zeros(n, dim);
    for (v, &b) in x.data_mut().iter_mut().zip(&bytes[16..]) {
        *v = b as f64 / 255.0;
    }
    Ok(x)
}

/// Load an unsigned-byte label file (big-endian magic 0x00000801, then
/// count, then one byte per label).
pub fn load_idx_labels(path: &std::path::Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path)?;
    let magic = idx_read_u32(&bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CoreError::IdxBadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n = idx_read_u32(&bytes, 4)? as usize;
    let expected = 8usize
        .checked_add(n)
        .ok_or(CoreError::IdxDimOverflow { context: "header+count" })?;
    if bytes.len() < expected {
        return Err(CoreError::IdxTruncated {
            needed: expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CoreError::IdxTrailingBytes {
            extra: bytes.len() - expected,
        });
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Load a matching image/label pair into a dataset, validating that the
/// counts agree and every label is below `classes`.
pub fn load_idx_pair(
    images: &std::path::Path,
    labels: &std::path::Path,
    classes: usize,
) -> Result<ImageDataset> {
    let x = load_idx_images(images)?;
    let y = load_idx_labels(labels)?;
    if x.rows() != y.len() {
        return Err(CoreError::IdxCountMismatch {
            images: x.rows(),
            labels: y.len(),
        });
    }
    for &l in &y {
        if l >= classes {
            return Err(CoreError::LabelOutOfRange { label: l, classes });
        }
    }
    Ok(ImageDataset {
        x,
        targets: Targets::Hard(y),
        classes,
    })
}

// ─── Textual dataset I/O ─────────────────────────────────────────────────

/// Plain-text export of a hard-labeled image dataset: a header line
/// `images <n> <dim> <classes>` followed by one line per sample holding
/// the label and the pixel values (floats round-trip exactly).
pub fn export_images_text(ds: &ImageDataset) -> Result<String> {
    let labels = match &ds.targets {
        Targets::Hard(l) => l,
        Targets::Soft(_) => {
            return Err(CoreError::InvalidArgument(
                "text export covers hard-labeled datasets only".into(),
            ))
        }
    };
    let mut out = String::new();
    out.push_str(&format!("images {} {} {}\n", ds.len(), ds.dim(), ds.classes));
    for (r, &y) in labels.iter().enumerate() {
        out.push_str(&format!("{y}"));
        for v in ds.x.row(r) {
            out.push(' ');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parse the format written by [`export_images_text`]; errors carry
/// 1-based line numbers.
pub fn parse_images_text(text: &str) -> Result<ImageDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(CoreError::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 4 || head[0] != "images" {
        return Err(CoreError::Parse {
            line: 1,
            msg: format!("expected `images <n> <dim> <classes>`, found {header:?}"),
        });
    }
    let parse_h = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| CoreError::Parse {
            line: 1,
            msg: format!("bad {what}: {s:?}"),
        })
    };
    let n = parse_h(head[1], "count")?;
    let dim = parse_h(head[2], "dimension")?;
    let classes = parse_h(head[3], "class count")?;
    let mut x = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    let mut r = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if r >= n {
            return Err(CoreError::Parse {
                line: line_no,
                msg: format!("more than {n} data lines"),
            });
        }
        let mut parts = line.split_whitespace();
        let label: usize = parts
            .next()
            .ok_or(CoreError::Parse {
                line: line_no,
                msg: "missing label".into(),
            })?
            .parse()
            .map_err(|_| CoreError::Parse {
                line: line_no,
                msg: "bad label".into(),
            })?;
        if label >= classes {
            return Err(CoreError::Parse {
                line: line_no,
                msg: format!("label {label} out of range for {classes} classes"),
            });
        }
        let row = x.row_mut(r);
        let mut filled = 0usize;
        for p in parts {
            if filled >= dim {
                return Err(CoreError::Parse {
                    line: line_no,
                    msg: format!("more than {dim} values"),
                });
            }
            row[filled] = p.parse().map_err(|_| CoreError::Parse {
                line: line_no,
                msg: format!("bad value: {p:?}"),
            })?;
            filled += 1;
        }
        if filled != dim {
            return Err(CoreError::Parse {
                line: line_no,
                msg: format!("expected {dim} values, found {filled}"),
            });
        }
        labels.push(label);
        r += 1;
    }
    if r != n {
        return Err(CoreError::Parse {
            line: text.lines().count(),
            msg: format!("expected {n} data lines, found {r}"),
        });
    }
    Ok(ImageDataset {
        x,
        targets: Targets::Hard(labels),
        classes,
    })
}

// ─── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Verified example: vocabulary {a,b,c,d} mapped a->2, b->0, c->3,
    /// d->1; the input "ab" must encode to "aa".
    #[test]
    fn cipher_verified_example() {
        // tokens: a=0, b=1, c=2, d=3; perm[token] as given.
        let perm = vec![2u32, 0, 3, 1];
        let inv = invert_perm(&perm);
        // First position: (perm[a] + 0) % 4 = 2, inv[2] = c? No: inv maps
        // code -> token with perm[token] = code; perm[0]=2 so inv[2]=0=a.
        let out = cipher_encode(&[0, 1], &perm, &inv);
        assert_eq!(out, vec![0, 0], "\"ab\" must encode to \"aa\"");
    }

    #[test]
    fn cipher_first_position_uses_zero_predecessor() {
        let perm = vec![2u32, 0, 3, 1];
        let inv = invert_perm(&perm);
        // Single-token sequences: y = inv[perm[x] % 4].
        for t in 0..4u32 {
            let out = cipher_encode(&[t], &perm, &inv);
            assert_eq!(out[0], inv[perm[t as usize] as usize % 4]);
        }
    }

    #[test]
    fn cipher_position_coupling_changes_output() {
        // The same token encodes differently depending on its predecessor.
        let perm = vec![1u32, 2, 3, 4, 0, 5, 6, 7];
        let inv = invert_perm(&perm);
        let a = cipher_encode(&[3, 3], &perm, &inv);
        // position 0: inv[(4+0)%8] = inv[4]; position 1: inv[(4+4)%8] = inv[0].
        assert_eq!(a[0], inv[4]);
        assert_eq!(a[1], inv[0]);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn invert_perm_roundtrips() {
        let mut rng = RngStream::new(9, 9);
        let perm: Vec<u32> = rng.permutation(17).into_iter().map(|v| v as u32).collect();
        let inv = invert_perm(&perm);
        for t in 0..17usize {
            assert_eq!(inv[perm[t] as usize], t as u32);
            assert_eq!(perm[inv[t] as usize], t as u32);
        }
    }

    #[test]
    fn cipher_task_builds_disjoint_splits() {
        let mut rng = RngStream::new(33, 2);
        let (train, test, perm) = bigram_cipher_task(8, 10, 200, 80, &mut rng).unwrap();
        assert_eq!(train.len(), 200);
        assert_eq!(test.len(), 80);
        assert_eq!(perm.len(), 8);
        let inv = invert_perm(&perm);
        // Outputs follow the rule on both splits.
        for ds in [&train, &test] {
            for (i, o) in ds.inputs.iter().zip(&ds.outputs) {
                assert_eq!(*o, cipher_encode(i, &perm, &inv));
            }
        }
        // All sequences pairwise distinct across both splits.
        let mut all: Vec<&Vec<u32>> = train.inputs.iter().chain(&test.inputs).collect();
        let before = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), before, "duplicate sequences across splits");
    }

    #[test]
    fn cipher_task_rejects_impossible_draws() {
        let mut rng = RngStream::new(1, 1);
        // 2^2 = 4 possible sequences; asking for 3+2 distinct must fail.
        assert!(bigram_cipher_task(2, 2, 3, 2, &mut rng).is_err());
    }

    #[test]
    fn random_labels_are_uniform_and_task_specific() {
        let mut rng = RngStream::new(77, 0);
        let classes = 10;
        let n = 20_000;
        let labels = random_label_task(n, classes, &mut rng);
        assert!(labels.iter().all(|&l| l < classes));
        let mut counts = vec![0usize; classes];
        for &l in &labels {
            counts[l] += 1;
        }
        // Chi-squared against uniform; 9 dof, 0.999 quantile ≈ 27.88.
        let expected = n as f64 / classes as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 27.88, "labels non-uniform: chi2 = {chi2}");
        // A continuing stream gives a different assignment.
        let labels2 = random_label_task(n, classes, &mut rng);
        assert_ne!(labels, labels2);
    }

    #[test]
    fn pixel_permutation_rearranges_columns() {
        let x = Matrix::from_vec(2, 3, vec![10.0, 20.0, 30.0, 1.0, 2.0, 3.0]).unwrap();
        let perm = vec![2usize, 0, 1];
        let out = apply_pixel_permutation(&x, &perm).unwrap();
        // out[m][i] = x[m][perm[i]]
        assert_eq!(out.row(0), &[30.0, 10.0, 20.0]);
        assert_eq!(out.row(1), &[3.0, 1.0, 2.0]);
        // Same permutation, same result (train/test consistency).
        let again = apply_pixel_permutation(&x, &perm).unwrap();
        assert_eq!(out.data(), again.data());
        // Wrong-size permutation rejected.
        assert!(apply_pixel_permutation(&x, &[0, 1]).is_err());
    }

    #[test]
    fn pixel_permutation_is_bijective() {
        let mut rng = RngStream::new(5, 0);
        let perm = pixel_permutation(50, &mut rng);
        let mut seen = [false; 50];
        for &p in &perm {
            assert!(!seen[p]);
            seen[p] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn seq2seq_task_shapes_and_ranges() {
        let mut rng = RngStream::new(4, 4);
        let ds = random_seq2seq_task(12, 5, 3, 40, &mut rng);
        assert_eq!(ds.len(), 40);
        assert!(ds.inputs.iter().all(|s| s.len() == 5));
        assert!(ds.outputs.iter().all(|s| s.len() == 3));
        assert!(ds
            .inputs
            .iter()
            .chain(&ds.outputs)
            .flatten()
            .all(|&t| (t as usize) < 12));
    }

    #[test]
    fn cipher_window_encoding_layout() {
        let ds = SeqDataset {
            inputs: vec![vec![2u32, 0]],
            outputs: vec![vec![1u32, 3]],
            vocab: 4,
        };
        let (x, labels) = encode_cipher_windows(&ds).unwrap();
        assert_eq!(x.rows(), 2);
        assert_eq!(x.cols(), 9); // 2*4 + 1
        // First position: one-hot(2) | zeros | start flag.
        assert_eq!(x.row(0), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        // Second: one-hot(0) | one-hot(prev = 2) | no flag.
        assert_eq!(x.row(1), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(labels, vec![1, 3]);
    }

    #[test]
    fn seq2seq_encoding_layout() {
        let ds = SeqDataset {
            inputs: vec![vec![1u32, 0]],
            outputs: vec![vec![2u32, 0, 1]],
            vocab: 3,
        };
        let (x, labels) = encode_seq2seq(&ds, 2, 3).unwrap();
        assert_eq!(x.rows(), 3);
        assert_eq!(x.cols(), 9); // 2*3 + 3
        // Every row repeats the input encoding [0,1,0 | 1,0,0].
        for pos in 0..3 {
            let row = x.row(pos);
            assert_eq!(&row[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
            let mut want_pos = [0.0; 3];
            want_pos[pos] = 1.0;
            assert_eq!(&row[6..], &want_pos);
        }
        assert_eq!(labels, vec![2, 0, 1]);
        // Length mismatch rejected.
        assert!(encode_seq2seq(&ds, 3, 3).is_err());
    }

    #[test]
    fn decode_groups_predictions() {
        let preds = vec![3usize, 1, 4, 1, 5];
        let seqs = decode_window_preds(&preds, &[2, 3]).unwrap();
        assert_eq!(seqs, vec![vec![3u32, 1], vec![4, 1, 5]]);
        assert!(decode_window_preds(&preds, &[2, 2]).is_err());
    }

    #[test]
    fn synthetic_images_are_balanced_and_clustered() {
        let mut rng = RngStream::new(100, 0);
        let (train, test) = gen_image_pair(10, 64, 200, 100, 0.1, &mut rng);
        assert_eq!(train.len(), 200);
        assert_eq!(test.len(), 100);
        assert_eq!(train.dim(), 64);
        let labels = match &train.targets {
            Targets::Hard(l) => l.clone(),
            _ => panic!("expected hard labels"),
        };
        let mut counts = [0usize; 10];
        for &l in &labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 20));
        // With noise far below the inter-class distance, same-class samples
        // in train and test are much closer than cross-class ones.
        let t_labels = match &test.targets {
            Targets::Hard(l) => l.clone(),
            _ => unreachable!(),
        };
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
        };
        let same = dist(train.x.row(0), test.x.row(labels[0]));
        // test sample with the same class as train sample 0:
        let same_idx = t_labels.iter().position(|&l| l == labels[0]).unwrap();
        let diff_idx = t_labels.iter().position(|&l| l != labels[0]).unwrap();
        let same = dist(train.x.row(0), test.x.row(same_idx)).min(same);
        let diff = dist(train.x.row(0), test.x.row(diff_idx));
        assert!(same < diff, "same-class distance {same} vs cross {diff}");
    }

    #[test]
    fn targets_one_hot_expansion() {
        let t = Targets::Hard(vec![2, 0]);
        let m = t.to_soft(3).unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0, 1.0]);
        assert_eq!(m.row(1), &[1.0, 0.0, 0.0]);
        assert!(Targets::Hard(vec![5]).to_soft(3).is_err());
        let s = Targets::Soft(m.clone());
        assert_eq!(s.to_soft(3).unwrap().data(), m.data());
        assert!(s.to_soft(4).is_err());
    }

    // ── IDX fixtures ──

    fn write_idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        b.extend_from_slice(&n.to_be_bytes());
        b.extend_from_slice(&rows.to_be_bytes());
        b.extend_from_slice(&cols.to_be_bytes());
        b.extend_from_slice(pixels);
        b
    }

    fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_pair_loads_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lab_path = dir.path().join("lab.idx");
        // Two 2x2 images.
        let pixels = [0u8, 51, 102, 255, 10, 20, 30, 40];
        std::fs::write(&img_path, write_idx_images(2, 2, 2, &pixels)).unwrap();
        std::fs::write(&lab_path, write_idx_labels(&[7, 1])).unwrap();
        let ds = load_idx_pair(&img_path, &lab_path, 10).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_relative_eq!(ds.x.get(0, 1), 51.0 / 255.0, max_relative = 1e-15);
        assert_relative_eq!(ds.x.get(0, 3), 1.0, max_relative = 1e-15);
        assert_eq!(ds.targets, Targets::Hard(vec![7, 1]));
    }

    #[test]
    fn idx_error_taxonomy() {
        let dir = tempfile::tempdir().unwrap();
        let p = |name: &str| dir.path().join(name);

        // Bad magic.
        let mut bytes = write_idx_images(1, 1, 1, &[0]);
        bytes[3] = 0x77;
        std::fs::write(p("m.idx"), &bytes).unwrap();
        assert!(matches!(
            load_idx_images(&p("m.idx")),
            Err(CoreError::IdxBadMagic { .. })
        ));

        // Truncated payload.
        let bytes = write_idx_images(2, 2, 2, &[0; 7]);
        std::fs::write(p("t.idx"), &bytes).unwrap();
        assert!(matches!(
            load_idx_images(&p("t.idx")),
            Err(CoreError::IdxTruncated { .. })
        ));

        // Trailing bytes.
        let mut bytes = write_idx_images(1, 1, 1, &[5]);
        bytes.push(9);
        std::fs::write(p("x.idx"), &bytes).unwrap();
        assert!(matches!(
            load_idx_images(&p("x.idx")),
            Err(CoreError::IdxTrailingBytes { extra: 1 })
        ));

        // Count mismatch between images and labels.
        std::fs::write(p("i.idx"), write_idx_images(2, 1, 1, &[1, 2])).unwrap();
        std::fs::write(p("l.idx"), write_idx_labels(&[1])).unwrap();
        assert!(matches!(
            load_idx_pair(&p("i.idx"), &p("l.idx"), 10),
            Err(CoreError::IdxCountMismatch { images: 2, labels: 1 })
        ));

        // Label out of class range.
        std::fs::write(p("l2.idx"), write_idx_labels(&[4, 11])).unwrap();
        std::fs::write(p("i2.idx"), write_idx_images(2, 1, 1, &[1, 2])).unwrap();
        assert!(matches!(
            load_idx_pair(&p("i2.idx"), &p("l2.idx"), 10),
            Err(CoreError::LabelOutOfRange { label: 11, classes: 10 })
        ));

        // Dimension overflow.
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        b.extend_from_slice(&u32::MAX.to_be_bytes());
        b.extend_from_slice(&u32::MAX.to_be_bytes());
        b.extend_from_slice(&u32::MAX.to_be_bytes());
        std::fs::write(p("o.idx"), &b).unwrap();
        let r = load_idx_images(&p("o.idx"));
        assert!(
            matches!(r, Err(CoreError::IdxDimOverflow { .. }))
                || matches!(r, Err(CoreError::IdxTruncated { .. })),
            "expected overflow or truncation, got {r:?}"
        );
    }

    #[test]
    fn text_roundtrip_preserves_everything() {
        let mut rng = RngStream::new(8, 8);
        let means = gen_class_means(3, 5, &mut rng);
        let ds = gen_synthetic_images(&means, 7, 0.25, &mut rng);
        let text = export_images_text(&ds).unwrap();
        let back = parse_images_text(&text).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn text_parse_errors_carry_line_numbers() {
        // Bad header.
        match parse_images_text("bogus 1 2 3\n") {
            Err(CoreError::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        // Wrong value count on line 3.
        let text = "images 2 2 2\n0 0.5 0.5\n1 0.25\n";
        match parse_images_text(text) {
            Err(CoreError::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        // Label out of range on line 2.
        let text = "images 1 2 2\n5 0.1 0.2\n";
        match parse_images_text(text) {
            Err(CoreError::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        // Missing data lines.
        assert!(parse_images_text("images 2 2 2\n0 0.1 0.2\n").is_err());
    }
}
