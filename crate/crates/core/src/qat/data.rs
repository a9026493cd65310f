use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Shape of the synthetic sequence-classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub seq_len: usize,
    pub vocab: usize,
    pub classes: usize,
    pub teacher_hidden: usize,
    /// Pre-activation gain of the teacher; larger values make the labeling
    /// function less linear.
    pub teacher_gain: f32,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            seq_len: 8,
            vocab: 8,
            classes: 8,
            teacher_hidden: 32,
            teacher_gain: 1.0,
        }
    }
}

impl TaskSpec {
    /// Width of the flattened one-hot input.
    pub fn input_dim(&self) -> usize {
        self.seq_len * self.vocab
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("seq_len", self.seq_len),
            ("vocab", self.vocab),
            ("teacher_hidden", self.teacher_hidden),
        ] {
            if v == 0 {
                return Err(Error::Parse {
                    field: format!("task.{field}"),
                    message: "must be at least 1".into(),
                });
            }
        }
        if self.classes < 2 {
            return Err(Error::Parse {
                field: "task.classes".into(),
                message: "must be at least 2".into(),
            });
        }
        if !self.teacher_gain.is_finite() || self.teacher_gain <= 0.0 {
            return Err(Error::Parse {
                field: "task.teacher_gain".into(),
                message: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Frozen random network that labels token sequences.
#[derive(Debug, Clone)]
pub struct Teacher {
    w1: Matrix,
    w2: Matrix,
    task: TaskSpec,
}

impl Teacher {
    pub fn new(task: &TaskSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7eac_4e55);
        let mut normal = |r, c| Matrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
        let w1 = normal(task.teacher_hidden, task.input_dim());
        let w2 = normal(task.classes, task.teacher_hidden);
        Self {
            w1,
            w2,
            task: task.clone(),
        }
    }

    /// Class of one token sequence.
    pub fn label(&self, tokens: &[usize]) -> usize {
        let t = &self.task;
        let scale = t.teacher_gain / (t.seq_len as f32).sqrt();
        let hidden: Vec<f32> = (0..t.teacher_hidden)
            .map(|h| {
                let row = self.w1.row(h);
                let pre: f32 = tokens.iter().enumerate().map(|(p, &tok)| row[p * t.vocab + tok]).sum();
                (scale * pre).tanh()
            })
            .collect();
        let mut best = (0, f32::NEG_INFINITY);
        for c in 0..t.classes {
            let logit: f32 = self.w2.row(c).iter().zip(&hidden).map(|(a, b)| a * b).sum();
            if logit > best.1 {
                best = (c, logit);
            }
        }
        best.0
    }
}

/// One-hot encoded inputs with integer class targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Matrix,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Rows `indices` as a batch.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let cols = self.x.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.x.row(i));
            y.push(self.y[i]);
        }
        (Matrix::from_raw(indices.len(), cols, data), y)
    }

    /// Entropy (nats) of the empirical label distribution: the loss of a
    /// predictor that ignores its input.
    pub fn label_entropy(&self, classes: usize) -> f64 {
        let mut counts = vec![0usize; classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        let n = self.y.len() as f64;
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskSpec,
    pub train: Split,
    pub val: Split,
}

/// Deterministic corpus of `n_samples` sequences split 90/10 into train and
/// validation. Validation gets at least one sample.
pub fn gen_dataset(task: &TaskSpec, seed: u64, n_samples: usize) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    task.validate()?;
    let teacher = Teacher::new(task, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = task.input_dim();
    let mut x = vec![0.0f32; n_samples * dim];
    let mut y = Vec::with_capacity(n_samples);
    let mut tokens = vec![0usize; task.seq_len];
    for s in 0..n_samples {
        for (p, t) in tokens.iter_mut().enumerate() {
            *t = rng.random_range(0..task.vocab);
            x[s * dim + p * task.vocab + *t] = 1.0;
        }
        y.push(teacher.label(&tokens));
    }
    let n_val = (n_samples / 10).max(1).min(n_samples);
    let n_train = n_samples - n_val;
    let val_x = x.split_off(n_train * dim);
    let val_y = y.split_off(n_train);
    Ok(Dataset {
        task: task.clone(),
        train: Split {
            x: Matrix::from_raw(n_train, dim, x),
            y,
        },
        val: Split {
            x: Matrix::from_raw(n_val, dim, val_x),
            y: val_y,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let t = TaskSpec::default();
        assert_eq!(gen_dataset(&t, 5, 200).unwrap(), gen_dataset(&t, 5, 200).unwrap());
        assert_ne!(gen_dataset(&t, 5, 200).unwrap(), gen_dataset(&t, 6, 200).unwrap());
    }

    #[test]
    fn split_is_ninety_ten_and_one_hot() {
        let t = TaskSpec::default();
        let d = gen_dataset(&t, 1, 1000).unwrap();
        assert_eq!(d.train.len(), 900);
        assert_eq!(d.val.len(), 100);
        for r in 0..d.train.x.rows() {
            let row = d.train.x.row(r);
            assert_eq!(row.iter().sum::<f32>(), t.seq_len as f32);
            for p in 0..t.seq_len {
                assert_eq!(row[p * t.vocab..(p + 1) * t.vocab].iter().sum::<f32>(), 1.0);
            }
        }
        assert!(gen_dataset(&t, 1, 0).is_err());
        assert_eq!(gen_dataset(&t, 1, 1).unwrap().val.len(), 1);
    }

    #[test]
    fn labels_are_a_function_of_inputs() {
        let t = TaskSpec::default();
        let teacher = Teacher::new(&t, 9);
        let d = gen_dataset(&t, 9, 500).unwrap();
        for r in 0..d.train.len() {
            let row = d.train.x.row(r);
            let tokens: Vec<usize> = (0..t.seq_len)
                .map(|p| row[p * t.vocab..(p + 1) * t.vocab].iter().position(|&v| v == 1.0).unwrap())
                .collect();
            assert_eq!(teacher.label(&tokens), d.train.y[r]);
        }
    }

    #[test]
    fn labels_use_several_classes() {
        let t = TaskSpec::default();
        let d = gen_dataset(&t, 2, 2000).unwrap();
        assert!(d.train.label_entropy(t.classes) > 1.0);
    }
}
