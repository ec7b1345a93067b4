//! Boolean attention masks, including the local/sparse/global pattern.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::LsgConfig;

/// `allow[q][k]`: may query position `q` attend to key position `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allow = Vec::with_capacity(rows * cols);
        for q in 0..rows {
            for k in 0..cols {
                allow.push(f(q, k));
            }
        }
        AttentionMask { rows, cols, allow }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| true)
    }

    /// Query `q` sees keys `0..=q`.
    pub fn causal(len: usize) -> Self {
        Self::from_fn(len, len, |q, k| k <= q)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allow[q * self.cols + k]
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.allow[q * self.cols..(q + 1) * self.cols]
    }

    pub fn allowed_keys(&self, q: usize) -> Vec<usize> {
        (0..self.cols).filter(|&k| self.allowed(q, k)).collect()
    }

    pub fn allowed_count(&self) -> usize {
        self.allow.iter().filter(|&&a| a).count()
    }

    /// Fraction of allowed (query, key) pairs.
    pub fn density(&self) -> f64 {
        if self.allow.is_empty() {
            return 0.0;
        }
        self.allowed_count() as f64 / self.allow.len() as f64
    }

    pub fn is_all_true(&self) -> bool {
        self.allow.iter().all(|&a| a)
    }

    pub fn or(&self, other: &AttentionMask) -> AttentionMask {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        AttentionMask {
            rows: self.rows,
            cols: self.cols,
            allow: self.allow.iter().zip(&other.allow).map(|(&a, &b)| a || b).collect(),
        }
    }

    /// Text grid: one line per query, `#` allowed, `.` blocked.
    pub fn to_grid(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for q in 0..self.rows {
            for &a in self.row(q) {
                out.push(if a { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for AttentionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_grid())
    }
}

/// Block of a non-global position. Blocks tile absolute positions, so the
/// first block is shortened by the global prefix.
fn block_of(pos: usize, cfg: &LsgConfig) -> usize {
    pos / cfg.block_size
}

pub fn local_mask(seq_len: usize, cfg: &LsgConfig) -> AttentionMask {
    let g = cfg.num_global;
    AttentionMask::from_fn(seq_len, seq_len, |q, k| {
        q >= g && k >= g && block_of(q, cfg).abs_diff(block_of(k, cfg)) <= cfg.local_radius
    })
}

pub fn sparse_mask(seq_len: usize, cfg: &LsgConfig) -> AttentionMask {
    let g = cfg.num_global;
    let stride = cfg.sparsity_stride;
    AttentionMask::from_fn(seq_len, seq_len, |_, k| {
        stride > 0 && k >= g && (k - g).is_multiple_of(stride)
    })
}

pub fn global_mask(seq_len: usize, cfg: &LsgConfig) -> AttentionMask {
    let g = cfg.num_global;
    AttentionMask::from_fn(seq_len, seq_len, |q, k| q < g || k < g)
}

/// Encoder self-attention pattern over `seq_len` positions, the first
/// `num_global` of which are global tokens.
pub fn lsg_mask(seq_len: usize, cfg: &LsgConfig) -> AttentionMask {
    let g = cfg.num_global;
    let stride = cfg.sparsity_stride;
    AttentionMask::from_fn(seq_len, seq_len, |q, k| {
        if q < g || k < g {
            return true;
        }
        if stride > 0 && (k - g).is_multiple_of(stride) {
            return true;
        }
        block_of(q, cfg).abs_diff(block_of(k, cfg)) <= cfg.local_radius
    })
}
