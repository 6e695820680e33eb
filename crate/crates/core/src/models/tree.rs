//! Binary decision tree grown greedily on information gain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::WindowSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeechClass {
    Ambient,
    Speech,
}

impl SpeechClass {
    pub fn name(self) -> &'static str {
        match self {
            SpeechClass::Ambient => "ambient",
            SpeechClass::Speech => "speech",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        /// Values below go left, values at or above go right.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: SpeechClass,
        confidence: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub purity_stop: f64,
    pub min_samples: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 10,
            purity_stop: 0.95,
            min_samples: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
}

fn entropy(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn count(labels: &[SpeechClass], idx: &[usize]) -> [usize; 2] {
    let mut c = [0, 0];
    for &i in idx {
        c[labels[i].index()] += 1;
    }
    c
}

/// Midpoint rounded to f32, nudged so that `lo < t <= hi` still holds.
fn threshold_between(lo: f64, hi: f64) -> Option<f64> {
    let mut t = (0.5 * (lo + hi)) as f32;
    if (t as f64) <= lo {
        t = f32::from_bits(if t >= 0.0 { t.to_bits() + 1 } else { t.to_bits() - 1 });
    }
    let t = t as f64;
    (t > lo && t <= hi).then_some(t)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [SpeechClass],
    cfg: TreeConfig,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn leaf(&mut self, counts: [usize; 2]) -> usize {
        // ties go to speech
        let (class, n) = if counts[SpeechClass::Speech.index()] >= counts[SpeechClass::Ambient.index()] {
            (SpeechClass::Speech, counts[1])
        } else {
            (SpeechClass::Ambient, counts[0])
        };
        let total = (counts[0] + counts[1]).max(1);
        self.nodes.push(TreeNode::Leaf {
            class,
            confidence: n as f64 / total as f64,
        });
        self.nodes.len() - 1
    }

    fn best_split(&self, idx: &[usize], parent: [usize; 2]) -> Option<(usize, f64, f64)> {
        let n = idx.len() as f64;
        let h = entropy(parent);
        let mut best: Option<(usize, f64, f64)> = None;
        let n_features = self.x[idx[0]].len();
        let mut order: Vec<usize> = idx.to_vec();
        for f in 0..n_features {
            order.sort_by(|&a, &b| {
                self.x[a][f]
                    .total_cmp(&self.x[b][f])
                    .then(self.y[a].cmp(&self.y[b]))
            });
            let mut left = [0usize, 0usize];
            for w in 0..order.len() - 1 {
                left[self.y[order[w]].index()] += 1;
                let (lo, hi) = (self.x[order[w]][f], self.x[order[w + 1]][f]);
                if lo == hi {
                    continue;
                }
                let Some(t) = threshold_between(lo, hi) else {
                    continue;
                };
                let right = [parent[0] - left[0], parent[1] - left[1]];
                let nl = (left[0] + left[1]) as f64;
                let gain = h - (nl / n) * entropy(left) - ((n - nl) / n) * entropy(right);
                if gain > 1e-12 && best.is_none_or(|(_, _, g)| gain > g) {
                    best = Some((f, t, gain));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = count(self.y, &idx);
        let purity = counts[0].max(counts[1]) as f64 / idx.len() as f64;
        if depth >= self.cfg.max_depth
            || purity >= self.cfg.purity_stop
            || idx.len() < self.cfg.min_samples
        {
            return self.leaf(counts);
        }
        let Some((feature, threshold, _)) = self.best_split(&idx, counts) else {
            return self.leaf(counts);
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][feature] < threshold);
        let me = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            class: SpeechClass::Speech,
            confidence: 0.0,
        });
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[me] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

impl DecisionTreeModel {
    /// Trains on flat feature vectors.
    pub fn train_vectors(x: &[Vec<f64>], y: &[SpeechClass], cfg: &TreeConfig) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        for class in [SpeechClass::Ambient, SpeechClass::Speech] {
            if !y.contains(&class) {
                return Err(Error::SingleClass {
                    missing: class.name().to_string(),
                });
            }
        }
        let n_features = x[0].len();
        if let Some(bad) = x.iter().find(|v| v.len() != n_features) {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                found: bad.len(),
            });
        }
        let mut b = Builder {
            x,
            y,
            cfg: *cfg,
            nodes: Vec::new(),
        };
        b.grow((0..x.len()).collect(), 0);
        Ok(Self {
            nodes: b.nodes,
            n_features,
        })
    }

    pub fn train(data: &[(WindowSummary, SpeechClass)], cfg: &TreeConfig) -> Result<Self> {
        let x: Vec<Vec<f64>> = data.iter().map(|(s, _)| s.to_vector()).collect();
        let y: Vec<SpeechClass> = data.iter().map(|(_, c)| *c).collect();
        Self::train_vectors(&x, &y, cfg)
    }

    /// Leaf class and its training purity.
    pub fn classify_vector(&self, x: &[f64]) -> Result<(SpeechClass, f64)> {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { class, confidence } => return Ok((*class, *confidence)),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = *x.get(*feature).ok_or(Error::MissingFeature {
                        index: *feature,
                        len: x.len(),
                    })?;
                    i = if v < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn classify(&self, summary: &WindowSummary) -> Result<(SpeechClass, f64)> {
        self.classify_vector(&summary.to_vector())
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[SpeechClass]) -> Result<f64> {
        let mut ok = 0;
        for (v, c) in x.iter().zip(y) {
            if self.classify_vector(v)?.0 == *c {
                ok += 1;
            }
        }
        Ok(ok as f64 / x.len().max(1) as f64)
    }
}
