//! Binary-tree simulation of the process and the induced single-branch
//! process.
//!
//! Nodes use the heap labeling: the ancestor is label 1, the children of k
//! are 2k and 2k+1, generation r occupies labels 2^r .. 2^(r+1)-1. Values are
//! stored flat in label order, so a generation is a contiguous slice and
//! mother/child lookups are shifts.

use std::io::{self, BufRead, Write};

use rand::Rng;
use thiserror::Error;

use crate::model::ModelParams;
use crate::rng::{sample_immigration_pair, thin, RngStream};

/// Deepest tree the simulator will allocate; one more generation doubles the
/// node count, so this caps memory at a few hundred MB.
pub const MAX_DEPTH: u32 = 24;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("depth {requested} exceeds the memory budget (max {max})")]
    DepthBudget { requested: u32, max: u32 },
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Number of nodes in generation r.
pub fn generation_size(r: u32) -> u64 {
    1u64 << r
}

/// First label of generation r.
pub fn generation_start(r: u32) -> u64 {
    1u64 << r
}

/// |T_n|: number of nodes in generations 0..=n.
pub fn subtree_size(n: u32) -> u64 {
    (1u64 << (n + 1)) - 1
}

/// Generation of a label: floor(log2(label)).
pub fn generation_of(label: u64) -> u32 {
    assert!(label >= 1, "labels start at 1");
    63 - label.leading_zeros()
}

/// Mother of a label; the ancestor has none.
pub fn mother(label: u64) -> Option<u64> {
    if label <= 1 {
        None
    } else {
        Some(label / 2)
    }
}

/// Children labels (2k, 2k+1).
pub fn children(label: u64) -> (u64, u64) {
    (2 * label, 2 * label + 1)
}

/// Complete tree of process values up to some generation, stored flat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinarTree {
    /// values[label] for label in 1..=subtree_size(depth); index 0 unused.
    values: Vec<u32>,
    depth: u32,
}

impl BinarTree {
    /// Build from values listed in ascending label order (label 1 first).
    pub fn from_values(depth: u32, values_by_label: Vec<u32>) -> Result<Self, TreeError> {
        if depth > MAX_DEPTH {
            return Err(TreeError::DepthBudget {
                requested: depth,
                max: MAX_DEPTH,
            });
        }
        let expected = subtree_size(depth) as usize;
        if values_by_label.len() != expected {
            return Err(TreeError::Csv {
                line: 0,
                reason: format!(
                    "expected {expected} node values for depth {depth}, got {}",
                    values_by_label.len()
                ),
            });
        }
        let mut values = Vec::with_capacity(expected + 1);
        values.push(0);
        values.extend_from_slice(&values_by_label);
        Ok(Self { values, depth })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn node_count(&self) -> u64 {
        subtree_size(self.depth)
    }

    pub fn value(&self, label: u64) -> u32 {
        self.values[label as usize]
    }

    /// Values of generation r as a contiguous slice, label-ascending.
    pub fn generation_slice(&self, r: u32) -> &[u32] {
        assert!(
            r <= self.depth,
            "generation {r} beyond depth {}",
            self.depth
        );
        let start = generation_start(r) as usize;
        &self.values[start..2 * start]
    }

    /// Iterate (label, value) pairs in label order.
    pub fn nodes(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.values
            .iter()
            .enumerate()
            .skip(1)
            .map(|(label, &v)| (label as u64, v))
    }

    /// Write the tree as CSV: header `label,generation,value`, one row per
    /// node in ascending label order, LF line endings.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(b"label,generation,value\n")?;
        for (label, value) in self.nodes() {
            writeln!(w, "{},{},{}", label, generation_of(label), value)?;
        }
        Ok(())
    }

    /// Read a tree from CSV, validating the exact labeling: header, then
    /// labels 1..=2^(n+1)-1 in order with matching generations and
    /// nonnegative integer values.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, TreeError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| TreeError::Csv {
                line: 1,
                reason: "empty file".into(),
            })?
            .map_err(TreeError::Io)?;
        if header.trim_end() != "label,generation,value" {
            return Err(TreeError::Csv {
                line: 1,
                reason: format!("expected header `label,generation,value`, got `{header}`"),
            });
        }
        let mut values = vec![0u32];
        let mut expected_label = 1u64;
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line.map_err(TreeError::Io)?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next_field = |name: &str| {
                fields.next().ok_or_else(|| TreeError::Csv {
                    line: line_no,
                    reason: format!("missing {name} field"),
                })
            };
            let label: u64 = next_field("label")?.parse().map_err(|e| TreeError::Csv {
                line: line_no,
                reason: format!("bad label: {e}"),
            })?;
            let generation: u32 =
                next_field("generation")?
                    .parse()
                    .map_err(|e| TreeError::Csv {
                        line: line_no,
                        reason: format!("bad generation: {e}"),
                    })?;
            let value: u32 = next_field("value")?.parse().map_err(|e| TreeError::Csv {
                line: line_no,
                reason: format!("bad value: {e}"),
            })?;
            if fields.next().is_some() {
                return Err(TreeError::Csv {
                    line: line_no,
                    reason: "too many fields".into(),
                });
            }
            if label != expected_label {
                return Err(TreeError::Csv {
                    line: line_no,
                    reason: format!("expected label {expected_label}, got {label} (labels must be 1..N without gaps or duplicates)"),
                });
            }
            if generation != generation_of(label) {
                return Err(TreeError::Csv {
                    line: line_no,
                    reason: format!(
                        "label {label} lies in generation {}, row says {generation}",
                        generation_of(label)
                    ),
                });
            }
            values.push(value);
            expected_label += 1;
        }
        let count = (values.len() - 1) as u64;
        let depth = match count {
            0 => {
                return Err(TreeError::Csv {
                    line: 1,
                    reason: "no data rows".into(),
                })
            }
            n => {
                let d = generation_of(n);
                if subtree_size(d) != n {
                    return Err(TreeError::Csv {
                        line: values.len(),
                        reason: format!(
                            "{n} rows is not a complete tree (expected 2^(d+1)-1 nodes)"
                        ),
                    });
                }
                d
            }
        };
        Ok(Self { values, depth })
    }
}

/// Simulate a complete tree of the given depth.
///
/// Each mother node draws from its own substream keyed by its label: two
/// thinnings (even child first) and one immigration pair, in that order.
/// The layout makes replicate- and node-level parallelism irrelevant to the
/// output: regenerating from the same stream is bit-identical.
pub fn simulate_tree(
    params: &ModelParams,
    depth: u32,
    stream: RngStream,
) -> Result<BinarTree, TreeError> {
    if depth > MAX_DEPTH {
        return Err(TreeError::DepthBudget {
            requested: depth,
            max: MAX_DEPTH,
        });
    }
    let size = subtree_size(depth) as usize;
    let mut values = vec![0u32; size + 1];
    values[1] = params.x1;
    if depth > 0 {
        for mother in 1..=subtree_size(depth - 1) {
            let mut rng = stream.substream(mother).rng();
            let x = values[mother as usize];
            let even = thin(&params.offspring_a, x, &mut rng);
            let odd = thin(&params.offspring_b, x, &mut rng);
            let (eps_even, eps_odd) = sample_immigration_pair(&params.immigration, &mut rng);
            values[2 * mother as usize] = even + eps_even;
            values[2 * mother as usize + 1] = odd + eps_odd;
        }
    }
    Ok(BinarTree { values, depth })
}

/// Realization of the process along one uniformly random branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchPath {
    /// Y_1 .. Y_{steps+1}
    pub values: Vec<u32>,
    /// Coin flips choosing the even (false) or odd (true) child at each step.
    pub selectors: Vec<bool>,
}

impl BranchPath {
    pub fn terminal(&self) -> u32 {
        *self.values.last().expect("non-empty path")
    }
}

/// Walk a random branch for `steps` transitions starting from the ancestor
/// value. Each step flips a fair coin; heads thins with the odd-child family
/// and adds the odd immigration coordinate, tails the even pair.
pub fn simulate_branch(params: &ModelParams, steps: u32, stream: RngStream) -> BranchPath {
    let mut rng = stream.rng();
    let mut values = Vec::with_capacity(steps as usize + 1);
    let mut selectors = Vec::with_capacity(steps as usize);
    let mut current = params.x1;
    values.push(current);
    for _ in 0..steps {
        let odd_child: bool = rng.random();
        current = branch_step(params, current, odd_child, &mut rng);
        selectors.push(odd_child);
        values.push(current);
    }
    BranchPath { values, selectors }
}

fn branch_step<R: Rng + ?Sized>(
    params: &ModelParams,
    current: u32,
    odd_child: bool,
    rng: &mut R,
) -> u32 {
    let family = if odd_child {
        &params.offspring_b
    } else {
        &params.offspring_a
    };
    let thinned = thin(family, current, rng);
    let pair = sample_immigration_pair(&params.immigration, rng);
    let immigration = if odd_child { pair.1 } else { pair.0 };
    thinned + immigration
}

/// Number of branch transitions needed before the neglected series tail has
/// expectation below `tail_tol`: the tail after k terms is bounded by
/// mean_step * decay^k / (1 - decay) with decay the average offspring mean.
pub fn series_truncation_steps(params: &ModelParams, tail_tol: f64) -> u32 {
    assert!(
        tail_tol > 0.0 && tail_tol < 1.0,
        "tail_tol must be in (0,1)"
    );
    let a_bar = 0.5 * (params.offspring_a.mean() + params.offspring_b.mean());
    let c_bar = 0.5 * (params.immigration.mean_even() + params.immigration.mean_odd());
    let mut bound = c_bar / (1.0 - a_bar);
    let mut steps = 0u32;
    while bound >= tail_tol {
        bound *= a_bar;
        steps += 1;
    }
    steps
}

/// Draw one sample of the a.s. series limit of the branch process.
///
/// The series is evaluated innermost-first: starting from zero, each of the
/// K truncation steps adds a fresh immigration term and thins the partial
/// sum, which realizes every composed thinning chain with the coin shared
/// across terms, exactly as in the branch recursion. K is chosen by
/// [`series_truncation_steps`] so the dropped tail has mean below `tail_tol`.
pub fn sample_t(params: &ModelParams, tail_tol: f64, stream: RngStream) -> u32 {
    let steps = series_truncation_steps(params, tail_tol);
    let mut rng = stream.rng();
    let mut acc = 0u32;
    for _ in 0..steps {
        let odd_child: bool = rng.random();
        acc = branch_step(params, acc, odd_child, &mut rng);
    }
    acc
}
