use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};

/// A `(head, tail)` pair with its edge label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub head: usize,
    pub tail: usize,
    /// `true` when the edge `head -> tail` exists.
    pub label: bool,
}

impl LabeledPair {
    pub fn positive(head: usize, tail: usize) -> Self {
        Self {
            head,
            tail,
            label: true,
        }
    }

    pub fn negative(head: usize, tail: usize) -> Self {
        Self {
            head,
            tail,
            label: false,
        }
    }
}

const MAX_REJECTIONS: usize = 1000;

/// Each positive followed by `ratio` corruptions of it, rejecting self-loops
/// and members of the positive set.
pub fn sample_negatives(
    positives: &[(usize, usize)],
    num_entities: usize,
    ratio: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    let avoid: BTreeSet<(usize, usize)> = positives.iter().copied().collect();
    sample_negatives_avoiding(positives, &avoid, num_entities, ratio, seed, 0)
}

/// As [`sample_negatives`], rejecting every pair in `avoid` instead. A
/// corruption replaces the head or the tail (fair coin) with a uniform
/// entity; `stream` separates independent calls sharing one seed.
pub fn sample_negatives_avoiding(
    positives: &[(usize, usize)],
    avoid: &BTreeSet<(usize, usize)>,
    num_entities: usize,
    ratio: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<LabeledPair>> {
    let mut rng = SeededRng::stream(seed, Stream::Negatives, stream);
    let mut out = Vec::with_capacity(positives.len() * (ratio + 1));
    for &(h, t) in positives {
        for x in [h, t] {
            if x >= num_entities {
                return Err(Error::IndexOutOfRange {
                    index: x,
                    len: num_entities,
                });
            }
        }
        out.push(LabeledPair::positive(h, t));
        for slot in 0..ratio {
            let mut found = None;
            for _ in 0..MAX_REJECTIONS {
                let e = rng.below(num_entities as u64) as usize;
                let cand = if rng.coin() { (e, t) } else { (h, e) };
                if cand.0 != cand.1 && !avoid.contains(&cand) {
                    found = Some(cand);
                    break;
                }
            }
            let (nh, nt) = found.ok_or_else(|| {
                Error::invalid(format!(
                    "graph too dense: no negative for ({h}, {t}) slot {slot} after {MAX_REJECTIONS} draws"
                ))
            })?;
            out.push(LabeledPair::negative(nh, nt));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        assert_eq!(
            sample_negatives(&[(0, 1)], 5, 0, 1).unwrap(),
            vec![LabeledPair::positive(0, 1)]
        );
        let a = sample_negatives(&[(0, 1)], 5, 10, 1).unwrap();
        assert_eq!(a.len(), 11);
        assert_eq!(a.iter().filter(|p| p.label).count(), 1);
        assert_eq!(a, sample_negatives(&[(0, 1)], 5, 10, 1).unwrap());
        for p in &a[1..] {
            assert_ne!(p.head, p.tail);
            assert_ne!((p.head, p.tail), (0, 1));
            assert!(p.head == 0 || p.tail == 1);
        }
    }

    #[test]
    fn dense_graph_fails() {
        // With two entities the only non-loop corruption of (0, 1) is itself.
        assert!(sample_negatives(&[(0, 1)], 2, 1, 0).is_err());
        assert!(sample_negatives(&[(0, 3)], 2, 1, 0).is_err());
    }
}
