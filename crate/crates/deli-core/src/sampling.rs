//! Sampling pattern generators: dense slice subsets, subtensor anchor tuples,
//! and Bernoulli index regions, all deterministic per seed.

use std::io::{BufRead, Write};

use rand::seq::index::sample as sample_without_replacement;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::DeliError;
use crate::tensor::IndexTuple;
use crate::Result;

/// Provenance label of a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SampleLabel {
    /// Densely sampled mode-3 slice indices.
    S,
    /// Anchor tuples over the non-(1,2,k) modes; the payload is the mode k (0-based).
    Z(usize),
    /// Bernoulli region backing the matrix-completion phase.
    OmegaM,
    /// Bernoulli region backing the censored least-squares phase for mode k.
    Omega(usize),
    /// Pivot rows of the Khatri-Rao product.
    L,
}

/// A labelled collection of index tuples (or sub-tuples for `Z` sets).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub label: SampleLabel,
    pub indices: Vec<IndexTuple>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Line-oriented text format: `label [k] i1 i2 ...` per index.
    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        for idx in &self.indices {
            let coords: Vec<String> = idx.0.iter().map(|i| i.to_string()).collect();
            match self.label {
                SampleLabel::S => writeln!(w, "S {}", coords.join(" "))?,
                SampleLabel::Z(k) => writeln!(w, "Z {} {}", k, coords.join(" "))?,
                SampleLabel::OmegaM => writeln!(w, "OmegaM {}", coords.join(" "))?,
                SampleLabel::Omega(k) => writeln!(w, "Omega {} {}", k, coords.join(" "))?,
                SampleLabel::L => writeln!(w, "L {}", coords.join(" "))?,
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Vec<SampleSet>> {
        let mut sets: Vec<SampleSet> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            let parse = |t: &str| {
                t.parse::<usize>().map_err(|e| DeliError::Parse {
                    line: lineno + 1,
                    message: format!("bad index {t:?}: {e}"),
                })
            };
            let (label, rest) = match toks[0] {
                "S" => (SampleLabel::S, &toks[1..]),
                "OmegaM" => (SampleLabel::OmegaM, &toks[1..]),
                "L" => (SampleLabel::L, &toks[1..]),
                "Z" => (SampleLabel::Z(parse(toks[1])?), &toks[2..]),
                "Omega" => (SampleLabel::Omega(parse(toks[1])?), &toks[2..]),
                other => {
                    return Err(DeliError::Parse {
                        line: lineno + 1,
                        message: format!("unknown label {other:?}"),
                    })
                }
            };
            let coords: Vec<usize> = rest.iter().map(|t| parse(t)).collect::<Result<_>>()?;
            match sets.last_mut() {
                Some(s) if s.label == label => s.indices.push(IndexTuple(coords)),
                _ => sets.push(SampleSet { label, indices: vec![IndexTuple(coords)] }),
            }
        }
        Ok(sets)
    }
}

/// Pick `s` distinct mode-3 slice indices uniformly at random.
pub fn draw_slice_set(n3: usize, s: usize, seed: u64) -> Result<SampleSet> {
    if s == 0 || s > n3 {
        return Err(DeliError::SampleRange(format!("slice count {s} out of range 1..={n3}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = sample_without_replacement(&mut rng, n3, s).into_iter().collect();
    picks.sort_unstable();
    Ok(SampleSet {
        label: SampleLabel::S,
        indices: picks.into_iter().map(|i| IndexTuple(vec![i])).collect(),
    })
}

/// Wrap an explicit user-chosen slice list as a sample set.
pub fn explicit_slice_set(n3: usize, slices: &[usize]) -> Result<SampleSet> {
    let mut seen = std::collections::HashSet::new();
    for &i in slices {
        if i >= n3 {
            return Err(DeliError::SampleRange(format!("slice index {i} out of range 0..{n3}")));
        }
        if !seen.insert(i) {
            return Err(DeliError::SampleRange(format!("duplicate slice index {i}")));
        }
    }
    Ok(SampleSet {
        label: SampleLabel::S,
        indices: slices.iter().map(|&i| IndexTuple(vec![i])).collect(),
    })
}

/// Draw the anchor-tuple sets `Z_k` for modes `k = 2..d` (0-based).
///
/// Each `Z_k` holds `m` distinct tuples over the product of all modes except
/// {0, 1, k}, drawn uniformly without replacement, independently across `k`.
/// For order-3 tensors that product is empty; the single empty tuple is
/// returned and `m` is pinned to 1.
pub fn draw_z_sets(shape: &[usize], m: usize, seed: u64) -> Result<Vec<SampleSet>> {
    let d = shape.len();
    if d < 3 {
        return Err(DeliError::ShapeMismatch(format!("z-sets need order >= 3, got {d}")));
    }
    if m == 0 {
        return Err(DeliError::SampleRange("m must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = Vec::with_capacity(d - 2);
    for k in 2..d {
        let other_modes: Vec<usize> = (2..d).filter(|&j| j != k).collect();
        let product: usize = other_modes.iter().map(|&j| shape[j]).product();
        if other_modes.is_empty() {
            // Order-3: the empty product has a single element.
            sets.push(SampleSet { label: SampleLabel::Z(k), indices: vec![IndexTuple(vec![])] });
            continue;
        }
        if m > product {
            return Err(DeliError::SampleRange(format!(
                "m = {m} exceeds the {product} tuples available for mode {k}"
            )));
        }
        let picks = sample_without_replacement(&mut rng, product, m);
        let indices = picks
            .into_iter()
            .map(|mut flat| {
                let mut coords = vec![0usize; other_modes.len()];
                for (slot, &j) in other_modes.iter().enumerate().rev() {
                    coords[slot] = flat % shape[j];
                    flat /= shape[j];
                }
                IndexTuple(coords)
            })
            .collect();
        sets.push(SampleSet { label: SampleLabel::Z(k), indices });
    }
    Ok(sets)
}

/// Independently include each index of the product of `axes` with probability
/// `p` (clamped to [0, 1]). Each axis lists its admissible coordinates.
pub fn draw_bernoulli_region(axes: &[Vec<usize>], p: f64, seed: u64, label: SampleLabel) -> SampleSet {
    let p = p.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::new();
    let mut cursor = vec![0usize; axes.len()];
    if axes.iter().any(|a| a.is_empty()) {
        return SampleSet { label, indices };
    }
    loop {
        if p >= 1.0 || rng.gen::<f64>() < p {
            indices.push(IndexTuple(cursor.iter().enumerate().map(|(k, &c)| axes[k][c]).collect()));
        }
        // Odometer increment over the axis grid.
        let mut k = axes.len();
        loop {
            if k == 0 {
                return SampleSet { label, indices };
            }
            k -= 1;
            cursor[k] += 1;
            if cursor[k] < axes[k].len() {
                break;
            }
            cursor[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_set_full() {
        let s = draw_slice_set(5, 5, 0).unwrap();
        let got: Vec<usize> = s.indices.iter().map(|i| i[0]).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn slice_set_deterministic() {
        let a = draw_slice_set(10, 2, 33).unwrap();
        let b = draw_slice_set(10, 2, 33).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(draw_slice_set(10, 11, 0).is_err());
    }

    #[test]
    fn slice_set_roughly_uniform() {
        let n3 = 10;
        let mut counts = vec![0usize; n3];
        let trials = 10_000;
        for seed in 0..trials {
            for idx in &draw_slice_set(n3, 2, seed).unwrap().indices {
                counts[idx[0]] += 1;
            }
        }
        // Chi-squared against uniform: 9 dof, p > 0.001 means stat < 27.88.
        let expected = (2 * trials) as f64 / n3 as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(stat < 27.88, "chi-squared statistic {stat}");
    }

    #[test]
    fn z_sets_order_3_degenerate() {
        let sets = draw_z_sets(&[4, 4, 4], 7, 1).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].indices, vec![IndexTuple(vec![])]);
    }

    #[test]
    fn z_sets_order_4_distinct() {
        let sets = draw_z_sets(&[4, 4, 5, 6], 2, 9).unwrap();
        assert_eq!(sets.len(), 2);
        // Z_2 tuples range over mode 3, Z_3 tuples over mode 2.
        assert_ne!(sets[0].indices[0], sets[0].indices[1]);
        assert!(sets[0].indices.iter().all(|t| t.0.len() == 1 && t[0] < 6));
        assert!(sets[1].indices.iter().all(|t| t.0.len() == 1 && t[0] < 5));
        assert!(draw_z_sets(&[4, 4, 5, 6], 7, 0).is_err());
    }

    #[test]
    fn z_sets_roughly_uniform_over_product() {
        // Order-5 with a 3x3 product for Z_2.
        let shape = [2, 2, 4, 3, 3];
        let mut counts = std::collections::HashMap::new();
        for seed in 0..10_000u64 {
            let sets = draw_z_sets(&shape, 1, seed).unwrap();
            let t = &sets[0].indices[0];
            *counts.entry((t[0], t[1])).or_insert(0usize) += 1;
        }
        let expected = 10_000.0 / 9.0;
        let stat: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 8 dof, p > 0.001 means stat < 26.12.
        assert!(counts.len() == 9 && stat < 26.12, "chi-squared statistic {stat}");
    }

    #[test]
    fn bernoulli_extremes() {
        let axes = vec![(0..4).collect::<Vec<_>>(), (0..5).collect()];
        let full = draw_bernoulli_region(&axes, 1.0, 0, SampleLabel::OmegaM);
        assert_eq!(full.len(), 20);
        let empty = draw_bernoulli_region(&axes, 0.0, 0, SampleLabel::OmegaM);
        assert!(empty.is_empty());
        let clamped = draw_bernoulli_region(&axes, 7.5, 0, SampleLabel::OmegaM);
        assert_eq!(clamped.len(), 20);
    }

    #[test]
    fn bernoulli_concentration() {
        let axes = vec![(0..1000).collect::<Vec<_>>(), (0..100).collect()];
        let p = 0.05;
        let set = draw_bernoulli_region(&axes, p, 77, SampleLabel::Omega(2));
        let n = 100_000.0;
        let mean = n * p;
        let sd = (n * p * (1.0 - p)).sqrt();
        let count = set.len() as f64;
        assert!((count - mean).abs() <= 5.0 * sd, "count {count} vs mean {mean}");
    }

    #[test]
    fn sample_set_text_round_trip() {
        let sets = vec![
            draw_slice_set(8, 3, 5).unwrap(),
            draw_z_sets(&[3, 3, 4, 5], 2, 6).unwrap().remove(0),
            SampleSet {
                label: SampleLabel::L,
                indices: vec![IndexTuple(vec![0, 1]), IndexTuple(vec![2, 2])],
            },
        ];
        let mut buf = Vec::new();
        for s in &sets {
            s.write_text(&mut buf).unwrap();
        }
        let back = SampleSet::read_text(&buf[..]).unwrap();
        assert_eq!(back, sets);
    }
}
