//! View orderings: seeded shuffles and a clustered nearest-neighbor tour over
//! camera positions, plus the gradient-variation measure used to compare them.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::SparseGrad;
use crate::error::Result;
use crate::geometry::{distance, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderMode {
    Shuffle,
    Trajectory,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewOrder {
    pub mode: OrderMode,
    pub perm: Vec<usize>,
}

impl ViewOrder {
    pub fn path_length(&self, positions: &[Vec3]) -> f64 {
        path_length(&self.perm, positions)
    }
}

pub fn path_length(perm: &[usize], positions: &[Vec3]) -> f64 {
    perm.windows(2).map(|w| distance(positions[w[0]], positions[w[1]])).sum()
}

pub fn order_views(positions: &[Vec3], mode: OrderMode, seed: u64) -> ViewOrder {
    let m = positions.len();
    let perm = match mode {
        OrderMode::Shuffle => {
            let mut p: Vec<usize> = (0..m).collect();
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            p
        }
        OrderMode::Trajectory => trajectory(positions, seed),
    };
    ViewOrder { mode, perm }
}

fn lex_less(a: Vec3, b: Vec3) -> bool {
    a.partial_cmp(&b) == Some(std::cmp::Ordering::Less)
}

fn trajectory(positions: &[Vec3], seed: u64) -> Vec<usize> {
    let m = positions.len();
    if m <= 1 {
        return (0..m).collect();
    }
    let k = (m as f64).sqrt().ceil() as usize;
    let label = kmeans(positions, k, seed);

    let mut visited = vec![false; m];
    let mut order = Vec::with_capacity(m);
    let mut cur = (0..m)
        .reduce(|a, b| if lex_less(positions[b], positions[a]) { b } else { a })
        .expect("m >= 1");
    loop {
        // tour the current cluster greedily
        let c = label[cur];
        visited[cur] = true;
        order.push(cur);
        while let Some(next) = nearest(positions, &visited, cur, |i| label[i] == c) {
            visited[next] = true;
            order.push(next);
            cur = next;
        }
        // then hop to the closest unvisited view in any other cluster
        match nearest(positions, &visited, cur, |_| true) {
            Some(next) => cur = next,
            None => break,
        }
    }
    order
}

/// Closest unvisited index passing `filter`; ties go to the lower index.
fn nearest(positions: &[Vec3], visited: &[bool], from: usize, filter: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for i in 0..positions.len() {
        if visited[i] || !filter(i) {
            continue;
        }
        let d = distance(positions[from], positions[i]);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Lloyd's algorithm with seeded distinct initial centers.
fn kmeans(positions: &[Vec3], k: usize, seed: u64) -> Vec<usize> {
    let m = positions.len();
    let k = k.min(m).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut rng);
    let mut centers: Vec<Vec3> = idx[..k].iter().map(|&i| positions[i]).collect();
    let mut label = vec![0usize; m];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in positions.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, ctr) in centers.iter().enumerate() {
                let d = distance(*p, *ctr);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if label[i] != best.1 {
                label[i] = best.1;
                changed = true;
            }
        }
        for (c, ctr) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec3> = positions.iter().zip(&label).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                // reseed an empty cluster on a random view
                *ctr = positions[rng.random_range(0..m)];
                continue;
            }
            let n = members.len() as f64;
            let mut s = [0.0; 3];
            for p in members {
                for a in 0..3 {
                    s[a] += p[a];
                }
            }
            *ctr = [s[0] / n, s[1] / n, s[2] / n];
        }
        if !changed {
            break;
        }
    }
    label
}

/// Σ_t ‖g_{π_t}(θ_t) − g_{π_{t+1}}(θ_t)‖² over the union of both active
/// sets. `grad(t, view)` evaluates the gradient of `view` at parameters θ_t.
pub fn gradient_variation(order: &[usize], mut grad: impl FnMut(usize, usize) -> Result<SparseGrad>) -> Result<f64> {
    let mut total = 0.0;
    for t in 0..order.len().saturating_sub(1) {
        let a = grad(t, order[t])?;
        let b = grad(t, order[t + 1])?;
        let keys: BTreeSet<u64> = a.keys().chain(b.keys()).copied().collect();
        for i in keys {
            let ga = a.get(&i).copied().unwrap_or_default();
            let gb = b.get(&i).copied().unwrap_or_default();
            total += ga.iter().zip(&gb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_perm(p: &[usize], m: usize) -> bool {
        let mut s = p.to_vec();
        s.sort();
        s == (0..m).collect::<Vec<_>>()
    }

    #[test]
    fn single_view_is_identity() {
        for mode in [OrderMode::Shuffle, OrderMode::Trajectory] {
            assert_eq!(order_views(&[[1.0, 2.0, 3.0]], mode, 0).perm, vec![0]);
        }
    }

    #[test]
    fn collinear_views_are_monotone() {
        let mut xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.7 + (i % 3) as f64 * 0.01).collect();
        xs.reverse();
        let pos: Vec<Vec3> = xs.iter().map(|&x| [x, 2.0 * x, 0.0]).collect();
        let o = order_views(&pos, OrderMode::Trajectory, 3);
        let along: Vec<f64> = o.perm.iter().map(|&i| pos[i][0]).collect();
        assert!(along.windows(2).all(|w| w[0] < w[1]), "{along:?}");
    }

    #[test]
    fn trajectory_is_shorter_than_shuffle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let pos: Vec<Vec3> = (0..50)
                .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
                .collect();
            let t = order_views(&pos, OrderMode::Trajectory, trial);
            let s = order_views(&pos, OrderMode::Shuffle, trial);
            assert!(is_perm(&t.perm, 50) && is_perm(&s.perm, 50));
            assert!(t.path_length(&pos) <= s.path_length(&pos));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let pos: Vec<Vec3> = (0..30).map(|i| [(i * 7 % 11) as f64, (i * 5 % 13) as f64, 0.0]).collect();
        for mode in [OrderMode::Shuffle, OrderMode::Trajectory] {
            assert_eq!(order_views(&pos, mode, 5), order_views(&pos, mode, 5));
        }
    }

    #[test]
    fn variation_of_identical_views_is_zero() {
        let g = |_: usize, _: usize| -> Result<SparseGrad> { Ok(SparseGrad::from([(3, [1.0; 9])])) };
        assert_eq!(gradient_variation(&[0, 1, 2, 3], g).unwrap(), 0.0);
    }

    #[test]
    fn variation_depends_on_order() {
        let grad = |_: usize, v: usize| -> Result<SparseGrad> {
            let mut g = [0.0; 9];
            g[0] = v as f64 * v as f64;
            Ok(SparseGrad::from([(0, g)]))
        };
        let a = gradient_variation(&[0, 1, 2], grad).unwrap();
        let b = gradient_variation(&[1, 0, 2], grad).unwrap();
        assert_ne!(a, b);
        // disjoint supports count both sides
        let disjoint = |_: usize, v: usize| -> Result<SparseGrad> { Ok(SparseGrad::from([(v as u64, [1.0; 9])])) };
        assert_eq!(gradient_variation(&[0, 1], disjoint).unwrap(), 18.0);
    }
}
