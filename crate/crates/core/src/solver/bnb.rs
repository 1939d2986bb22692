//! Spatial branch and bound in acceleration coordinates.
//!
//! On a box `[l, h]` the square is bounded above by its secant,
//! `a^2 <= (l + h) a - l h`, with equality at both ends. Maximizing the sum
//! of secants over the polytope therefore bounds the excitation from above,
//! and the reverse-convex row `a'a >= R` is relaxed to the linear cut
//! `sum (l_k + h_k) a_k >= R + sum l_k h_k`. Both relaxations are LPs and
//! become exact as boxes shrink. Nodes are explored best-bound first with
//! ties broken by creation order, so runs are reproducible.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::Result;

use super::lp::{Polytope, RangeRow};

/// Stop reason of a search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    /// Gap closed to tolerance.
    Converged,
    /// No feasible point exists.
    Infeasible,
    /// Node budget used up.
    Budget,
    /// A target value was certified reached or unreachable.
    TargetDecided,
}

#[derive(Debug, Clone)]
pub(crate) struct SearchResult {
    pub outcome: Outcome,
    pub incumbent: Option<(f64, Vec<f64>)>,
    /// Best bound on the optimum (upper for maximization, lower for minimization).
    pub bound: f64,
    pub nodes: usize,
}

struct Node {
    key: f64,
    id: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Relaxation optimum at this node.
    point: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then_with(|| other.id.cmp(&self.id))
    }
}

fn secant_rhs(lo: &[f64], hi: &[f64]) -> (Vec<f64>, f64) {
    let slope: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| l + h).collect();
    let offset: f64 = lo.iter().zip(hi).map(|(l, h)| l * h).sum();
    (slope, offset)
}

fn sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Coordinate with the largest secant gap `(a - l)(h - a)`, lowest index on ties.
fn branch_choice(point: &[f64], lo: &[f64], hi: &[f64]) -> (usize, f64) {
    let mut best = (0, -1.0);
    for k in 0..point.len() {
        let g = (point[k] - lo[k]) * (hi[k] - point[k]);
        if g > best.1 {
            best = (k, g);
        }
    }
    best
}

fn children(node: &Node, k: usize) -> [(Vec<f64>, Vec<f64>); 2] {
    let (l, h) = (node.lo[k], node.hi[k]);
    let w = h - l;
    let split = node.point[k].clamp(l + 0.05 * w, h - 0.05 * w);
    let mut left_hi = node.hi.clone();
    left_hi[k] = split;
    let mut right_lo = node.lo.clone();
    right_lo[k] = split;
    [(node.lo.clone(), left_hi), (right_lo, node.hi.clone())]
}

pub(crate) struct Limits {
    pub tol: f64,
    pub node_budget: usize,
    /// Stop once the incumbent reaches this value or the bound falls below it.
    pub target: Option<f64>,
}

fn gap(upper: f64, lower: f64) -> f64 {
    (upper - lower) / upper.abs().max(1.0)
}

/// Maximize `a'a` over the polytope restricted to the box `[lo, hi]`.
pub(crate) fn maximize_excitation(poly: &Polytope, lo: Vec<f64>, hi: Vec<f64>, limits: &Limits) -> Result<SearchResult> {
    let relax = |lo: &[f64], hi: &[f64]| -> Result<Option<(f64, Vec<f64>)>> {
        let (slope, offset) = secant_rhs(lo, hi);
        Ok(poly.solve(&slope, true, lo, hi, &[])?.map(|(v, a)| (v - offset, a)))
    };
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut heap = BinaryHeap::new();
    let mut next_id = 0;
    let mut nodes = 0;
    // Largest bound among nodes discarded as within tolerance.
    let mut pruned = f64::NEG_INFINITY;
    let consider = |a: &[f64], incumbent: &mut Option<(f64, Vec<f64>)>| {
        let v = sq(a);
        if incumbent.as_ref().is_none_or(|(best, _)| v > *best) {
            *incumbent = Some((v, a.to_vec()));
        }
    };

    let Some((root_ub, root_pt)) = relax(&lo, &hi)? else {
        return Ok(SearchResult {
            outcome: Outcome::Infeasible,
            incumbent: None,
            bound: f64::NEG_INFINITY,
            nodes: 1,
        });
    };
    nodes += 1;
    consider(&root_pt, &mut incumbent);
    heap.push(Node {
        key: root_ub,
        id: next_id,
        lo,
        hi,
        point: root_pt,
    });
    next_id += 1;

    loop {
        let best = incumbent.as_ref().map(|x| x.0).unwrap_or(f64::NEG_INFINITY);
        let Some(top) = heap.peek() else {
            return Ok(SearchResult {
                outcome: Outcome::Converged,
                incumbent,
                bound: best.max(pruned),
                nodes,
            });
        };
        let upper = top.key.max(best).max(pruned);
        if let Some(t) = limits.target {
            if best >= t || upper < t {
                return Ok(SearchResult {
                    outcome: Outcome::TargetDecided,
                    incumbent,
                    bound: upper,
                    nodes,
                });
            }
        }
        if gap(upper, best) <= limits.tol {
            return Ok(SearchResult {
                outcome: Outcome::Converged,
                incumbent,
                bound: upper,
                nodes,
            });
        }
        if nodes >= limits.node_budget {
            return Ok(SearchResult {
                outcome: Outcome::Budget,
                incumbent,
                bound: upper,
                nodes,
            });
        }
        let node = heap.pop().expect("peeked");
        let (k, g) = branch_choice(&node.point, &node.lo, &node.hi);
        if g <= 1e-14 {
            // The relaxation is exact here and its point already counted.
            continue;
        }
        for (clo, chi) in children(&node, k) {
            nodes += 1;
            if let Some((ub, pt)) = relax(&clo, &chi)? {
                consider(&pt, &mut incumbent);
                let best = incumbent.as_ref().map(|x| x.0).unwrap_or(f64::NEG_INFINITY);
                if gap(ub, best) > limits.tol {
                    heap.push(Node {
                        key: ub,
                        id: next_id,
                        lo: clo,
                        hi: chi,
                        point: pt,
                    });
                    next_id += 1;
                } else {
                    pruned = pruned.max(ub);
                }
            }
        }
    }
}

/// Point where the segment from `inside` (excitation below `r`) to
/// `outside` (excitation at least `r`) first reaches excitation `r`.
fn sphere_crossing(inside: &[f64], outside: &[f64], r: f64) -> Option<Vec<f64>> {
    let d: Vec<f64> = outside.iter().zip(inside).map(|(o, i)| o - i).collect();
    let qa = sq(&d);
    if qa == 0.0 {
        return None;
    }
    let qb = 2.0 * inside.iter().zip(&d).map(|(x, y)| x * y).sum::<f64>();
    let qc = sq(inside) - r;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    // qc < 0 so the larger root is the one in (0, 1].
    let t = ((-qb + disc.sqrt()) / (2.0 * qa)).min(1.0);
    let mut x: Vec<f64> = inside.iter().zip(&d).map(|(a, b)| a + t * b).collect();
    // Nudge onto the feasible side if rounding left it a hair short.
    let mut t2 = t;
    while sq(&x) < r && t2 < 1.0 {
        t2 = (t2 + 1e-12).min(1.0);
        x = inside.iter().zip(&d).map(|(a, b)| a + t2 * b).collect();
    }
    (sq(&x) >= r).then_some(x)
}

/// Minimize `cost . a` over the polytope and box subject to `a'a >= r`.
///
/// `anchors` are points of the polytope with `a'a >= r`, used to turn
/// relaxation points that fall short of `r` into feasible incumbents.
pub(crate) fn minimize_reverse_convex(
    poly: &Polytope,
    cost: &[f64],
    r: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    anchors: &[Vec<f64>],
    limits: &Limits,
) -> Result<SearchResult> {
    let value = |a: &[f64]| -> f64 { cost.iter().zip(a).map(|(c, x)| c * x).sum() };
    let relax = |lo: &[f64], hi: &[f64]| -> Result<Option<(f64, Vec<f64>)>> {
        let (slope, offset) = secant_rhs(lo, hi);
        let cut = RangeRow {
            coeffs: slope.into_iter().enumerate().collect(),
            lo: r + offset,
            hi: f64::INFINITY,
        };
        poly.solve(cost, false, lo, hi, &[cut])
    };
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    for a in anchors {
        if sq(a) >= r {
            let v = value(a);
            if incumbent.as_ref().is_none_or(|(b, _)| v < *b) {
                incumbent = Some((v, a.clone()));
            }
        }
    }
    let consider = |pt: &[f64], incumbent: &mut Option<(f64, Vec<f64>)>| {
        let mut candidates = Vec::new();
        if sq(pt) >= r {
            candidates.push(pt.to_vec());
        } else {
            let inc_point = incumbent.as_ref().map(|x| x.1.clone());
            for anchor in anchors.iter().chain(inc_point.as_ref()) {
                if let Some(x) = sphere_crossing(pt, anchor, r) {
                    candidates.push(x);
                }
            }
        }
        for x in candidates {
            let v = value(&x);
            if incumbent.as_ref().is_none_or(|(b, _)| v < *b) {
                *incumbent = Some((v, x));
            }
        }
    };

    let mut heap = BinaryHeap::new();
    let mut next_id = 0;
    let mut nodes = 1;
    // Smallest bound among nodes discarded as within tolerance.
    let mut pruned = f64::INFINITY;
    let Some((root_lb, root_pt)) = relax(&lo, &hi)? else {
        return Ok(SearchResult {
            outcome: Outcome::Infeasible,
            incumbent: None,
            bound: f64::INFINITY,
            nodes,
        });
    };
    consider(&root_pt, &mut incumbent);
    // Keys are negated so the max-heap pops the lowest bound first.
    heap.push(Node {
        key: -root_lb,
        id: next_id,
        lo,
        hi,
        point: root_pt,
    });
    next_id += 1;

    loop {
        let best = incumbent.as_ref().map(|x| x.0).unwrap_or(f64::INFINITY);
        let Some(top) = heap.peek() else {
            let outcome = if incumbent.is_some() {
                Outcome::Converged
            } else {
                Outcome::Infeasible
            };
            return Ok(SearchResult {
                outcome,
                incumbent,
                bound: best.min(pruned),
                nodes,
            });
        };
        let lower = (-top.key).min(best).min(pruned);
        if best.is_finite() && gap(best, lower) <= limits.tol {
            return Ok(SearchResult {
                outcome: Outcome::Converged,
                incumbent,
                bound: lower,
                nodes,
            });
        }
        if nodes >= limits.node_budget {
            return Ok(SearchResult {
                outcome: Outcome::Budget,
                incumbent,
                bound: lower,
                nodes,
            });
        }
        let node = heap.pop().expect("peeked");
        let (k, g) = branch_choice(&node.point, &node.lo, &node.hi);
        if g <= 1e-14 {
            continue;
        }
        for (clo, chi) in children(&node, k) {
            nodes += 1;
            if let Some((lb, pt)) = relax(&clo, &chi)? {
                consider(&pt, &mut incumbent);
                let best = incumbent.as_ref().map(|x| x.0).unwrap_or(f64::INFINITY);
                if !best.is_finite() || gap(best, lb) > limits.tol {
                    heap.push(Node {
                        key: -lb,
                        id: next_id,
                        lo: clo,
                        hi: chi,
                        point: pt,
                    });
                    next_id += 1;
                } else {
                    pruned = pruned.min(lb);
                }
            }
        }
    }
}
