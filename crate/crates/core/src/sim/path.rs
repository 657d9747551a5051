use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use super::geometry::Cell;
use super::layout::WarehouseLayout;
use super::SimError;

/// A grid path including both endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub cells: Vec<Cell>,
}

impl Path {
    /// Number of moves (cells minus one).
    pub fn len(&self) -> usize {
        self.cells.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shortest 4-connected path by A* with the Manhattan heuristic.
///
/// Neighbours are expanded N, E, S, W and the open set breaks `f` ties by
/// insertion order, so the result is fully deterministic.
pub fn plan_path(layout: &WarehouseLayout, from: Cell, to: Cell) -> Result<Path, SimError> {
    let unreachable = || SimError::Unreachable { from, to };
    let (Some(start), Some(goal)) = (layout.index(from), layout.index(to)) else {
        return Err(unreachable());
    };
    if !layout.is_walkable(from) || !layout.is_walkable(to) {
        return Err(unreachable());
    }

    let n = layout.cell_count();
    let mut g = vec![u32::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    g[start] = 0;
    open.push(Reverse((from.manhattan(to), seq, start)));

    while let Some(Reverse((_, _, i))) = open.pop() {
        if closed[i] {
            continue;
        }
        if i == goal {
            let mut cells = vec![to];
            let mut cur = i;
            while cur != start {
                cur = parent[cur];
                cells.push(layout.cell_of_index(cur));
            }
            cells.reverse();
            return Ok(Path { cells });
        }
        closed[i] = true;
        let here = layout.cell_of_index(i);
        for nb in here.neighbors() {
            if !layout.is_walkable(nb) {
                continue;
            }
            let j = layout.index(nb).unwrap();
            let cand = g[i] + 1;
            if cand < g[j] {
                g[j] = cand;
                parent[j] = i;
                seq += 1;
                open.push(Reverse((cand + nb.manhattan(to), seq, j)));
            }
        }
    }
    Err(unreachable())
}

/// Breadth-first step distances from `from` to every cell (`None` when
/// unreachable or blocked).
pub fn distance_field(layout: &WarehouseLayout, from: Cell) -> Vec<Option<u32>> {
    let mut dist = vec![None; layout.cell_count()];
    let Some(start) = layout.index(from).filter(|_| layout.is_walkable(from)) else {
        return dist;
    };
    dist[start] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        let d = dist[layout.index(c).unwrap()].unwrap();
        for nb in c.neighbors() {
            if layout.is_walkable(nb) {
                let j = layout.index(nb).unwrap();
                if dist[j].is_none() {
                    dist[j] = Some(d + 1);
                    queue.push_back(nb);
                }
            }
        }
    }
    dist
}
