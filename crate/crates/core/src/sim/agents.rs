use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::geometry::{Cell, Vec2};
use super::layout::WarehouseLayout;
use super::path::Path;
use super::rules::{GovernorMode, SafetyRuleParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub point: Vec2,
    /// Grid cell whose centre this is; `None` for off-grid standing spots.
    pub cell: Option<Cell>,
}

/// Remaining waypoints of an agent's current trip.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Route {
    waypoints: VecDeque<Waypoint>,
}

impl Route {
    /// Route along `path` cell centres, optionally ending at an off-grid point.
    pub fn along(layout: &WarehouseLayout, path: &Path, from: Vec2, finish: Option<Vec2>) -> Self {
        let mut waypoints: VecDeque<Waypoint> = path
            .cells
            .iter()
            .map(|&c| Waypoint { point: layout.cell_center(c), cell: Some(c) })
            .collect();
        if let Some(p) = finish {
            waypoints.push_back(Waypoint { point: p, cell: None });
        }
        // Drop leading waypoints the agent is already standing on.
        while waypoints.front().is_some_and(|w| w.point == from) && waypoints.len() > 1 {
            waypoints.pop_front();
        }
        if waypoints.len() == 1 && waypoints[0].point == from {
            waypoints.clear();
        }
        Self { waypoints }
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn next_point(&self) -> Option<Vec2> {
        self.waypoints.front().map(|w| w.point)
    }

    /// Remaining grid cells, in travel order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.waypoints.iter().filter_map(|w| w.cell)
    }

    pub fn clear(&mut self) {
        self.waypoints.clear();
    }

    /// Moves `pos` up to `budget` meters along the route, updating `anchor`
    /// to the last cell centre reached. Returns the distance travelled.
    pub fn advance(&mut self, pos: &mut Vec2, anchor: &mut Cell, mut budget: f64) -> f64 {
        let mut travelled = 0.0;
        while budget > 0.0 {
            let Some(wp) = self.waypoints.front().copied() else { break };
            let gap = pos.distance(wp.point);
            if gap <= budget {
                *pos = wp.point;
                budget -= gap;
                travelled += gap;
                if let Some(c) = wp.cell {
                    *anchor = c;
                }
                self.waypoints.pop_front();
            } else {
                let dir = (wp.point - *pos) * (1.0 / gap);
                *pos = *pos + dir * budget;
                travelled += budget;
                budget = 0.0;
            }
        }
        travelled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmrState {
    Idle,
    ToPickup,
    WaitingForWorker,
    Loading,
    ToDelivery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Amr {
    pub id: usize,
    pub position: Vec2,
    pub velocity: Vec2,
    /// Unit travel direction; kept while stationary.
    pub heading: Vec2,
    pub max_speed: f64,
    pub state: AmrState,
    pub assigned_order: Option<usize>,
    /// Last cell centre the AMR passed; trips are planned from here.
    pub anchor: Cell,
    pub route: Route,
    pub rule: SafetyRuleParams,
    pub home: Cell,
    pub load_until: Option<f64>,
    pub governor: GovernorMode,
}

impl Amr {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// Direction the AMR intends to move in, if it has somewhere to go.
    pub fn intended_heading(&self) -> Option<Vec2> {
        let next = self.route.next_point()?;
        Some((next - self.position).normalized().unwrap_or(self.heading))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkerState {
    Resting,
    ToPickup,
    Picking,
    Returning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worker {
    pub id: usize,
    pub position: Vec2,
    pub velocity: Vec2,
    pub max_speed: f64,
    pub state: WorkerState,
    pub assigned_order: Option<usize>,
    pub anchor: Cell,
    pub route: Route,
    pub picking_until: Option<f64>,
}

impl Worker {
    /// Resting or walking back: free to take a new pick.
    pub fn is_available(&self) -> bool {
        matches!(self.state, WorkerState::Resting | WorkerState::Returning)
    }

    /// Standing at the pick face, waiting for the AMR.
    pub fn is_waiting_at_pickup(&self) -> bool {
        self.state == WorkerState::ToPickup && self.route.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advance_consumes_waypoints_across_corners() {
        let l = WarehouseLayout::builtin_default();
        let path = Path { cells: vec![Cell::new(2, 1), Cell::new(3, 1), Cell::new(3, 2)] };
        let start = l.cell_center(Cell::new(2, 1));
        let mut route = Route::along(&l, &path, start, None);
        assert_eq!(route.len(), 2);
        let mut pos = start;
        let mut anchor = Cell::new(2, 1);
        let s = l.cell_size();
        let moved = route.advance(&mut pos, &mut anchor, 1.5 * s);
        assert!((moved - 1.5 * s).abs() < 1e-12);
        assert_eq!(anchor, Cell::new(3, 1));
        assert!((pos.x - 3.5 * s).abs() < 1e-12 && (pos.y - 2.0 * s).abs() < 1e-12);
        let moved = route.advance(&mut pos, &mut anchor, 5.0 * s);
        assert!((moved - 0.5 * s).abs() < 1e-12);
        assert!(route.is_empty());
        assert_eq!(anchor, Cell::new(3, 2));
    }

    #[test]
    fn route_to_current_position_is_empty() {
        let l = WarehouseLayout::builtin_default();
        let c = Cell::new(2, 1);
        let route = Route::along(&l, &Path { cells: vec![c] }, l.cell_center(c), None);
        assert!(route.is_empty());
    }
}
