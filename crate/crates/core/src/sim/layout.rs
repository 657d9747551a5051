//! Warehouse floor plans.
//!
//! A layout is plain data: a character map plus a couple of scalars, read
//! from a small TOML document. Everything else (racks, slots, zones) is
//! derived from the map when the document is parsed.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geometry::{Cell, Vec2};
use super::SimError;

pub const DEFAULT_LAYOUT: &str = include_str!("../../data/default_layout.toml");

const LAYOUT_VERSION: u32 = 1;

/// A connected block of rack cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rack {
    pub id: usize,
    pub cells: Vec<Cell>,
}

/// An item slot, reached from a walkable access cell in front of a rack face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub id: usize,
    pub cell: Cell,
    pub rack: usize,
    /// Where a picking worker stands: offset from the access cell towards the rack.
    pub stand: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayoutDoc {
    version: u32,
    cell_size: f64,
    stand_offset: f64,
    map: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayoutDoc", into = "LayoutDoc")]
pub struct WarehouseLayout {
    rows: Vec<String>,
    width: i32,
    height: i32,
    cell_size: f64,
    stand_offset: f64,
    walkable: Vec<bool>,
    racks: Vec<Rack>,
    slots: Vec<Slot>,
    delivery_point: Cell,
    amr_home_zone: Vec<Cell>,
    worker_rest_zones: Vec<Cell>,
    rest_stands: Vec<Vec2>,
}

impl From<WarehouseLayout> for LayoutDoc {
    fn from(l: WarehouseLayout) -> Self {
        LayoutDoc {
            version: LAYOUT_VERSION,
            cell_size: l.cell_size,
            stand_offset: l.stand_offset,
            map: l.rows.join("\n"),
        }
    }
}

impl TryFrom<LayoutDoc> for WarehouseLayout {
    type Error = SimError;

    fn try_from(doc: LayoutDoc) -> Result<Self, SimError> {
        if doc.version != LAYOUT_VERSION {
            return Err(SimError::InvalidScenario(format!(
                "unsupported layout version {}",
                doc.version
            )));
        }
        WarehouseLayout::from_map(&doc.map, doc.cell_size, doc.stand_offset)
    }
}

impl WarehouseLayout {
    pub fn builtin_default() -> Self {
        Self::parse(DEFAULT_LAYOUT).expect("bundled layout is valid")
    }

    /// Parses a layout TOML document.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let doc: LayoutDoc = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        doc.try_into()
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidScenario(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Builds a layout from a character map (see `data/default_layout.toml`
    /// for the legend) and validates it.
    pub fn from_map(map: &str, cell_size: f64, stand_offset: f64) -> Result<Self, SimError> {
        let invalid = |msg: String| SimError::InvalidScenario(format!("layout: {msg}"));
        if !(cell_size > 0.0) {
            return Err(invalid("cell_size must be positive".into()));
        }
        if !(0.0..cell_size).contains(&stand_offset) {
            return Err(invalid("stand_offset must lie in [0, cell_size)".into()));
        }
        let rows: Vec<String> = map
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if height == 0 || width == 0 {
            return Err(invalid("empty map".into()));
        }
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.chars().count() != width) {
            return Err(invalid(format!("row {i} has a different width")));
        }

        let mut walkable = vec![false; width * height];
        let mut rack_mask = vec![false; width * height];
        let mut slot_cells = Vec::new();
        let mut delivery = Vec::new();
        let mut homes = Vec::new();
        let mut rests = Vec::new();
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                let cell = Cell::new(x as i32, y as i32);
                let idx = y * width + x;
                match ch {
                    '#' => {}
                    'R' => rack_mask[idx] = true,
                    '.' => walkable[idx] = true,
                    's' => {
                        walkable[idx] = true;
                        slot_cells.push(cell);
                    }
                    'D' => {
                        walkable[idx] = true;
                        delivery.push(cell);
                    }
                    'H' => {
                        walkable[idx] = true;
                        homes.push(cell);
                    }
                    'W' => {
                        walkable[idx] = true;
                        rests.push(cell);
                    }
                    other => return Err(invalid(format!("unknown map symbol {other:?} at {cell}"))),
                }
            }
        }
        if delivery.len() != 1 {
            return Err(invalid(format!("expected exactly one delivery point, found {}", delivery.len())));
        }
        if homes.is_empty() || rests.is_empty() || slot_cells.is_empty() {
            return Err(invalid("map needs at least one slot, AMR home and worker rest cell".into()));
        }

        let mut layout = WarehouseLayout {
            rows,
            width: width as i32,
            height: height as i32,
            cell_size,
            stand_offset,
            walkable,
            racks: Vec::new(),
            slots: Vec::new(),
            delivery_point: delivery[0],
            amr_home_zone: homes,
            worker_rest_zones: rests,
            rest_stands: Vec::new(),
        };
        layout.racks = label_racks(&rack_mask, width, height);
        let rack_of = |c: Cell| {
            layout.racks.iter().position(|r| r.cells.binary_search(&c).is_ok())
        };
        let mut slots = Vec::with_capacity(slot_cells.len());
        for (id, cell) in slot_cells.into_iter().enumerate() {
            let face = cell
                .neighbors()
                .into_iter()
                .find_map(|n| rack_of(n).map(|r| (n, r)))
                .ok_or_else(|| invalid(format!("slot cell {cell} does not face a rack")))?;
            slots.push(Slot {
                id,
                cell,
                rack: face.1,
                stand: layout.offset_towards(cell, face.0),
            });
        }
        layout.slots = slots;
        layout.rest_stands = layout
            .worker_rest_zones
            .iter()
            .map(|&c| layout.stand_spot(c))
            .collect();
        layout.check_connected()?;
        Ok(layout)
    }

    fn offset_towards(&self, cell: Cell, toward: Cell) -> Vec2 {
        let dir = Vec2::new((toward.x - cell.x) as f64, (toward.y - cell.y) as f64);
        self.cell_center(cell) + dir * self.stand_offset
    }

    /// Standing position for a stationary person in `cell`: pushed towards the
    /// first blocked neighbour (N, E, S, W), so that people waiting beside a
    /// rack or wall stay off the cell-centre lines AMRs drive along.
    pub fn stand_spot(&self, cell: Cell) -> Vec2 {
        cell.neighbors()
            .into_iter()
            .find(|&n| !self.is_walkable(n))
            .map_or_else(|| self.cell_center(cell), |n| self.offset_towards(cell, n))
    }

    fn check_connected(&self) -> Result<(), SimError> {
        let mut seen = vec![false; self.walkable.len()];
        let mut queue = VecDeque::from([self.delivery_point]);
        seen[self.index(self.delivery_point).unwrap()] = true;
        while let Some(c) = queue.pop_front() {
            for n in c.neighbors() {
                if let Some(i) = self.walkable_index(n) {
                    if !seen[i] {
                        seen[i] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        let relevant = self
            .slots
            .iter()
            .map(|s| s.cell)
            .chain(self.amr_home_zone.iter().copied())
            .chain(self.worker_rest_zones.iter().copied());
        for c in relevant {
            if !seen[self.index(c).unwrap()] {
                return Err(SimError::InvalidScenario(format!(
                    "layout: cell {c} is not connected to the delivery point"
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    /// Floor extent in meters.
    pub fn bounds(&self) -> Vec2 {
        Vec2::new(self.width as f64 * self.cell_size, self.height as f64 * self.cell_size)
    }

    pub fn cell_count(&self) -> usize {
        self.walkable.len()
    }

    pub fn index(&self, c: Cell) -> Option<usize> {
        (c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height)
            .then(|| (c.y * self.width + c.x) as usize)
    }

    pub fn cell_of_index(&self, i: usize) -> Cell {
        Cell::new(i as i32 % self.width, i as i32 / self.width)
    }

    fn walkable_index(&self, c: Cell) -> Option<usize> {
        self.index(c).filter(|&i| self.walkable[i])
    }

    pub fn is_walkable(&self, c: Cell) -> bool {
        self.walkable_index(c).is_some()
    }

    pub fn cell_center(&self, c: Cell) -> Vec2 {
        Vec2::new((c.x as f64 + 0.5) * self.cell_size, (c.y as f64 + 0.5) * self.cell_size)
    }

    pub fn racks(&self) -> &[Rack] {
        &self.racks
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn delivery_point(&self) -> Cell {
        self.delivery_point
    }

    pub fn amr_home_zone(&self) -> &[Cell] {
        &self.amr_home_zone
    }

    pub fn worker_rest_zones(&self) -> &[Cell] {
        &self.worker_rest_zones
    }

    pub fn rest_stand(&self, zone: usize) -> Vec2 {
        self.rest_stands[zone]
    }

    /// The map rows, one string per grid row.
    pub fn rows(&self) -> &[String] {
        &self.rows
    }
}

fn label_racks(mask: &[bool], width: usize, height: usize) -> Vec<Rack> {
    let mut label = vec![usize::MAX; mask.len()];
    let mut racks = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let id = racks.len();
        let mut cells = Vec::new();
        let mut queue = VecDeque::from([start]);
        label[start] = id;
        while let Some(i) = queue.pop_front() {
            let c = Cell::new((i % width) as i32, (i / width) as i32);
            cells.push(c);
            for n in c.neighbors() {
                if n.x < 0 || n.y < 0 || n.x as usize >= width || n.y as usize >= height {
                    continue;
                }
                let j = n.y as usize * width + n.x as usize;
                if mask[j] && label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            }
        }
        cells.sort();
        racks.push(Rack { id, cells });
    }
    racks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_shape() {
        let l = WarehouseLayout::builtin_default();
        assert_eq!((l.width(), l.height()), (48, 32));
        assert_eq!(l.racks().len(), 4);
        assert_eq!(l.slots().len(), 96);
        assert_eq!(l.amr_home_zone().len(), 15);
        assert_eq!(l.worker_rest_zones().len(), 10);
        assert!(l.is_walkable(l.delivery_point()));
    }

    #[test]
    fn slot_stand_points_into_rack() {
        let l = WarehouseLayout::builtin_default();
        let s = &l.slots()[0];
        let c = l.cell_center(s.cell);
        assert!((s.stand.distance(c) - 0.75).abs() < 1e-12);
        // first slot row sits above rack A, so the worker stands south of the centre
        assert!(s.stand.y > c.y);
    }

    #[test]
    fn disconnected_home_is_rejected() {
        let map = "\
#######
#D.s..#
#..R..#
#W....#
###H###
#######";
        assert!(WarehouseLayout::from_map(map, 1.0, 0.5).is_ok());
        let walled = "\
#######
#D.s..#
#..R..#
#W#...#
##H####
#######";
        let err = WarehouseLayout::from_map(walled, 1.0, 0.5).unwrap_err();
        assert!(matches!(err, SimError::InvalidScenario(m) if m.contains("not connected")));
    }

    #[test]
    fn rejects_unknown_symbols_and_ragged_rows() {
        assert!(WarehouseLayout::from_map("#D?#", 1.0, 0.5).is_err());
        assert!(WarehouseLayout::from_map("#Ds#\n#W", 1.0, 0.5).is_err());
    }

    #[test]
    fn serde_round_trip_keeps_layout() {
        let l = WarehouseLayout::builtin_default();
        let json = serde_json::to_string(&l).unwrap();
        let back: WarehouseLayout = serde_json::from_str(&json).unwrap();
        assert_eq!(l, back);
    }
}
