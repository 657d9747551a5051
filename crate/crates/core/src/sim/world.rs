use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::agents::{Amr, AmrState, Route, Worker, WorkerState};
use super::event::{Event, EventKind};
use super::geometry::{Cell, Vec2};
use super::layout::WarehouseLayout;
use super::order::{Order, OrderState};
use super::path::{distance_field, plan_path};
use super::rng::RngStreams;
use super::rules::{GovernorMode, SafetyRuleParams};
use super::scenario::ScenarioConfig;
use super::schedule::{ArrivalCursor, ArrivalSchedule};
use super::SimError;

/// Small slack for comparing accumulated tick times against scheduled times.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub tick: u64,
    pub dt: f64,
}

impl SimClock {
    pub fn now(&self) -> f64 {
        self.tick as f64 * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub order: usize,
    pub amr: usize,
    pub worker: Option<usize>,
}

/// What an AMR perceived at the start of its update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmrSense {
    /// Distance to the closest other AMR or worker, in any direction.
    pub nearest: f64,
    /// Distance to the closest entity that forces an emergency stop, if any.
    pub blocking: Option<f64>,
    pub mode: GovernorMode,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub tick: u64,
    pub t: f64,
    pub events: Vec<Event>,
    pub assignments: Vec<Assignment>,
    /// Per worker: distance to the nearest AMR moving towards them (infinite if none).
    pub person_distances: Vec<f64>,
    pub amr_sensing: Vec<AmrSense>,
    pub amr_displacements: Vec<f64>,
    pub worker_displacements: Vec<f64>,
    pub completed: Vec<usize>,
}

/// Full simulation state. Equal states step to equal successors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub clock: SimClock,
    pub layout: WarehouseLayout,
    pub amrs: Vec<Amr>,
    pub workers: Vec<Worker>,
    /// Every order ever spawned, indexed by id.
    pub orders: Vec<Order>,
    /// Orders waiting for an AMR, oldest first.
    pub queue: VecDeque<usize>,
    /// Assigned orders still waiting for a worker, oldest first.
    pub awaiting_worker: VecDeque<usize>,
    /// Completed order ids in completion order.
    pub completed: Vec<usize>,
    pub schedule: ArrivalSchedule,
    pub arrivals: ArrivalCursor,
    pub rng: RngStreams,
    pub load_duration: f64,
    pub load_range: f64,
    /// Minimum speed for an AMR to count as moving when sampling person distances.
    pub epsilon_speed: f64,
    /// Sequence number of the next event.
    pub event_seq: u64,
}

/// Builds the initial world for a scenario.
pub fn build_world(scenario: &ScenarioConfig) -> Result<WorldState, SimError> {
    scenario.validate()?;
    let layout = scenario.resolve_layout()?;
    let schedule = scenario.schedule();
    let mut rng = RngStreams::seeded(scenario.seed);
    let arrivals = schedule.start(&mut rng.arrivals);

    let homes = layout.amr_home_zone();
    let amrs = (0..scenario.amr_count)
        .map(|id| {
            let home = homes[id % homes.len()];
            Amr {
                id,
                position: layout.cell_center(home),
                velocity: Vec2::ZERO,
                heading: Vec2::new(0.0, -1.0),
                max_speed: scenario.amr_max_speed,
                state: AmrState::Idle,
                assigned_order: None,
                anchor: home,
                route: Route::default(),
                rule: scenario.rule,
                home,
                load_until: None,
                governor: GovernorMode::Clear,
            }
        })
        .collect();
    let rests = layout.worker_rest_zones().len();
    let workers = (0..scenario.worker_count)
        .map(|id| {
            let zone = id % rests;
            Worker {
                id,
                position: layout.rest_stand(zone),
                velocity: Vec2::ZERO,
                max_speed: scenario.worker_max_speed,
                state: WorkerState::Resting,
                assigned_order: None,
                anchor: layout.worker_rest_zones()[zone],
                route: Route::default(),
                picking_until: None,
            }
        })
        .collect();

    Ok(WorldState {
        clock: SimClock { tick: 0, dt: scenario.dt },
        layout,
        amrs,
        workers,
        orders: Vec::new(),
        queue: VecDeque::new(),
        awaiting_worker: VecDeque::new(),
        completed: Vec::new(),
        schedule,
        arrivals,
        rng,
        load_duration: scenario.load_duration,
        load_range: scenario.load_range,
        epsilon_speed: scenario.metrics.safety.epsilon_speed,
        event_seq: 0,
    })
}

impl WorldState {
    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    /// Appends an event stamped with the current clock.
    pub fn make_event(&mut self, kind: EventKind, at: Vec2) -> Event {
        let e = Event {
            seq: self.event_seq,
            tick: self.clock.tick,
            t: self.now(),
            kind,
            order: None,
            amr: None,
            worker: None,
            alternative: None,
            analysis: None,
            x: at.x,
            y: at.y,
        };
        self.event_seq += 1;
        e
    }

    /// Replaces every AMR's rule. Takes effect from the next tick.
    pub fn set_rule(&mut self, rule: SafetyRuleParams) {
        for a in &mut self.amrs {
            a.rule = rule;
        }
    }

    /// Reseeds every random stream; used for what-if replications.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = RngStreams::seeded(seed);
    }

    /// Emits every order whose scheduled arrival is due.
    pub fn spawn_orders(&mut self, events: &mut Vec<Event>) -> Vec<Order> {
        let now = self.now();
        let mut spawned = Vec::new();
        while self.arrivals.next <= now + TIME_EPS {
            let id = self.orders.len();
            let slot_id = self.rng.orders.random_range(0..self.layout.slots().len());
            let order = Order {
                id,
                slot_id,
                arrival_time: self.arrivals.next,
                completion_time: None,
                state: OrderState::Queued,
                amr: None,
                worker: None,
            };
            let at = self.layout.cell_center(self.layout.slots()[slot_id].cell);
            let mut e = self.make_event(EventKind::OrderArrived, at);
            e.order = Some(id);
            events.push(e);
            self.orders.push(order.clone());
            self.queue.push_back(id);
            spawned.push(order);
            self.schedule.advance(&mut self.arrivals, &mut self.rng.arrivals);
        }
        spawned
    }

    /// Matches queued orders to idle AMRs and assigned orders to free workers.
    pub fn dispatch(&mut self, events: &mut Vec<Event>) -> Vec<Assignment> {
        let mut out = Vec::new();

        // Orders that already have an AMR retry for a worker first: they are older.
        let waiting: Vec<usize> = self.awaiting_worker.drain(..).collect();
        for oid in waiting {
            if let Some(w) = self.notify_worker(oid, events) {
                out.push(Assignment { order: oid, amr: self.orders[oid].amr.unwrap(), worker: Some(w) });
            } else {
                self.awaiting_worker.push_back(oid);
            }
        }

        while let Some(&oid) = self.queue.front() {
            let Some(aid) = self.amrs.iter().position(|a| a.state == AmrState::Idle) else {
                break;
            };
            self.queue.pop_front();
            let slot = self.layout.slots()[self.orders[oid].slot_id].cell;
            let amr = &mut self.amrs[aid];
            let path = plan_path(&self.layout, amr.anchor, slot).expect("layout is connected");
            amr.route = Route::along(&self.layout, &path, amr.position, None);
            amr.state = AmrState::ToPickup;
            amr.assigned_order = Some(oid);
            amr.governor = GovernorMode::Clear;
            let at = amr.position;
            let order = &mut self.orders[oid];
            order.state = OrderState::Assigned;
            order.amr = Some(aid);
            let mut e = self.make_event(EventKind::Assigned, at);
            e.order = Some(oid);
            e.amr = Some(aid);
            events.push(e);

            let worker = self.notify_worker(oid, events);
            if worker.is_none() {
                self.awaiting_worker.push_back(oid);
            }
            out.push(Assignment { order: oid, amr: aid, worker });
        }
        out
    }

    /// Sends the free worker closest (by walking distance) to the order's slot.
    fn notify_worker(&mut self, oid: usize, events: &mut Vec<Event>) -> Option<usize> {
        let slot = self.layout.slots()[self.orders[oid].slot_id].clone();
        let dist = distance_field(&self.layout, slot.cell);
        let wid = self
            .workers
            .iter()
            .filter(|w| w.is_available())
            .filter_map(|w| dist[self.layout.index(w.anchor)?].map(|d| (d, w.id)))
            .min()?
            .1;
        let worker = &mut self.workers[wid];
        let path = plan_path(&self.layout, worker.anchor, slot.cell).expect("layout is connected");
        worker.route = Route::along(&self.layout, &path, worker.position, Some(slot.stand));
        worker.state = WorkerState::ToPickup;
        worker.assigned_order = Some(oid);
        worker.picking_until = None;
        let at = worker.position;
        self.orders[oid].worker = Some(wid);
        let mut e = self.make_event(EventKind::WorkerNotified, at);
        e.order = Some(oid);
        e.amr = self.orders[oid].amr;
        e.worker = Some(wid);
        events.push(e);
        Some(wid)
    }

    /// Simultaneous sensing for all AMRs from the current positions.
    ///
    /// An AMR with somewhere to go stops for any worker, or stationary AMR,
    /// strictly ahead of it (frontal half-plane) within its stop radius.
    /// Moving AMRs that block each other in a cycle (head-on pairs being
    /// the common case) would wait forever; within such a cycle the lowest
    /// id ignores the others and drives on.
    pub fn sense(&self) -> Vec<AmrSense> {
        let n = self.amrs.len();
        let headings: Vec<Option<Vec2>> = self.amrs.iter().map(Amr::intended_heading).collect();
        let mut nearest = vec![f64::INFINITY; n];
        let mut hard = vec![None::<f64>; n];
        let mut soft: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];

        for (i, a) in self.amrs.iter().enumerate() {
            let x = a.rule.stop_radius_x;
            let ahead = |p: Vec2| headings[i].is_some_and(|h| h.dot(p - a.position) > 0.0);
            for w in &self.workers {
                let d = a.position.distance(w.position);
                nearest[i] = nearest[i].min(d);
                if d <= x && ahead(w.position) {
                    hard[i] = Some(hard[i].map_or(d, |h: f64| h.min(d)));
                }
            }
            for (j, b) in self.amrs.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = a.position.distance(b.position);
                nearest[i] = nearest[i].min(d);
                if d <= x && ahead(b.position) {
                    if headings[j].is_some() {
                        soft[i].push((j, d));
                    } else {
                        hard[i] = Some(hard[i].map_or(d, |h: f64| h.min(d)));
                    }
                }
            }
        }

        let cycle_leader = cycle_leaders(&soft);
        (0..n)
            .map(|i| {
                let a = &self.amrs[i];
                if headings[i].is_none() {
                    return AmrSense { nearest: nearest[i], blocking: None, mode: GovernorMode::Clear, speed: 0.0 };
                }
                let mut blocking = hard[i];
                for &(j, d) in &soft[i] {
                    if cycle_leader[i] && reaches(&soft, j, i) {
                        continue;
                    }
                    blocking = Some(blocking.map_or(d, |b| b.min(d)));
                }
                let (mode, speed) = if blocking.is_some() {
                    (GovernorMode::Stop, 0.0)
                } else if nearest[i] <= a.rule.slow_radius_y {
                    (GovernorMode::Slow, a.rule.slow_factor * a.max_speed)
                } else {
                    (GovernorMode::Clear, a.max_speed)
                };
                AmrSense { nearest: nearest[i], blocking, mode, speed }
            })
            .collect()
    }

    /// Advances the world by one tick.
    pub fn step(&mut self) -> TickReport {
        self.clock.tick += 1;
        let now = self.now();
        let dt = self.clock.dt;
        let mut events = Vec::new();
        let mut completed = Vec::new();

        self.spawn_orders(&mut events);
        let assignments = self.dispatch(&mut events);

        let sensing = self.sense();
        let mut amr_disp = vec![0.0; self.amrs.len()];
        for i in 0..self.amrs.len() {
            amr_disp[i] = self.update_amr(i, &sensing[i], now, dt, &mut events, &mut completed);
        }
        let mut worker_disp = vec![0.0; self.workers.len()];
        for i in 0..self.workers.len() {
            worker_disp[i] = self.update_worker(i, now, dt);
        }
        let person_distances = (0..self.workers.len())
            .map(|w| self.person_distance(w).expect("worker index in range"))
            .collect();

        TickReport {
            tick: self.clock.tick,
            t: now,
            events,
            assignments,
            person_distances,
            amr_sensing: sensing,
            amr_displacements: amr_disp,
            worker_displacements: worker_disp,
            completed,
        }
    }

    /// Distance from a worker to the nearest AMR that is moving (faster than
    /// `epsilon_speed`) towards them; infinite when there is none.
    pub fn person_distance(&self, person_id: usize) -> Option<f64> {
        let p = self.workers.get(person_id)?.position;
        Some(
            self.amrs
                .iter()
                .filter(|a| a.speed() > self.epsilon_speed && a.velocity.dot(p - a.position) > 0.0)
                .map(|a| a.position.distance(p))
                .fold(f64::INFINITY, f64::min),
        )
    }

    fn update_amr(
        &mut self,
        i: usize,
        sense: &AmrSense,
        now: f64,
        dt: f64,
        events: &mut Vec<Event>,
        completed: &mut Vec<usize>,
    ) -> f64 {
        let has_route = !self.amrs[i].route.is_empty();
        if has_route {
            let prev = self.amrs[i].governor;
            if sense.mode != prev {
                let kind = match sense.mode {
                    GovernorMode::Stop => Some(EventKind::EmergencyStop),
                    GovernorMode::Slow => Some(EventKind::SlowDown),
                    GovernorMode::Clear => None,
                };
                if let Some(kind) = kind {
                    let at = self.amrs[i].position;
                    let mut e = self.make_event(kind, at);
                    e.amr = Some(i);
                    e.order = self.amrs[i].assigned_order;
                    events.push(e);
                }
            }
            self.amrs[i].governor = sense.mode;
        } else {
            self.amrs[i].governor = GovernorMode::Clear;
        }

        let amr = &mut self.amrs[i];
        let start = amr.position;
        if has_route && sense.speed > 0.0 {
            amr.route.advance(&mut amr.position, &mut amr.anchor, sense.speed * dt);
        }
        let disp = amr.position - start;
        amr.velocity = disp * (1.0 / dt);
        if let Some(h) = disp.normalized() {
            amr.heading = h;
        }
        let moved = disp.norm();
        let arrived = amr.route.is_empty();
        let load_done = amr.load_until.is_some_and(|t| now + TIME_EPS >= t);

        match amr.state {
            AmrState::ToPickup if arrived => {
                amr.state = AmrState::WaitingForWorker;
                self.try_start_loading(i, now, events);
            }
            AmrState::WaitingForWorker => self.try_start_loading(i, now, events),
            AmrState::Loading if load_done => {
                let amr = &mut self.amrs[i];
                let oid = amr.assigned_order.expect("loading AMR has an order");
                amr.load_until = None;
                let path = plan_path(&self.layout, amr.anchor, self.layout.delivery_point())
                    .expect("layout is connected");
                amr.route = Route::along(&self.layout, &path, amr.position, None);
                amr.state = AmrState::ToDelivery;
                let at = amr.position;
                self.orders[oid].state = OrderState::InTransit;
                let mut e = self.make_event(EventKind::LoadEnd, at);
                e.order = Some(oid);
                e.amr = Some(i);
                e.worker = self.orders[oid].worker;
                events.push(e);
                if self.amrs[i].route.is_empty() {
                    self.deliver(i, now, events, completed);
                }
            }
            AmrState::ToDelivery if arrived => self.deliver(i, now, events, completed),
            _ => {}
        }
        moved
    }

    fn try_start_loading(&mut self, i: usize, now: f64, events: &mut Vec<Event>) {
        let oid = self.amrs[i].assigned_order.expect("AMR at pickup has an order");
        let Some(wid) = self.orders[oid].worker else { return };
        let w = &self.workers[wid];
        let ready = w.is_waiting_at_pickup()
            && w.assigned_order == Some(oid)
            && w.position.distance(self.amrs[i].position) <= self.load_range;
        if !ready {
            return;
        }
        let until = now + self.load_duration;
        let amr = &mut self.amrs[i];
        amr.state = AmrState::Loading;
        amr.load_until = Some(until);
        let at = amr.position;
        let worker = &mut self.workers[wid];
        worker.state = WorkerState::Picking;
        worker.picking_until = Some(until);
        let mut e = self.make_event(EventKind::LoadStart, at);
        e.order = Some(oid);
        e.amr = Some(i);
        e.worker = Some(wid);
        events.push(e);
    }

    fn deliver(&mut self, i: usize, now: f64, events: &mut Vec<Event>, completed: &mut Vec<usize>) {
        let amr = &mut self.amrs[i];
        let oid = amr.assigned_order.take().expect("delivering AMR has an order");
        amr.state = AmrState::Idle;
        let path = plan_path(&self.layout, amr.anchor, amr.home).expect("layout is connected");
        amr.route = Route::along(&self.layout, &path, amr.position, None);
        amr.governor = GovernorMode::Clear;
        let at = amr.position;
        let order = &mut self.orders[oid];
        order.state = OrderState::Completed;
        order.completion_time = Some(now);
        self.completed.push(oid);
        completed.push(oid);
        let mut e = self.make_event(EventKind::Delivered, at);
        e.order = Some(oid);
        e.amr = Some(i);
        events.push(e);
    }

    fn update_worker(&mut self, i: usize, now: f64, dt: f64) -> f64 {
        let w = &mut self.workers[i];
        let start = w.position;
        match w.state {
            WorkerState::Resting => {}
            WorkerState::ToPickup => {
                w.route.advance(&mut w.position, &mut w.anchor, w.max_speed * dt);
            }
            WorkerState::Picking => {
                if w.picking_until.is_some_and(|t| now + TIME_EPS >= t) {
                    w.picking_until = None;
                    w.assigned_order = None;
                    let dist = distance_field(&self.layout, w.anchor);
                    let zone = self
                        .layout
                        .worker_rest_zones()
                        .iter()
                        .enumerate()
                        .filter_map(|(z, &c)| dist[self.layout.index(c)?].map(|d| (d, z)))
                        .min()
                        .expect("rest zones are connected")
                        .1;
                    let rest = self.layout.worker_rest_zones()[zone];
                    let path = plan_path(&self.layout, w.anchor, rest).expect("layout is connected");
                    w.route = Route::along(&self.layout, &path, w.position, Some(self.layout.rest_stand(zone)));
                    w.state = WorkerState::Returning;
                }
            }
            WorkerState::Returning => {
                w.route.advance(&mut w.position, &mut w.anchor, w.max_speed * dt);
                if w.route.is_empty() {
                    w.state = WorkerState::Resting;
                }
            }
        }
        let disp = w.position - start;
        w.velocity = disp * (1.0 / dt);
        disp.norm()
    }

    /// Count of orders per state, in `[Queued, Assigned, InTransit, Completed]` order.
    pub fn order_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for o in &self.orders {
            c[o.state as usize] += 1;
        }
        c
    }

    pub fn amr_cell(&self, id: usize) -> Cell {
        self.amrs[id].anchor
    }
}

/// `leader[i]` is true when `i` lies on a blocking cycle and has the lowest
/// id among the AMRs on cycles through it.
fn cycle_leaders(edges: &[Vec<(usize, f64)>]) -> Vec<bool> {
    let n = edges.len();
    if edges.iter().all(Vec::is_empty) {
        return vec![false; n];
    }
    (0..n)
        .map(|i| {
            let in_cycle: Vec<usize> = (0..n).filter(|&k| reaches(edges, i, k) && reaches(edges, k, i)).collect();
            !in_cycle.is_empty() && in_cycle.iter().all(|&k| k >= i)
        })
        .collect()
}

/// Whether `to` is reachable from `from` by one or more blocking edges.
fn reaches(edges: &[Vec<(usize, f64)>], from: usize, to: usize) -> bool {
    let mut seen = vec![false; edges.len()];
    let mut stack: Vec<usize> = edges[from].iter().map(|e| e.0).collect();
    while let Some(k) = stack.pop() {
        if k == to {
            return true;
        }
        if !std::mem::replace(&mut seen[k], true) {
            stack.extend(edges[k].iter().map(|e| e.0));
        }
    }
    false
}
