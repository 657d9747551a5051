use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderState {
    Queued,
    Assigned,
    InTransit,
    Completed,
}

/// A single-item order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: usize,
    pub slot_id: usize,
    pub arrival_time: f64,
    pub completion_time: Option<f64>,
    pub state: OrderState,
    pub amr: Option<usize>,
    pub worker: Option<usize>,
}

impl Order {
    pub fn service_time(&self) -> Option<f64> {
        self.completion_time.map(|c| c - self.arrival_time)
    }
}
