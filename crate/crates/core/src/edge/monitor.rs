use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::types::EdgeId;
use crate::wire::{Message, Reader, Writer};

/// Sent to the cloud when the edge hit ratio has fallen too low.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRequest {
    pub edge: EdgeId,
    pub hit_ratio: f64,
}

impl Message for UpdateRequest {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.edge.0);
        w.put_u64(self.hit_ratio.to_bits());
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let edge = EdgeId(r.u32()?);
        let hit_ratio = f64::from_bits(r.u64()?);
        if !(0.0..=1.0).contains(&hit_ratio) {
            return Err(Error::Malformed("hit ratio"));
        }
        Ok(Self { edge, hit_ratio })
    }
}

/// Edge hit ratio (local or share-index) over the last `window` lookups.
#[derive(Debug, Clone)]
pub struct HitRatioMonitor {
    edge: EdgeId,
    window: usize,
    threshold: f64,
    recent: VecDeque<bool>,
    hits: usize,
}

impl HitRatioMonitor {
    pub fn new(edge: EdgeId, window: usize, threshold: f64) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("monitor window must be positive".into()));
        }
        Ok(Self {
            edge,
            window,
            threshold,
            recent: VecDeque::with_capacity(window),
            hits: 0,
        })
    }

    pub fn ratio(&self) -> Option<f64> {
        (!self.recent.is_empty()).then(|| self.hits as f64 / self.recent.len() as f64)
    }

    /// Records one lookup. Once the window is full and its ratio is below
    /// the threshold an update is requested and the window starts over.
    pub fn record(&mut self, hit: bool) -> Option<UpdateRequest> {
        self.recent.push_back(hit);
        self.hits += usize::from(hit);
        if self.recent.len() > self.window {
            let old = self.recent.pop_front().expect("non-empty");
            self.hits -= usize::from(old);
        }
        if self.recent.len() == self.window {
            let ratio = self.hits as f64 / self.window as f64;
            if ratio < self.threshold {
                self.reset();
                return Some(UpdateRequest {
                    edge: self.edge,
                    hit_ratio: ratio,
                });
            }
        }
        None
    }

    pub fn reset(&mut self) {
        self.recent.clear();
        self.hits = 0;
    }
}
