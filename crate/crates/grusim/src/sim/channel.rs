//! Bounded channel runtime.
//!
//! A channel is a ring of items with per-item visibility times (enqueue time
//! plus the channel's delivery latency). Broadcast channels have one read
//! cursor per consumer; an item's slot is reclaimed only once every consumer
//! has released it, so a slow consumer backpressures the producer through
//! the shared capacity. Readers address items by absolute sequence number,
//! which separates *reading* a word (pacing) from *releasing* its buffer
//! slot (the tile-local ping-pong lifetime).

use crate::plan::Gate;

#[derive(Debug, Clone)]
pub enum Item {
    /// One 32-bit stream word.
    Word(f32),
    /// Identified packet: (gate, row) plus one word of payload.
    Packet { gate: Gate, row: u32, value: f32 },
    /// Cascade accumulator block (one value per vector lane).
    Block(Vec<f32>),
    /// Fabric-internal whole-vector handoff.
    Vector(Vec<f32>),
}

/// Result of a sequenced read.
#[derive(Debug)]
pub enum ReadOutcome<'a> {
    /// Item is present and visible; the borrow is valid until the next write.
    Ready { item: &'a Item, visible: u64 },
    /// Item is enqueued but not yet visible.
    Pending { visible: u64 },
    /// Item has not been written yet.
    Absent,
}

#[derive(Debug)]
pub struct ChannelRt {
    pub name: String,
    pub capacity: usize,
    pub latency: u64,
    /// Sequence number of `ring[0]`.
    base_seq: u64,
    ring: Vec<(Item, u64)>,
    /// Per-consumer released-through sequence (exclusive).
    released: Vec<u64>,
    /// Next sequence to be written.
    next_seq: u64,
}

impl ChannelRt {
    pub fn new(name: String, capacity: usize, latency: u64, n_consumers: usize) -> Self {
        assert!(capacity >= 1, "channel {name} must hold at least one item");
        assert!(n_consumers >= 1, "channel {name} must have a consumer");
        Self {
            name,
            capacity,
            latency,
            base_seq: 0,
            ring: Vec::new(),
            released: vec![0; n_consumers],
            next_seq: 0,
        }
    }

    pub fn has_space(&self) -> bool {
        self.ring.len() < self.capacity
    }

    /// Enqueue at `now`; the item becomes visible at `now + latency`.
    /// Returns the visibility time. Panics if full: callers must check
    /// `has_space` first, which keeps capacity violations loud.
    pub fn push(&mut self, item: Item, now: u64) -> u64 {
        assert!(
            self.has_space(),
            "backpressure violation: channel {} written while full",
            self.name
        );
        let visible = now + self.latency;
        self.ring.push((item, visible));
        self.next_seq += 1;
        visible
    }

    /// Look at absolute sequence `seq` for one consumer.
    pub fn read(&self, seq: u64, now: u64) -> ReadOutcome<'_> {
        if seq >= self.next_seq {
            return ReadOutcome::Absent;
        }
        assert!(
            seq >= self.base_seq,
            "channel {}: reading seq {seq} already reclaimed (base {})",
            self.name,
            self.base_seq
        );
        let (item, visible) = &self.ring[(seq - self.base_seq) as usize];
        if *visible <= now {
            ReadOutcome::Ready {
                item,
                visible: *visible,
            }
        } else {
            ReadOutcome::Pending { visible: *visible }
        }
    }

    /// Release items below `seq` for `consumer`. Returns true if any slot was
    /// reclaimed (producer may unblock).
    pub fn release_through(&mut self, consumer: usize, seq: u64) -> bool {
        assert!(
            seq <= self.next_seq,
            "channel {}: releasing unwritten seq {seq}",
            self.name
        );
        if seq <= self.released[consumer] {
            return false;
        }
        self.released[consumer] = seq;
        let min_released = *self.released.iter().min().expect("has consumers");
        let mut freed = false;
        while self.base_seq < min_released {
            self.ring.remove(0);
            self.base_seq += 1;
            freed = true;
        }
        freed
    }

    pub fn released_through(&self, consumer: usize) -> u64 {
        self.released[consumer]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visibility_respects_latency() {
        let mut ch = ChannelRt::new("t".into(), 4, 3, 1);
        ch.push(Item::Word(1.0), 10);
        match ch.read(0, 10) {
            ReadOutcome::Pending { visible } => assert_eq!(visible, 13),
            other => panic!("{other:?}"),
        }
        match ch.read(0, 13) {
            ReadOutcome::Ready { visible, .. } => assert_eq!(visible, 13),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn capacity_blocks_until_all_consumers_release() {
        let mut ch = ChannelRt::new("b".into(), 2, 0, 2);
        ch.push(Item::Word(1.0), 0);
        ch.push(Item::Word(2.0), 0);
        assert!(!ch.has_space());
        assert!(!ch.release_through(0, 1)); // other consumer still holds seq 0
        assert!(ch.release_through(1, 1));
        assert!(ch.has_space());
    }

    #[test]
    #[should_panic(expected = "backpressure violation")]
    fn overfull_write_panics() {
        let mut ch = ChannelRt::new("p".into(), 1, 0, 1);
        ch.push(Item::Word(1.0), 0);
        ch.push(Item::Word(2.0), 0);
    }

    #[test]
    fn sequenced_reads_survive_release_of_older_items() {
        let mut ch = ChannelRt::new("s".into(), 3, 0, 1);
        for i in 0..3 {
            ch.push(Item::Word(i as f32), 0);
        }
        ch.release_through(0, 2);
        match ch.read(2, 0) {
            ReadOutcome::Ready { item, .. } => match item {
                Item::Word(v) => assert_eq!(*v, 2.0),
                other => panic!("{other:?}"),
            },
            other => panic!("{other:?}"),
        }
        assert!(matches!(ch.read(3, 0), ReadOutcome::Absent));
    }
}
