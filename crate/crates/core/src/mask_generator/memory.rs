use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry<E> {
    pub frame: usize,
    pub is_key: bool,
    pub features: E,
}

/// Ordered memory of past predictions. Key-frame entries are kept forever;
/// at most `capacity` non-key entries are kept, evicting the oldest first.
#[derive(Clone, Debug)]
pub struct MemoryBank<E> {
    entries: Vec<MemoryEntry<E>>,
    capacity: usize,
}

impl<E> MemoryBank<E> {
    pub fn new(capacity: usize) -> Self {
        MemoryBank {
            entries: Vec::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> &[MemoryEntry<E>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn non_key_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.is_key).count()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.entries.iter().any(|e| e.frame == frame)
    }

    /// Append an entry. Returns the frame index of the evicted entry, if any.
    pub fn write(&mut self, frame: usize, is_key: bool, features: E) -> Result<Option<usize>> {
        if self.contains(frame) {
            return Err(Error::State(format!("frame {frame} is already in memory")));
        }
        self.entries.push(MemoryEntry {
            frame,
            is_key,
            features,
        });
        if is_key || self.non_key_count() <= self.capacity {
            return Ok(None);
        }
        let oldest = self
            .entries
            .iter()
            .position(|e| !e.is_key)
            .expect("over capacity implies a non-key entry");
        Ok(Some(self.entries.remove(oldest).frame))
    }
}
