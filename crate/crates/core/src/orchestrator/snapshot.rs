//! Versioned reward-model parameters handed from the fitter to the rollout worker.

use std::sync::{Arc, Mutex, RwLock};

use crate::reward_model::RunningNorm;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot {
    pub id: u64,
    pub params: Vec<f64>,
    pub norm: RunningNorm,
    pub checksum: u64,
}

/// FNV-1a over the parameter bit patterns.
pub fn checksum(params: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for b in p.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl ParamSnapshot {
    pub fn verify(&self) -> bool {
        checksum(&self.params) == self.checksum
    }
}

/// Single-writer, many-reader cell. Readers get an `Arc` to a complete snapshot.
#[derive(Debug)]
pub struct SnapshotCell {
    current: RwLock<Arc<ParamSnapshot>>,
    publish_lock: Mutex<()>,
}

impl SnapshotCell {
    /// Holds `params` as snapshot 0.
    pub fn new(params: Vec<f64>, norm: RunningNorm) -> Self {
        let checksum = checksum(&params);
        Self {
            current: RwLock::new(Arc::new(ParamSnapshot {
                id: 0,
                params,
                norm,
                checksum,
            })),
            publish_lock: Mutex::new(()),
        }
    }

    pub fn publish(&self, params: Vec<f64>, norm: RunningNorm) -> u64 {
        let _guard = self.publish_lock.lock().expect("snapshot publisher poisoned");
        let id = self.read().id + 1;
        let checksum = checksum(&params);
        let snap = Arc::new(ParamSnapshot {
            id,
            params,
            norm,
            checksum,
        });
        *self.current.write().expect("snapshot lock poisoned") = snap;
        id
    }

    pub fn read(&self) -> Arc<ParamSnapshot> {
        Arc::clone(&self.current.read().expect("snapshot lock poisoned"))
    }

    pub fn latest_id(&self) -> u64 {
        self.read().id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_increase_by_one() {
        let cell = SnapshotCell::new(vec![0.0; 4], RunningNorm::default());
        assert_eq!(cell.latest_id(), 0);
        let a = cell.publish(vec![1.0; 4], RunningNorm::default());
        assert_eq!(cell.read().id, a);
        let b = cell.publish(vec![2.0; 4], RunningNorm::default());
        assert_eq!(b, a + 1);
    }

    #[test]
    fn concurrent_readers_never_see_mixed_weights() {
        let cell = Arc::new(SnapshotCell::new(vec![0.0; 256], RunningNorm::default()));
        let writer = {
            let cell = Arc::clone(&cell);
            std::thread::spawn(move || {
                for k in 1..=500u32 {
                    cell.publish(vec![f64::from(k); 256], RunningNorm::default());
                }
            })
        };
        let readers: Vec<_> = (0..3)
            .map(|_| {
                let cell = Arc::clone(&cell);
                std::thread::spawn(move || {
                    let mut last = 0;
                    for _ in 0..2000 {
                        let s = cell.read();
                        assert!(s.verify());
                        assert!(s.params.iter().all(|p| *p == s.params[0]));
                        assert!(s.id >= last);
                        last = s.id;
                    }
                })
            })
            .collect();
        writer.join().unwrap();
        for r in readers {
            r.join().unwrap();
        }
        assert_eq!(cell.latest_id(), 500);
    }
}
