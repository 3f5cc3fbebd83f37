use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::TransportError;

struct State {
    generation: u64,
    arrived: Vec<bool>,
    count: usize,
    aborted: Option<String>,
}

/// Reusable barrier for in-process workers, with a timeout that names the
/// workers that never arrived and an abort switch for failing workers.
pub struct SyncBarrier {
    state: Mutex<State>,
    cv: Condvar,
    timeout: Duration,
}

impl SyncBarrier {
    pub fn new(workers: usize, timeout: Duration) -> Self {
        Self {
            state: Mutex::new(State {
                generation: 0,
                arrived: vec![false; workers],
                count: 0,
                aborted: None,
            }),
            cv: Condvar::new(),
            timeout,
        }
    }

    pub fn workers(&self) -> usize {
        self.state.lock().unwrap().arrived.len()
    }

    pub fn wait(&self, worker: usize) -> Result<(), TransportError> {
        let mut st = self.state.lock().unwrap();
        if let Some(reason) = &st.aborted {
            return Err(TransportError::Aborted(reason.clone()));
        }
        let gen = st.generation;
        if !st.arrived[worker] {
            st.arrived[worker] = true;
            st.count += 1;
        }
        if st.count == st.arrived.len() {
            st.generation += 1;
            st.count = 0;
            st.arrived.iter_mut().for_each(|a| *a = false);
            self.cv.notify_all();
            return Ok(());
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let now = Instant::now();
            if now >= deadline {
                let absent = st
                    .arrived
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| !**a)
                    .map(|(i, _)| i)
                    .collect();
                st.aborted = Some("barrier timeout".into());
                self.cv.notify_all();
                return Err(TransportError::BarrierTimeout { absent });
            }
            let (guard, _) = self.cv.wait_timeout(st, deadline - now).unwrap();
            st = guard;
            if st.generation != gen {
                return Ok(());
            }
            if let Some(reason) = &st.aborted {
                return Err(TransportError::Aborted(reason.clone()));
            }
        }
    }

    /// Releases every current and future waiter with an error.
    pub fn abort(&self, reason: &str) {
        let mut st = self.state.lock().unwrap();
        st.aborted.get_or_insert_with(|| reason.to_string());
        self.cv.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn single_worker_is_immediate() {
        let b = SyncBarrier::new(1, Duration::from_secs(1));
        for _ in 0..10 {
            b.wait(0).unwrap();
        }
    }

    #[test]
    fn timeout_lists_absent_workers() {
        let b = SyncBarrier::new(3, Duration::from_millis(50));
        let err = b.wait(1).unwrap_err();
        assert_eq!(err, TransportError::BarrierTimeout { absent: vec![0, 2] });
        assert!(matches!(b.wait(0), Err(TransportError::Aborted(_))));
    }

    #[test]
    fn abort_releases_waiters() {
        let b = Arc::new(SyncBarrier::new(2, Duration::from_secs(30)));
        let b2 = b.clone();
        let h = std::thread::spawn(move || b2.wait(0));
        std::thread::sleep(Duration::from_millis(20));
        b.abort("worker 1 failed");
        assert_eq!(
            h.join().unwrap(),
            Err(TransportError::Aborted("worker 1 failed".into()))
        );
    }
}
