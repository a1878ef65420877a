use serde::{Deserialize, Serialize};

/// Stops once the monitored value has not strictly improved for
/// `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: Option<u64>,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, best_epoch: None, bad_epochs: 0 }
    }

    /// Records the value of `epoch`; returns true when it is a new best.
    pub fn observe(&mut self, epoch: u64, value: f64) -> bool {
        if self.best.is_none_or(|b| value > b) {
            self.best = Some(value);
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_stops_after_patience() {
        let mut es = EarlyStopping::new(10);
        let mut seq = vec![30.0, 31.0];
        seq.extend(std::iter::repeat_n(31.0, 20));
        let mut stopped = None;
        for (e, v) in seq.into_iter().enumerate() {
            es.observe(e as u64, v);
            if es.should_stop() {
                stopped = Some(e as u64);
                break;
            }
        }
        assert_eq!(es.best_epoch, Some(1));
        assert_eq!(stopped, Some(11));
    }

    #[test]
    fn improvement_resets_counter() {
        let mut es = EarlyStopping::new(2);
        assert!(es.observe(0, 1.0));
        assert!(!es.observe(1, 0.5));
        assert!(es.observe(2, 1.5));
        assert!(!es.observe(3, 1.5));
        assert!(!es.should_stop());
        es.observe(4, 1.0);
        assert!(es.should_stop());
    }
}
