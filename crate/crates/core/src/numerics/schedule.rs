use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    ConstantAfterWarmup,
    CosineAfterWarmup,
}

/// Linear warmup from zero, then constant or cosine decay to zero at `total_steps()`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
    pub kind: ScheduleKind,
}

impl LrSchedule {
    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        lr_at(step, self)
    }
}

pub fn lr_at(step: usize, schedule: &LrSchedule) -> f64 {
    let base = schedule.base_lr.max(0.0);
    let warm = schedule.warmup_steps();
    if step < warm {
        return base * step as f64 / warm as f64;
    }
    match schedule.kind {
        ScheduleKind::ConstantAfterWarmup => base,
        ScheduleKind::CosineAfterWarmup => {
            let total = schedule.total_steps();
            if total <= warm {
                return base;
            }
            let progress = ((step - warm) as f64 / (total - warm) as f64).min(1.0);
            0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(kind: ScheduleKind) -> LrSchedule {
        LrSchedule { base_lr: 0.01, warmup_epochs: 5, total_epochs: 50, steps_per_epoch: 4, kind }
    }

    #[test]
    fn warmup_starts_at_zero_and_reaches_base() {
        let s = sched(ScheduleKind::CosineAfterWarmup);
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(10), 0.005);
        assert_eq!(s.lr_at(20), 0.01);
        assert_eq!(sched(ScheduleKind::ConstantAfterWarmup).lr_at(150), 0.01);
    }

    #[test]
    fn cosine_ends_near_zero() {
        let s = sched(ScheduleKind::CosineAfterWarmup);
        assert!(s.lr_at(s.total_steps()) <= 0.01 * s.base_lr);
        assert!(s.lr_at(s.total_steps() + 100) >= 0.0);
        // halfway through the decay
        assert!((s.lr_at(20 + 90) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn never_negative() {
        let s = sched(ScheduleKind::CosineAfterWarmup);
        assert!((0..400).all(|t| s.lr_at(t) >= 0.0));
    }
}
