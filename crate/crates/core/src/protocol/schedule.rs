//! Which ticks broadcast, upload, and publish fire on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance when checking that a frequency divides `f_sim`.
const DIVISOR_TOL: f64 = 1e-9;

/// Event frequencies in Hz. Each non-zero frequency must divide `f_sim` in
/// whole ticks; zero disables the event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub f_sim: f64,
    pub f_bdc: f64,
    pub f_upl: f64,
    pub f_sub: f64,
}

fn period(f_sim: f64, f: f64, field: &'static str) -> Result<Option<u64>> {
    if !(f.is_finite() && f >= 0.0) {
        return Err(Error::config(field, format!("must be finite and non-negative, got {f}")));
    }
    if f == 0.0 {
        return Ok(None);
    }
    if f > f_sim {
        return Err(Error::config(field, format!("{f} Hz exceeds f_sim = {f_sim} Hz")));
    }
    let ratio = f_sim / f;
    let ticks = ratio.round();
    if (ratio - ticks).abs() > DIVISOR_TOL * ratio {
        return Err(Error::config(field, format!("{f} Hz does not divide f_sim = {f_sim} Hz into whole ticks")));
    }
    Ok(Some(ticks as u64))
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_sim.is_finite() && self.f_sim > 0.0) {
            return Err(Error::config("f_sim", format!("must be positive, got {}", self.f_sim)));
        }
        period(self.f_sim, self.f_bdc, "f_bdc")?;
        period(self.f_sim, self.f_upl, "f_upl")?;
        period(self.f_sim, self.f_sub, "f_sub")?;
        Ok(())
    }

    /// An event with period `p` ticks fires on ticks `p−1, 2p−1, …`, so a run
    /// of `T` seconds sees exactly `⌊T·f⌋` of them.
    fn fires(&self, f: f64, tick: u64) -> bool {
        match period(self.f_sim, f, "frequency") {
            Ok(Some(p)) => (tick + 1) % p == 0,
            _ => false,
        }
    }

    pub fn broadcast_at(&self, tick: u64) -> bool {
        self.fires(self.f_bdc, tick)
    }

    pub fn upload_at(&self, tick: u64) -> bool {
        self.fires(self.f_upl, tick)
    }

    pub fn publish_at(&self, tick: u64) -> bool {
        self.fires(self.f_sub, tick)
    }

    pub fn subscription_enabled(&self) -> bool {
        self.f_sub > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(f_upl: f64, f_sub: f64) -> Schedule {
        Schedule { f_sim: 50.0, f_bdc: 50.0, f_upl, f_sub }
    }

    #[test]
    fn counts_match_floor() {
        let s = schedule(0.25, 10.0);
        s.validate().unwrap();
        let ticks = 50 * 15;
        assert_eq!((0..ticks).filter(|&t| s.upload_at(t)).count(), 3);
        assert_eq!((0..ticks).filter(|&t| s.publish_at(t)).count(), 150);
        assert_eq!((0..ticks).filter(|&t| s.broadcast_at(t)).count(), 750);
    }

    #[test]
    fn zero_disables() {
        let s = schedule(10.0, 0.0);
        s.validate().unwrap();
        assert!((0..1000).all(|t| !s.publish_at(t)));
        assert!(!s.subscription_enabled());
    }

    #[test]
    fn non_divisor_rejected() {
        assert!(matches!(schedule(3.0, 1.0).validate(), Err(Error::Config { field: "f_upl", .. })));
        assert!(matches!(schedule(10.0, 60.0).validate(), Err(Error::Config { field: "f_sub", .. })));
    }
}
