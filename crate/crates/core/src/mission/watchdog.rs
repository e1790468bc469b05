//! Simulated hardware watchdog.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::json;

use crate::bus::{Bus, BusError, ServiceSpec};
use crate::clock::SimClock;

pub const PET_SERVICE: &str = "watchdog/pet";
pub const ARM_SERVICE: &str = "watchdog/arm";

#[derive(Debug, Clone)]
pub struct Watchdog {
    timeout: Duration,
    last_pet: Duration,
    armed: bool,
    fired: bool,
    pets: u64,
}

impl Watchdog {
    pub fn new(timeout: Duration) -> Self {
        Self {
            timeout,
            last_pet: Duration::ZERO,
            armed: false,
            fired: false,
            pets: 0,
        }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn armed(&self) -> bool {
        self.armed
    }

    pub fn last_pet(&self) -> Duration {
        self.last_pet
    }

    pub fn pets(&self) -> u64 {
        self.pets
    }

    pub fn arm(&mut self, now: Duration) {
        self.armed = true;
        self.fired = false;
        self.last_pet = now;
    }

    pub fn pet(&mut self, now: Duration) {
        self.last_pet = self.last_pet.max(now);
        self.pets += 1;
    }

    /// True exactly once per arming, at the first check past the timeout.
    pub fn check(&mut self, now: Duration) -> bool {
        if self.armed && !self.fired && now.saturating_sub(self.last_pet) > self.timeout {
            self.fired = true;
            return true;
        }
        false
    }
}

/// Exposes the watchdog as `watchdog/pet` and `watchdog/arm`.
pub fn attach(bus: &Bus, wd: Arc<Mutex<Watchdog>>, clock: SimClock) -> Result<(), BusError> {
    for name in [PET_SERVICE, ARM_SERVICE] {
        if bus.service_spec(name).is_none() {
            bus.register_service(ServiceSpec::new(name, "empty", "json/result"))?;
        }
    }
    let (w, c) = (wd.clone(), clock.clone());
    bus.attach_handler(PET_SERVICE, move |_| {
        let mut w = w.lock().unwrap();
        w.pet(c.now());
        json!({"ok": true, "pets": w.pets()}).to_string().into_bytes()
    })?;
    bus.attach_handler(ARM_SERVICE, move |_| {
        wd.lock().unwrap().arm(clock.now());
        json!({"ok": true}).to_string().into_bytes()
    })?;
    Ok(())
}
