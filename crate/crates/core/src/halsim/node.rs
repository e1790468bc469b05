use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::json;

use crate::bus::{Bus, BusError, ServiceSpec, Subscription, TopicSpec};

use super::records::{decode_commands, encode_raw_frames, encode_telemetry};
use super::{FaultInjection, HalError, HalSim, JointCommand, JointTelemetry, NUM_JOINTS};

pub const TELEMETRY_TOPIC: &str = "hal/telemetry";
pub const CMD_TOPIC: &str = "hal/command";
pub const RAW_TOPIC: &str = "hal/raw";
pub const CONFIGURE_SERVICE: &str = "hal/configure";
pub const FAULT_SERVICE: &str = "hal/fault";

fn reply(r: Result<(), HalError>) -> Vec<u8> {
    match r {
        Ok(()) => json!({"ok": true}),
        Err(e) => json!({"ok": false, "error": e.to_string()}),
    }
    .to_string()
    .into_bytes()
}

/// Register the link topics.
pub fn declare_topics(bus: &Bus) -> Result<(), BusError> {
    bus.ensure_topic(TopicSpec::new(TELEMETRY_TOPIC, "hal/telemetry/v1", 100.0))?;
    bus.ensure_topic(TopicSpec::new(CMD_TOPIC, "hal/command/v1", 100.0))?;
    bus.ensure_topic(TopicSpec::new(RAW_TOPIC, "hal/raw/v1", 100.0))?;
    Ok(())
}

/// The HAL process: binds a [`HalSim`] to the link topics and services.
pub struct HalNode {
    bus: Bus,
    hal: Arc<Mutex<HalSim<f64>>>,
    commands: Subscription,
    last: [JointCommand<f64>; NUM_JOINTS],
}

impl HalNode {
    pub fn attach(bus: &Bus, hal: Arc<Mutex<HalSim<f64>>>) -> Result<Self, BusError> {
        declare_topics(bus)?;
        for (name, req) in [(CONFIGURE_SERVICE, "empty"), (FAULT_SERVICE, "json/fault")] {
            if bus.service_spec(name).is_none() {
                bus.register_service(ServiceSpec::new(name, req, "json/result"))?;
            }
        }
        let h = hal.clone();
        bus.attach_handler(CONFIGURE_SERVICE, move |_| reply(h.lock().unwrap().configure_link()))?;
        let h = hal.clone();
        bus.attach_handler(FAULT_SERVICE, move |req| {
            match serde_json::from_slice::<FaultInjection>(req) {
                Ok(f) => reply(h.lock().unwrap().inject_fault(f)),
                Err(e) => json!({"ok": false, "error": e.to_string()}).to_string().into_bytes(),
            }
        })?;
        Ok(Self {
            bus: bus.clone(),
            hal,
            commands: bus.subscribe(CMD_TOPIC)?,
            last: JointCommand::all_off(),
        })
    }

    pub fn hal(&self) -> &Arc<Mutex<HalSim<f64>>> {
        &self.hal
    }

    /// Run one link cycle with the most recent command set and publish the
    /// resulting telemetry. Returns `None` while the link is unconfigured.
    pub fn step(&mut self, stamp: Duration) -> Result<Option<[JointTelemetry<f64>; NUM_JOINTS]>, HalError> {
        if let Some(cmds) = self
            .commands
            .drain()
            .into_iter()
            .rev()
            .find_map(|m| decode_commands(&m.payload))
        {
            self.last = cmds;
        }
        let tm = {
            let mut hal = self.hal.lock().unwrap();
            if hal.link_state() != super::LinkState::Cyclic {
                return Ok(None);
            }
            hal.cycle(&self.last)?
        };
        let _ = self.bus.publish(TELEMETRY_TOPIC, &encode_telemetry(&tm), stamp);
        let _ = self.bus.publish(RAW_TOPIC, &encode_raw_frames(&tm), stamp);
        Ok(Some(tm))
    }
}
