use std::sync::{Arc, Mutex};

use serde::Deserialize;
use serde_json::{json, Value};

use crate::bus::{Bus, BusError, ServiceSpec, Subscription};
use crate::clock::SimClock;
use crate::halsim::records::decode_telemetry;

use super::{CamError, CameraId, CameraServer, CaptureParams};

pub const SELECT_SERVICE: &str = "camera/select";
pub const TAKE_IMAGE_SERVICE: &str = "camera/take_image";
pub const RECORD_VIDEO_SERVICE: &str = "camera/record_video";
pub const LIST_SERVICE: &str = "camera/list";
pub const DELETE_SERVICE: &str = "camera/delete";

#[derive(Debug, Deserialize)]
struct CaptureRequest {
    camera: CameraId,
    #[serde(default)]
    params: CaptureParams,
}

#[derive(Debug, Deserialize)]
struct SelectRequest {
    camera: CameraId,
}

#[derive(Debug, Deserialize)]
struct DeleteRequest {
    media_id: u64,
}

fn err_reply(e: impl std::fmt::Display, kind: &str) -> Value {
    json!({"ok": false, "kind": kind, "error": e.to_string()})
}

fn cam_err(e: CamError) -> Value {
    let kind = match e {
        CamError::CameraInactive { .. } => "camera_inactive",
        CamError::SwitchingDisabled { .. } => "switching_disabled",
        CamError::StorageFull => "storage_full",
        CamError::UnknownMedia(_) => "unknown_media",
        CamError::InvalidParams(_) => "invalid_params",
        CamError::Io(_) => "io",
    };
    err_reply(e, kind)
}

struct Shared {
    server: Mutex<CameraServer>,
    telemetry: Mutex<Option<Subscription>>,
    clock: SimClock,
}

impl Shared {
    /// Serialises all actions; refreshes the joint stamp first.
    fn with_server<R>(&self, f: impl FnOnce(&mut CameraServer, f64) -> R) -> R {
        let mut s = self.server.lock().unwrap();
        if let Some(sub) = self.telemetry.lock().unwrap().as_ref() {
            if let Some(tm) = sub.drain().into_iter().rev().find_map(|m| decode_telemetry::<f64>(&m.payload)) {
                s.set_joint_positions(tm.map(|j| j.position));
            }
        }
        f(&mut s, self.clock.secs())
    }
}

/// Exposes a [`CameraServer`] through the `camera/*` services (JSON bodies).
#[derive(Clone)]
pub struct CameraNode {
    shared: Arc<Shared>,
}

impl CameraNode {
    pub fn attach(bus: &Bus, server: CameraServer, clock: SimClock) -> Result<Self, BusError> {
        let telemetry = bus.subscribe(crate::halsim::TELEMETRY_TOPIC).ok();
        let shared = Arc::new(Shared {
            server: Mutex::new(server),
            telemetry: Mutex::new(telemetry),
            clock,
        });
        let services: [(&str, &str); 5] = [
            (SELECT_SERVICE, "json/select"),
            (TAKE_IMAGE_SERVICE, "json/capture"),
            (RECORD_VIDEO_SERVICE, "json/capture"),
            (LIST_SERVICE, "empty"),
            (DELETE_SERVICE, "json/delete"),
        ];
        for (name, req) in services {
            if bus.service_spec(name).is_none() {
                bus.register_service(ServiceSpec::new(name, req, "json/result"))?;
            }
        }
        let sh = shared.clone();
        bus.attach_handler(SELECT_SERVICE, move |req| {
            let v = match serde_json::from_slice::<SelectRequest>(req) {
                Ok(r) => match sh.with_server(|s, now| s.select_camera(r.camera, now)) {
                    Ok(ready) => json!({"ok": true, "ready_at": ready}),
                    Err(e) => cam_err(e),
                },
                Err(e) => err_reply(e, "malformed"),
            };
            v.to_string().into_bytes()
        })?;
        for (name, video) in [(TAKE_IMAGE_SERVICE, false), (RECORD_VIDEO_SERVICE, true)] {
            let sh = shared.clone();
            bus.attach_handler(name, move |req| {
                let v = match serde_json::from_slice::<CaptureRequest>(req) {
                    Ok(r) => {
                        let res = sh.with_server(|s, now| {
                            if video {
                                s.record_video(r.camera, &r.params, now)
                            } else {
                                s.take_image(r.camera, &r.params, now)
                            }
                        });
                        match res {
                            Ok(c) => json!({"ok": true, "capture": c}),
                            Err(e) => cam_err(e),
                        }
                    }
                    Err(e) => err_reply(e, "malformed"),
                };
                v.to_string().into_bytes()
            })?;
        }
        let sh = shared.clone();
        bus.attach_handler(LIST_SERVICE, move |_| {
            let list = sh.with_server(|s, _| s.list_media());
            json!({"ok": true, "media": list}).to_string().into_bytes()
        })?;
        let sh = shared.clone();
        bus.attach_handler(DELETE_SERVICE, move |req| {
            let v = match serde_json::from_slice::<DeleteRequest>(req) {
                Ok(r) => match sh.with_server(|s, _| s.delete_media(r.media_id)) {
                    Ok(()) => json!({"ok": true}),
                    Err(e) => cam_err(e),
                },
                Err(e) => err_reply(e, "malformed"),
            };
            v.to_string().into_bytes()
        })?;
        Ok(Self { shared })
    }

    /// Direct access for the in-process harness.
    pub fn with_server<R>(&self, f: impl FnOnce(&mut CameraServer, f64) -> R) -> R {
        self.shared.with_server(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camsim::{CamConfig, Capture, MediaRecord};
    use std::time::Duration;

    fn call(bus: &Bus, name: &str, body: &str) -> Value {
        let r = bus.call_service(name, body.as_bytes(), Duration::from_secs(5)).unwrap();
        serde_json::from_slice(&r).unwrap()
    }

    #[test]
    fn services_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bus = Bus::new();
        let clock = SimClock::new();
        CameraNode::attach(&bus, CameraServer::new(dir.path(), CamConfig::default()), clock.clone()).unwrap();
        let r = call(&bus, TAKE_IMAGE_SERVICE, r#"{"camera":"base"}"#);
        assert_eq!(r["kind"], "camera_inactive");
        assert_eq!(call(&bus, SELECT_SERVICE, r#"{"camera":"base"}"#)["ok"], true);
        clock.set(Duration::from_secs(2));
        let r = call(
            &bus,
            TAKE_IMAGE_SERVICE,
            r#"{"camera":"base","params":{"width":64,"height":48,"color_space":"gray8"}}"#,
        );
        let cap: Capture = serde_json::from_value(r["capture"].clone()).unwrap();
        assert_eq!(cap.record.created, 2.0);
        assert!(cap.record.path.exists());
        let r = call(&bus, RECORD_VIDEO_SERVICE, r#"{"camera":"base","params":{"width":16,"height":16,"duration":1.0,"fps":5}}"#);
        assert_eq!(r["ok"], true);
        let list: Vec<MediaRecord> = serde_json::from_value(call(&bus, LIST_SERVICE, "")["media"].clone()).unwrap();
        assert_eq!(list.len(), 2);
        assert_eq!(call(&bus, DELETE_SERVICE, r#"{"media_id":1}"#)["ok"], true);
        assert_eq!(call(&bus, DELETE_SERVICE, r#"{"media_id":1}"#)["kind"], "unknown_media");
        assert_eq!(call(&bus, SELECT_SERVICE, "nope")["kind"], "malformed");
    }
}
