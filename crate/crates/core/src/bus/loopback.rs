//! Bridge between a [`Bus`] and other processes over loopback TCP.
//!
//! [`serve`] exposes a local bus; [`RemoteBus`] is the client side. Both
//! speak the frames documented in [`super::frame`].

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::frame::{
    decode_param_value, encode_param_value, Frame, FrameKind, ParamErrorCode, ParamOp,
    ServiceStatus,
};
use super::{Bus, BusError, Message, ParamValue};

/// Accept loopback clients for `bus` on `listener` in a background thread.
pub fn serve(bus: Bus, listener: TcpListener) -> io::Result<SocketAddr> {
    let addr = listener.local_addr()?;
    thread::Builder::new()
        .name("bus-loopback".into())
        .spawn(move || {
            for stream in listener.incoming().flatten() {
                let bus = bus.clone();
                thread::spawn(move || {
                    let _ = handle_client(bus, stream);
                });
            }
        })?;
    Ok(addr)
}

fn handle_client(bus: Bus, stream: TcpStream) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    let mut reader = stream;
    loop {
        let frame = Frame::read_from(&mut reader)?;
        match frame.kind {
            FrameKind::TopicMsg if frame.payload.is_empty() => {
                let Ok(sub) = bus.subscribe_with_depth(&frame.name, 256) else {
                    continue;
                };
                let writer = writer.clone();
                thread::spawn(move || loop {
                    let Some(msg) = sub.recv_timeout(Duration::from_millis(200)) else {
                        continue;
                    };
                    let mut payload = (msg.stamp.as_nanos() as u64).to_le_bytes().to_vec();
                    payload.extend_from_slice(&msg.payload);
                    let out = Frame::new(FrameKind::TopicMsg, sub.topic(), payload);
                    if out.write_to(&mut *writer.lock().unwrap()).is_err() {
                        break;
                    }
                });
            }
            FrameKind::TopicMsg => {
                if frame.payload.len() >= 8 {
                    let stamp = u64::from_le_bytes(frame.payload[..8].try_into().unwrap());
                    let _ = bus.publish(&frame.name, &frame.payload[8..], Duration::from_nanos(stamp));
                }
            }
            FrameKind::ServiceReq => {
                if frame.payload.len() < 4 {
                    continue;
                }
                let bus = bus.clone();
                let writer = writer.clone();
                thread::spawn(move || {
                    let id = &frame.payload[..4];
                    let (status, body) =
                        match bus.call_service(&frame.name, &frame.payload[4..], Duration::from_secs(30)) {
                            Ok(b) => (ServiceStatus::Ok, b),
                            Err(BusError::UnknownService(_)) => (ServiceStatus::UnknownService, vec![]),
                            Err(BusError::NoHandler(_)) => (ServiceStatus::NoHandler, vec![]),
                            Err(_) => (ServiceStatus::Timeout, vec![]),
                        };
                    let mut payload = id.to_vec();
                    payload.push(status as u8);
                    payload.extend_from_slice(&body);
                    let out = Frame::new(FrameKind::ServiceResp, &frame.name, payload);
                    let _ = out.write_to(&mut *writer.lock().unwrap());
                });
            }
            FrameKind::ParamOp => {
                if frame.payload.len() < 5 {
                    continue;
                }
                let mut payload = frame.payload[..4].to_vec();
                let result = match frame.payload[4] {
                    x if x == ParamOp::Get as u8 => bus.get_parameter(&frame.name),
                    x if x == ParamOp::Set as u8 => match decode_param_value(&frame.payload[5..]) {
                        Some(v) => bus.set_parameter(&frame.name, v.clone()).map(|_| v),
                        None => Err(BusError::Connection("malformed".into())),
                    },
                    _ => Err(BusError::Connection("malformed".into())),
                };
                match result {
                    Ok(v) => {
                        payload.push(ParamOp::ReplyOk as u8);
                        encode_param_value(&v, &mut payload);
                    }
                    Err(e) => {
                        payload.push(ParamOp::ReplyErr as u8);
                        payload.push(match e {
                            BusError::UnknownParameter(_) => ParamErrorCode::Unknown,
                            BusError::NotWritable(_) => ParamErrorCode::NotWritable,
                            BusError::TypeMismatch { .. } => ParamErrorCode::TypeMismatch,
                            _ => ParamErrorCode::Malformed,
                        } as u8);
                    }
                }
                let out = Frame::new(FrameKind::ParamOp, &frame.name, payload);
                out.write_to(&mut *writer.lock().unwrap())?;
            }
            FrameKind::ServiceResp => {}
        }
    }
}

type Pending = Arc<Mutex<HashMap<u32, mpsc::Sender<Frame>>>>;
type Subscribers = Arc<Mutex<HashMap<String, Vec<mpsc::Sender<Message>>>>>;

/// Client handle to a bus served by [`serve`] in another process.
pub struct RemoteBus {
    writer: Mutex<TcpStream>,
    next_id: AtomicU32,
    pending: Pending,
    subscribers: Subscribers,
}

impl RemoteBus {
    pub fn connect(addr: SocketAddr) -> Result<Self, BusError> {
        let stream = TcpStream::connect(addr).map_err(|e| BusError::Connection(e.to_string()))?;
        stream.set_nodelay(true).ok();
        let mut reader = stream
            .try_clone()
            .map_err(|e| BusError::Connection(e.to_string()))?;
        let pending: Pending = Arc::default();
        let subscribers: Subscribers = Arc::default();
        let (p, s) = (pending.clone(), subscribers.clone());
        thread::spawn(move || {
            let mut seq = HashMap::<String, u64>::new();
            while let Ok(frame) = Frame::read_from(&mut reader) {
                match frame.kind {
                    FrameKind::TopicMsg if frame.payload.len() >= 8 => {
                        let stamp = u64::from_le_bytes(frame.payload[..8].try_into().unwrap());
                        let n = seq.entry(frame.name.clone()).or_default();
                        let msg = Message {
                            payload: frame.payload[8..].to_vec(),
                            stamp: Duration::from_nanos(stamp),
                            seq: *n,
                        };
                        *n += 1;
                        if let Some(list) = s.lock().unwrap().get_mut(&frame.name) {
                            list.retain(|tx| tx.send(msg.clone()).is_ok());
                        }
                    }
                    FrameKind::ServiceResp | FrameKind::ParamOp if frame.payload.len() >= 4 => {
                        let id = u32::from_le_bytes(frame.payload[..4].try_into().unwrap());
                        if let Some(tx) = p.lock().unwrap().remove(&id) {
                            let _ = tx.send(frame);
                        }
                    }
                    _ => {}
                }
            }
        });
        Ok(Self {
            writer: Mutex::new(stream),
            next_id: AtomicU32::new(1),
            pending,
            subscribers,
        })
    }

    fn send(&self, frame: Frame) -> Result<(), BusError> {
        frame
            .write_to(&mut *self.writer.lock().unwrap())
            .map_err(|e| BusError::Connection(e.to_string()))
    }

    fn request(&self, kind: FrameKind, name: &str, body: &[u8], timeout: Duration) -> Result<Frame, BusError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        self.pending.lock().unwrap().insert(id, tx);
        let mut payload = id.to_le_bytes().to_vec();
        payload.extend_from_slice(body);
        self.send(Frame::new(kind, name, payload))?;
        rx.recv_timeout(timeout).map_err(|_| {
            self.pending.lock().unwrap().remove(&id);
            BusError::Timeout(name.to_string())
        })
    }

    pub fn publish(&self, topic: &str, payload: &[u8], stamp: Duration) -> Result<(), BusError> {
        let mut body = (stamp.as_nanos() as u64).to_le_bytes().to_vec();
        body.extend_from_slice(payload);
        self.send(Frame::new(FrameKind::TopicMsg, topic, body))
    }

    pub fn subscribe(&self, topic: &str) -> Result<mpsc::Receiver<Message>, BusError> {
        let (tx, rx) = mpsc::channel();
        let first = {
            let mut subs = self.subscribers.lock().unwrap();
            let list = subs.entry(topic.to_string()).or_default();
            list.push(tx);
            list.len() == 1
        };
        if first {
            self.send(Frame::new(FrameKind::TopicMsg, topic, Vec::new()))?;
        }
        Ok(rx)
    }

    pub fn call_service(&self, name: &str, request: &[u8], timeout: Duration) -> Result<Vec<u8>, BusError> {
        let resp = self.request(FrameKind::ServiceReq, name, request, timeout)?;
        match resp.payload.get(4).copied() {
            Some(s) if s == ServiceStatus::Ok as u8 => Ok(resp.payload[5..].to_vec()),
            Some(s) if s == ServiceStatus::UnknownService as u8 => Err(BusError::UnknownService(name.into())),
            Some(s) if s == ServiceStatus::NoHandler as u8 => Err(BusError::NoHandler(name.into())),
            _ => Err(BusError::Timeout(name.into())),
        }
    }

    fn param_op(&self, name: &str, body: Vec<u8>) -> Result<ParamValue, BusError> {
        let resp = self.request(FrameKind::ParamOp, name, &body, Duration::from_secs(5))?;
        match resp.payload.get(4).copied() {
            Some(op) if op == ParamOp::ReplyOk as u8 => decode_param_value(&resp.payload[5..])
                .ok_or_else(|| BusError::Connection("malformed reply".into())),
            _ => Err(match resp.payload.get(5).copied() {
                Some(c) if c == ParamErrorCode::Unknown as u8 => BusError::UnknownParameter(name.into()),
                Some(c) if c == ParamErrorCode::NotWritable as u8 => BusError::NotWritable(name.into()),
                Some(c) if c == ParamErrorCode::TypeMismatch as u8 => BusError::TypeMismatch {
                    name: name.into(),
                    expected: "declared type",
                    got: "other",
                },
                _ => BusError::Connection("malformed reply".into()),
            }),
        }
    }

    pub fn get_parameter(&self, name: &str) -> Result<ParamValue, BusError> {
        self.param_op(name, vec![ParamOp::Get as u8])
    }

    pub fn set_parameter(&self, name: &str, value: ParamValue) -> Result<(), BusError> {
        let mut body = vec![ParamOp::Set as u8];
        encode_param_value(&value, &mut body);
        self.param_op(name, body).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{ServiceSpec, TopicSpec};

    fn served() -> (Bus, RemoteBus) {
        let bus = Bus::new();
        let addr = serve(bus.clone(), TcpListener::bind("127.0.0.1:0").unwrap()).unwrap();
        (bus, RemoteBus::connect(addr).unwrap())
    }

    #[test]
    fn remote_publish_reaches_local_subscriber() {
        let (bus, remote) = served();
        bus.register_topic(TopicSpec::new("hal/command", "cmd", 100.0)).unwrap();
        let sub = bus.subscribe("hal/command").unwrap();
        remote.publish("hal/command", b"cmd", Duration::from_millis(10)).unwrap();
        let m = sub.recv_timeout(Duration::from_secs(2)).unwrap();
        assert_eq!(m.payload, b"cmd".to_vec());
        assert_eq!(m.stamp, Duration::from_millis(10));
    }

    #[test]
    fn remote_subscription_receives_in_order() {
        let (bus, remote) = served();
        bus.register_topic(TopicSpec::new("hal/telemetry", "tm", 100.0)).unwrap();
        let rx = remote.subscribe("hal/telemetry").unwrap();
        // the subscribe frame is processed asynchronously
        let deadline = std::time::Instant::now() + Duration::from_secs(2);
        while bus.publish("hal/telemetry", b"probe", Duration::ZERO).unwrap() == 0 {
            assert!(std::time::Instant::now() < deadline);
            thread::sleep(Duration::from_millis(5));
        }
        for i in 1..=5u64 {
            bus.publish("hal/telemetry", &i.to_le_bytes(), Duration::from_millis(i)).unwrap();
        }
        let mut stamps = Vec::new();
        while stamps.len() < 5 {
            let m = rx.recv_timeout(Duration::from_secs(2)).unwrap();
            if m.payload != b"probe" {
                stamps.push(m.stamp);
            }
        }
        assert!(stamps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn remote_service_and_parameters() {
        let (bus, remote) = served();
        bus.serve(ServiceSpec::new("echo", "b", "b"), |r| r.to_vec()).unwrap();
        assert_eq!(
            remote.call_service("echo", b"hi", Duration::from_secs(2)).unwrap(),
            b"hi".to_vec()
        );
        assert_eq!(
            remote.call_service("nope", b"", Duration::from_secs(2)),
            Err(BusError::UnknownService("nope".into()))
        );
        bus.declare_parameter("controller/gains", ParamValue::FloatArray(vec![10.0; 4]), true);
        remote
            .set_parameter("controller/gains", ParamValue::FloatArray(vec![5.0; 4]))
            .unwrap();
        // read-your-write across the process boundary once the reply arrived
        assert_eq!(
            bus.get_parameter("controller/gains").unwrap(),
            ParamValue::FloatArray(vec![5.0; 4])
        );
        assert_eq!(
            remote.get_parameter("controller/gains").unwrap(),
            ParamValue::FloatArray(vec![5.0; 4])
        );
        assert!(matches!(
            remote.set_parameter("controller/gains", ParamValue::Bool(true)),
            Err(BusError::TypeMismatch { .. })
        ));
        assert_eq!(
            remote.get_parameter("missing"),
            Err(BusError::UnknownParameter("missing".into()))
        );
    }
}
