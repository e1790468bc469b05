//! Communication layer: cyclic topics, request/response services and
//! externally settable parameters.
//!
//! A [`Bus`] is a cheap, clonable handle; all clones share one registry.
//! Topic delivery is in-process through bounded per-subscriber queues
//! (drop-oldest on overflow). Services run their handler on a dedicated
//! executor thread so a slow handler never blocks the caller past its
//! timeout. [`loopback`] bridges a bus to other OS processes over TCP.

pub mod frame;
pub mod loopback;

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, RwLock, Weak};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default per-subscriber queue depth.
pub const DEFAULT_QUEUE_DEPTH: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BusError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("topic `{0}` already registered")]
    DuplicateTopic(String),
    #[error("invalid topic spec: {0}")]
    InvalidTopic(String),
    #[error("unknown service `{0}`")]
    UnknownService(String),
    #[error("service `{0}` already registered")]
    DuplicateService(String),
    #[error("service `{0}` has no handler attached")]
    NoHandler(String),
    #[error("service `{0}` timed out")]
    Timeout(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{0}` is not writable")]
    NotWritable(String),
    #[error("parameter `{name}` expects {expected}, got {got}")]
    TypeMismatch {
        name: String,
        expected: &'static str,
        got: &'static str,
    },
    #[error("connection: {0}")]
    Connection(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicSpec {
    pub name: String,
    pub schema_id: String,
    /// Messages per second, 0 for acyclic topics.
    pub nominal_rate: f64,
}

impl TopicSpec {
    pub fn new(name: &str, schema_id: &str, nominal_rate: f64) -> Self {
        Self {
            name: name.to_string(),
            schema_id: schema_id.to_string(),
            nominal_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceSpec {
    pub name: String,
    pub request_schema_id: String,
    pub response_schema_id: String,
}

impl ServiceSpec {
    pub fn new(name: &str, request_schema_id: &str, response_schema_id: &str) -> Self {
        Self {
            name: name.to_string(),
            request_schema_id: request_schema_id.to_string(),
            response_schema_id: response_schema_id.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    FloatArray(Vec<f64>),
    Str(String),
}

impl ParamValue {
    pub fn type_name(&self) -> &'static str {
        match self {
            ParamValue::Bool(_) => "bool",
            ParamValue::Int(_) => "int",
            ParamValue::Float(_) => "float",
            ParamValue::FloatArray(_) => "float-array",
            ParamValue::Str(_) => "string",
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Float(v) => Some(*v),
            ParamValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[f64]> {
        match self {
            ParamValue::FloatArray(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

/// One delivered topic message.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub payload: Vec<u8>,
    /// Monotonic publish time.
    pub stamp: Duration,
    /// Per-topic publish sequence number, starting at 0.
    pub seq: u64,
}

struct SubQueue {
    depth: usize,
    queue: Mutex<VecDeque<Message>>,
    ready: Condvar,
    overflow: AtomicU64,
    closed: AtomicBool,
}

impl SubQueue {
    fn push(&self, msg: Message) {
        let mut q = self.queue.lock().unwrap();
        if q.len() >= self.depth {
            q.pop_front();
            self.overflow.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back(msg);
        self.ready.notify_one();
    }
}

/// Receiving end of a topic subscription. Dropping it unsubscribes.
pub struct Subscription {
    topic: String,
    queue: Arc<SubQueue>,
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn try_recv(&self) -> Option<Message> {
        self.queue.queue.lock().unwrap().pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Message> {
        let q = self.queue.queue.lock().unwrap();
        let (mut q, _) = self
            .queue
            .ready
            .wait_timeout_while(q, timeout, |q| {
                q.is_empty() && !self.queue.closed.load(Ordering::Relaxed)
            })
            .unwrap();
        q.pop_front()
    }

    /// Take every queued message, oldest first.
    pub fn drain(&self) -> Vec<Message> {
        self.queue.queue.lock().unwrap().drain(..).collect()
    }

    /// Number of messages dropped because the queue was full.
    pub fn overflow_count(&self) -> u64 {
        self.queue.overflow.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.queue.queue.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.queue.closed.store(true, Ordering::Relaxed);
    }
}

struct TopicEntry {
    spec: TopicSpec,
    subscribers: Vec<Weak<SubQueue>>,
    published: u64,
}

type Handler = Box<dyn Fn(&[u8]) -> Vec<u8> + Send + 'static>;
type Job = (Vec<u8>, mpsc::Sender<Vec<u8>>);

struct ServiceEntry {
    spec: ServiceSpec,
    executor: Option<mpsc::Sender<Job>>,
}

struct ParamEntry {
    value: ParamValue,
    writable: bool,
    version: u64,
}

#[derive(Default)]
struct Registry {
    topics: RwLock<HashMap<String, Arc<Mutex<TopicEntry>>>>,
    services: RwLock<HashMap<String, ServiceEntry>>,
    params: RwLock<HashMap<String, ParamEntry>>,
}

/// Shared bus handle.
#[derive(Clone, Default)]
pub struct Bus {
    inner: Arc<Registry>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_topic(&self, spec: TopicSpec) -> Result<(), BusError> {
        if spec.name.is_empty() {
            return Err(BusError::InvalidTopic("empty name".into()));
        }
        if !(spec.nominal_rate >= 0.0) {
            return Err(BusError::InvalidTopic(format!(
                "{}: negative nominal rate",
                spec.name
            )));
        }
        let mut topics = self.inner.topics.write().unwrap();
        if topics.contains_key(&spec.name) {
            return Err(BusError::DuplicateTopic(spec.name));
        }
        topics.insert(
            spec.name.clone(),
            Arc::new(Mutex::new(TopicEntry {
                spec,
                subscribers: Vec::new(),
                published: 0,
            })),
        );
        Ok(())
    }

    /// Register `spec` unless a topic of that name already exists.
    pub fn ensure_topic(&self, spec: TopicSpec) -> Result<(), BusError> {
        match self.register_topic(spec) {
            Err(BusError::DuplicateTopic(_)) | Ok(()) => Ok(()),
            Err(e) => Err(e),
        }
    }

    pub fn topic_spec(&self, name: &str) -> Option<TopicSpec> {
        let topics = self.inner.topics.read().unwrap();
        topics.get(name).map(|t| t.lock().unwrap().spec.clone())
    }

    pub fn topics(&self) -> Vec<TopicSpec> {
        let topics = self.inner.topics.read().unwrap();
        let mut out: Vec<_> = topics.values().map(|t| t.lock().unwrap().spec.clone()).collect();
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }

    fn topic(&self, name: &str) -> Result<Arc<Mutex<TopicEntry>>, BusError> {
        self.inner
            .topics
            .read()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| BusError::UnknownTopic(name.to_string()))
    }

    pub fn subscribe(&self, topic: &str) -> Result<Subscription, BusError> {
        self.subscribe_with_depth(topic, DEFAULT_QUEUE_DEPTH)
    }

    pub fn subscribe_with_depth(&self, topic: &str, depth: usize) -> Result<Subscription, BusError> {
        let entry = self.topic(topic)?;
        let queue = Arc::new(SubQueue {
            depth: depth.max(1),
            queue: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            overflow: AtomicU64::new(0),
            closed: AtomicBool::new(false),
        });
        entry.lock().unwrap().subscribers.push(Arc::downgrade(&queue));
        Ok(Subscription {
            topic: topic.to_string(),
            queue,
        })
    }

    /// Publish to every current subscriber. Returns the number of receivers.
    pub fn publish(&self, topic: &str, payload: &[u8], stamp: Duration) -> Result<usize, BusError> {
        let entry = self.topic(topic)?;
        // Holding the topic lock across all pushes keeps per-topic order
        // identical for every subscriber.
        let mut entry = entry.lock().unwrap();
        let seq = entry.published;
        entry.published += 1;
        entry.subscribers.retain(|w| w.strong_count() > 0);
        let mut delivered = 0;
        for sub in entry.subscribers.iter().filter_map(Weak::upgrade) {
            sub.push(Message {
                payload: payload.to_vec(),
                stamp,
                seq,
            });
            delivered += 1;
        }
        Ok(delivered)
    }

    /// Total messages ever published on `topic`.
    pub fn published_count(&self, topic: &str) -> Result<u64, BusError> {
        Ok(self.topic(topic)?.lock().unwrap().published)
    }

    pub fn register_service(&self, spec: ServiceSpec) -> Result<(), BusError> {
        let mut services = self.inner.services.write().unwrap();
        if services.contains_key(&spec.name) {
            return Err(BusError::DuplicateService(spec.name));
        }
        services.insert(
            spec.name.clone(),
            ServiceEntry {
                spec,
                executor: None,
            },
        );
        Ok(())
    }

    pub fn service_spec(&self, name: &str) -> Option<ServiceSpec> {
        self.inner
            .services
            .read()
            .unwrap()
            .get(name)
            .map(|s| s.spec.clone())
    }

    /// Attach (or replace) the handler of a registered service. The handler
    /// runs on its own executor thread.
    pub fn attach_handler<F>(&self, name: &str, handler: F) -> Result<(), BusError>
    where
        F: Fn(&[u8]) -> Vec<u8> + Send + 'static,
    {
        let mut services = self.inner.services.write().unwrap();
        let entry = services
            .get_mut(name)
            .ok_or_else(|| BusError::UnknownService(name.to_string()))?;
        let (tx, rx) = mpsc::channel::<Job>();
        let handler: Handler = Box::new(handler);
        thread::Builder::new()
            .name(format!("svc:{name}"))
            .spawn(move || {
                for (req, reply) in rx {
                    let _ = reply.send(handler(&req));
                }
            })
            .map_err(|e| BusError::Connection(e.to_string()))?;
        entry.executor = Some(tx);
        Ok(())
    }

    /// Register a service and attach its handler in one step.
    pub fn serve<F>(&self, spec: ServiceSpec, handler: F) -> Result<(), BusError>
    where
        F: Fn(&[u8]) -> Vec<u8> + Send + 'static,
    {
        let name = spec.name.clone();
        self.register_service(spec)?;
        self.attach_handler(&name, handler)
    }

    pub fn call_service(&self, name: &str, request: &[u8], timeout: Duration) -> Result<Vec<u8>, BusError> {
        let executor = {
            let services = self.inner.services.read().unwrap();
            let entry = services
                .get(name)
                .ok_or_else(|| BusError::UnknownService(name.to_string()))?;
            entry
                .executor
                .clone()
                .ok_or_else(|| BusError::NoHandler(name.to_string()))?
        };
        let (tx, rx) = mpsc::channel();
        executor
            .send((request.to_vec(), tx))
            .map_err(|_| BusError::NoHandler(name.to_string()))?;
        rx.recv_timeout(timeout)
            .map_err(|_| BusError::Timeout(name.to_string()))
    }

    pub fn declare_parameter(&self, name: &str, value: ParamValue, writable: bool) {
        let mut params = self.inner.params.write().unwrap();
        let version = params.get(name).map_or(0, |p| p.version + 1);
        params.insert(
            name.to_string(),
            ParamEntry {
                value,
                writable,
                version,
            },
        );
    }

    pub fn set_parameter(&self, name: &str, value: ParamValue) -> Result<(), BusError> {
        let mut params = self.inner.params.write().unwrap();
        let entry = params
            .get_mut(name)
            .ok_or_else(|| BusError::UnknownParameter(name.to_string()))?;
        if !entry.writable {
            return Err(BusError::NotWritable(name.to_string()));
        }
        if std::mem::discriminant(&entry.value) != std::mem::discriminant(&value) {
            return Err(BusError::TypeMismatch {
                name: name.to_string(),
                expected: entry.value.type_name(),
                got: value.type_name(),
            });
        }
        entry.value = value;
        entry.version += 1;
        Ok(())
    }

    pub fn get_parameter(&self, name: &str) -> Result<ParamValue, BusError> {
        self.inner
            .params
            .read()
            .unwrap()
            .get(name)
            .map(|p| p.value.clone())
            .ok_or_else(|| BusError::UnknownParameter(name.to_string()))
    }

    /// Monotonic change counter of a parameter; owners poll it at cycle
    /// boundaries to detect writes.
    pub fn parameter_version(&self, name: &str) -> Result<u64, BusError> {
        self.inner
            .params
            .read()
            .unwrap()
            .get(name)
            .map(|p| p.version)
            .ok_or_else(|| BusError::UnknownParameter(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bus_with_topic() -> Bus {
        let bus = Bus::new();
        bus.register_topic(TopicSpec::new("joint_telemetry", "joint_telemetry/v1", 100.0))
            .unwrap();
        bus
    }

    #[test]
    fn publish_reaches_every_subscriber_in_order() {
        let bus = bus_with_topic();
        let a = bus.subscribe("joint_telemetry").unwrap();
        let b = bus.subscribe("joint_telemetry").unwrap();
        let rec = [7u8; 64];
        assert_eq!(
            bus.publish("joint_telemetry", &rec, Duration::from_millis(100)).unwrap(),
            2
        );
        bus.publish("joint_telemetry", &[1], Duration::from_millis(110)).unwrap();
        for sub in [&a, &b] {
            let m = sub.drain();
            assert_eq!(m.len(), 2);
            assert_eq!(m[0].payload, rec.to_vec());
            assert_eq!(m[0].stamp, Duration::from_millis(100));
            assert_eq!(m[1].seq, 1);
        }
    }

    #[test]
    fn publish_without_subscribers_is_accepted() {
        let bus = bus_with_topic();
        assert_eq!(bus.publish("joint_telemetry", b"x", Duration::ZERO).unwrap(), 0);
        assert_eq!(bus.published_count("joint_telemetry").unwrap(), 1);
    }

    #[test]
    fn unknown_topic() {
        let bus = Bus::new();
        assert_eq!(
            bus.publish("nope", b"", Duration::ZERO),
            Err(BusError::UnknownTopic("nope".into()))
        );
        assert!(matches!(bus.subscribe("nope"), Err(BusError::UnknownTopic(_))));
    }

    #[test]
    fn topic_names_are_unique_and_nonempty() {
        let bus = bus_with_topic();
        assert!(matches!(
            bus.register_topic(TopicSpec::new("joint_telemetry", "x", 1.0)),
            Err(BusError::DuplicateTopic(_))
        ));
        assert!(bus.register_topic(TopicSpec::new("", "x", 1.0)).is_err());
        assert!(bus.register_topic(TopicSpec::new("neg", "x", -1.0)).is_err());
    }

    #[test]
    fn overflow_drops_oldest_and_counts() {
        let bus = bus_with_topic();
        let sub = bus.subscribe("joint_telemetry").unwrap();
        for i in 0..20u64 {
            bus.publish("joint_telemetry", &i.to_le_bytes(), Duration::from_millis(i)).unwrap();
        }
        assert_eq!(sub.overflow_count(), 4);
        let msgs = sub.drain();
        assert_eq!(msgs.len(), DEFAULT_QUEUE_DEPTH);
        assert_eq!(msgs[0].seq, 4);
        assert_eq!(msgs.last().unwrap().seq, 19);
    }

    #[test]
    fn dropped_subscription_stops_receiving() {
        let bus = bus_with_topic();
        let sub = bus.subscribe("joint_telemetry").unwrap();
        drop(sub);
        assert_eq!(bus.publish("joint_telemetry", b"", Duration::ZERO).unwrap(), 0);
    }

    #[test]
    fn service_round_trip_and_errors() {
        let bus = Bus::new();
        bus.serve(ServiceSpec::new("echo", "bytes", "bytes"), |req| req.to_vec())
            .unwrap();
        assert_eq!(
            bus.call_service("echo", b"abc", Duration::from_secs(1)).unwrap(),
            b"abc".to_vec()
        );
        assert_eq!(
            bus.call_service("missing", b"", Duration::from_secs(1)),
            Err(BusError::UnknownService("missing".into()))
        );
        bus.register_service(ServiceSpec::new("bare", "a", "b")).unwrap();
        assert_eq!(
            bus.call_service("bare", b"", Duration::from_secs(1)),
            Err(BusError::NoHandler("bare".into()))
        );
    }

    #[test]
    fn slow_handler_times_out() {
        let bus = Bus::new();
        bus.serve(ServiceSpec::new("slow", "a", "b"), |_| {
            thread::sleep(Duration::from_millis(400));
            vec![1]
        })
        .unwrap();
        assert_eq!(
            bus.call_service("slow", b"", Duration::from_millis(100)),
            Err(BusError::Timeout("slow".into()))
        );
    }

    #[test]
    fn handler_runs_off_the_caller_thread() {
        let bus = Bus::new();
        bus.serve(ServiceSpec::new("who", "a", "b"), |_| {
            thread::current().name().unwrap_or("").as_bytes().to_vec()
        })
        .unwrap();
        let name = bus.call_service("who", b"", Duration::from_secs(1)).unwrap();
        assert_eq!(name, b"svc:who".to_vec());
    }

    #[test]
    fn parameters() {
        let bus = Bus::new();
        bus.declare_parameter("controller/mode", ParamValue::Str("position".into()), true);
        bus.declare_parameter("hal/serial", ParamValue::Int(3), false);
        let v0 = bus.parameter_version("controller/mode").unwrap();
        bus.set_parameter("controller/mode", ParamValue::Str("impedance".into()))
            .unwrap();
        assert_eq!(
            bus.get_parameter("controller/mode").unwrap(),
            ParamValue::Str("impedance".into())
        );
        assert_eq!(bus.parameter_version("controller/mode").unwrap(), v0 + 1);
        assert!(matches!(
            bus.set_parameter("controller/mode", ParamValue::Float(1.0)),
            Err(BusError::TypeMismatch { .. })
        ));
        assert_eq!(
            bus.set_parameter("hal/serial", ParamValue::Int(4)),
            Err(BusError::NotWritable("hal/serial".into()))
        );
        assert_eq!(
            bus.get_parameter("x"),
            Err(BusError::UnknownParameter("x".into()))
        );
    }

    #[test]
    fn echo_service_returns_request_for_random_payloads() {
        let bus = Bus::new();
        bus.serve(ServiceSpec::new("echo", "bytes", "bytes"), |r| r.to_vec())
            .unwrap();
        use proptest::strategy::ValueTree;
        let mut runner = proptest::test_runner::TestRunner::deterministic();
        let strategy = proptest::collection::vec(any::<u8>(), 0..512);
        for _ in 0..1000 {
            let payload = strategy.new_tree(&mut runner).unwrap().current();
            let resp = bus.call_service("echo", &payload, Duration::from_secs(2)).unwrap();
            assert_eq!(resp, payload);
        }
    }

    proptest! {
        #[test]
        fn per_topic_fifo_across_threads(n in 1usize..200) {
            let bus = bus_with_topic();
            let sub = bus.subscribe_with_depth("joint_telemetry", 1024).unwrap();
            let publisher = bus.clone();
            let h = thread::spawn(move || {
                for i in 0..n as u64 {
                    publisher
                        .publish("joint_telemetry", &i.to_le_bytes(), Duration::from_micros(i))
                        .unwrap();
                }
            });
            h.join().unwrap();
            let msgs = sub.drain();
            prop_assert_eq!(msgs.len(), n);
            for w in msgs.windows(2) {
                prop_assert!(w[0].stamp <= w[1].stamp);
                prop_assert!(w[0].seq < w[1].seq);
            }
        }
    }
}
