//! Networked deployment of the round protocol over TCP.
//!
//! Frames are newline-delimited JSON objects, one message per line. Hosts
//! send only an architecture digest, their weights and their corpus size;
//! the synchronizer sends back initial and combined weights. No message type
//! has room for samples or labels.
//!
//! Handshake: `HELLO → WELCOME → INIT_MODEL`. Each round every host sends
//! `SUBMIT` and receives `COMBINED`; the last `COMBINED` is flagged
//! `final_round` and followed by `DONE`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::combiner::CombineConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ArchitectureDescriptor, HostSubmission, LayerValues, ParameterSet};
use crate::orchestrator::{host_step, shared_init, Coordinator, RoundRecord, StopRule};
use crate::trainer::TrainConfig;

pub const DEFAULT_ROUND_TIMEOUT: Duration = Duration::from_secs(300);
pub const DEFAULT_CONNECT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Message {
    Hello {
        session_id: String,
        host_id: String,
        architecture_digest: String,
    },
    Welcome {
        session_id: String,
        round: u64,
    },
    InitModel {
        session_id: String,
        round: u64,
        layers: Vec<LayerValues>,
    },
    Submit {
        session_id: String,
        round: u64,
        host_id: String,
        corpus_size: u64,
        layers: Vec<LayerValues>,
    },
    Combined {
        session_id: String,
        round: u64,
        final_round: bool,
        layers: Vec<LayerValues>,
    },
    Done {
        session_id: String,
        round: u64,
    },
    Error {
        session_id: String,
        message: String,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "HELLO",
            Message::Welcome { .. } => "WELCOME",
            Message::InitModel { .. } => "INIT_MODEL",
            Message::Submit { .. } => "SUBMIT",
            Message::Combined { .. } => "COMBINED",
            Message::Done { .. } => "DONE",
            Message::Error { .. } => "ERROR",
        }
    }
}

/// One JSON line terminated by `\n`. Fails on non-finite reals, which JSON
/// cannot represent.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>> {
    if let Message::InitModel { layers, .. } | Message::Submit { layers, .. } | Message::Combined { layers, .. } = msg {
        if layers.iter().flat_map(|l| &l.values).any(|v| !v.is_finite()) {
            return Err(Error::Serialization(format!("{} carries non-finite weights", msg.kind())));
        }
    }
    let mut bytes = serde_json::to_vec(msg).map_err(|e| Error::Serialization(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Decodes exactly one frame. The trailing newline is required, so a
/// truncated frame never yields a message.
pub fn decode_frame(bytes: &[u8]) -> Result<Message> {
    let body = match bytes.last() {
        Some(b'\n') => &bytes[..bytes.len() - 1],
        _ => {
            return Err(Error::protocol(format!(
                "truncated frame: no newline after {} bytes",
                bytes.len()
            )))
        }
    };
    if let Some(pos) = body.iter().position(|&b| b == b'\n') {
        return Err(Error::protocol(format!("malformed frame at byte {pos}: embedded newline")));
    }
    serde_json::from_slice(body).map_err(|e| {
        // Frames are a single line, so the column is the byte position.
        let offset = e.column().saturating_sub(1);
        Error::protocol(format!("malformed frame at byte {offset}: {e}"))
    })
}

fn send(stream: &mut TcpStream, msg: &Message) -> Result<()> {
    stream.write_all(&encode_message(msg)?)?;
    stream.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
fn read_frame(reader: &mut impl BufRead) -> Result<Option<Message>> {
    let mut buf = Vec::new();
    let n = reader.read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    decode_frame(&buf).map(Some)
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialParams {
    ServerRandomSeed(u64),
    Preloaded(ParameterSet),
}

#[derive(Clone, Debug)]
pub struct SessionSpec {
    pub session_id: String,
    pub expected_hosts: usize,
    pub architecture: ArchitectureDescriptor,
    pub combine_config: CombineConfig,
    pub max_rounds: usize,
    pub stop_epsilon: f64,
    pub stop_patience: usize,
    pub initial_params: InitialParams,
    pub round_timeout: Duration,
}

impl SessionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.expected_hosts < 2 {
            return Err(Error::config("expected_hosts must be at least 2"));
        }
        if self.max_rounds < 1 || self.stop_patience < 1 {
            return Err(Error::config("max_rounds and stop_patience must be at least 1"));
        }
        if self.stop_epsilon.is_nan() || self.stop_epsilon < 0.0 {
            return Err(Error::config("stop_epsilon must be non-negative"));
        }
        if let InitialParams::Preloaded(p) = &self.initial_params {
            if p.architecture() != &self.architecture {
                return Err(Error::config("preloaded model does not match the session architecture"));
            }
        }
        self.combine_config.validate()
    }

    fn initial(&self) -> ParameterSet {
        match &self.initial_params {
            InitialParams::ServerRandomSeed(seed) => shared_init(&self.architecture, *seed),
            InitialParams::Preloaded(p) => p.clone(),
        }
    }
}

/// What the synchronizer ends with. `abort` is set when the session stopped
/// before completion; the rounds finished until then are still present.
#[derive(Debug)]
pub struct SessionResult {
    pub records: Vec<RoundRecord>,
    pub models: Vec<ParameterSet>,
    pub stopped_early: bool,
    pub abort: Option<Error>,
}

enum Event {
    Connected(usize, TcpStream),
    Frame(usize, Result<Message>),
    Closed(usize),
}

struct Conn {
    stream: TcpStream,
    host: Option<String>,
}

/// The synchronizing site: a bound listener plus the session it will run.
pub struct Synchronizer {
    spec: SessionSpec,
    test: Dataset,
    listener: TcpListener,
}

impl Synchronizer {
    pub fn bind(spec: SessionSpec, test: Dataset, addr: impl ToSocketAddrs) -> Result<Self> {
        spec.validate()?;
        if test.n_features() != spec.architecture.input_dim() {
            return Err(Error::config("test set width does not match the architecture"));
        }
        let listener = TcpListener::bind(addr)?;
        Ok(Self { spec, test, listener })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Runs the session to completion. `on_round` sees every finished round,
    /// so callers can persist results as they arrive.
    pub fn run(self, mut on_round: impl FnMut(&RoundRecord, &ParameterSet) -> Result<()>) -> Result<SessionResult> {
        let Synchronizer { spec, test, listener } = self;
        let (tx, rx) = mpsc::channel::<Event>();
        let stop = Arc::new(AtomicBool::new(false));
        listener.set_nonblocking(true)?;
        let acceptor = {
            let stop = stop.clone();
            let tx = tx.clone();
            thread::spawn(move || accept_loop(listener, tx, stop))
        };
        drop(tx);

        let mut session = Session::new(&spec, test);
        let outcome = session.drive(&rx, &mut on_round);
        stop.store(true, Ordering::SeqCst);
        for conn in session.conns.values() {
            let _ = conn.stream.shutdown(Shutdown::Both);
        }
        let _ = acceptor.join();

        let stopped_early = session.coord.stopped();
        let records = session.coord.records().to_vec();
        let models = session.coord.models().to_vec();
        Ok(SessionResult {
            records,
            models,
            stopped_early,
            abort: outcome.err(),
        })
    }
}

/// Binds and runs in one call.
pub fn serve(spec: SessionSpec, test: Dataset, bind_address: impl ToSocketAddrs) -> Result<SessionResult> {
    Synchronizer::bind(spec, test, bind_address)?.run(|_, _| Ok(()))
}

fn accept_loop(listener: TcpListener, tx: mpsc::Sender<Event>, stop: Arc<AtomicBool>) {
    let mut next_id = 0;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next_id;
                next_id += 1;
                if stream.set_nonblocking(false).is_err() {
                    continue;
                }
                let reader = match stream.try_clone() {
                    Ok(r) => r,
                    Err(_) => continue,
                };
                if tx.send(Event::Connected(id, stream)).is_err() {
                    return;
                }
                let tx = tx.clone();
                thread::spawn(move || read_loop(id, reader, tx));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(5));
            }
        }
    }
}

fn read_loop(id: usize, stream: TcpStream, tx: mpsc::Sender<Event>) {
    let mut reader = BufReader::new(stream);
    loop {
        match read_frame(&mut reader) {
            Ok(Some(msg)) => {
                if tx.send(Event::Frame(id, Ok(msg))).is_err() {
                    return;
                }
            }
            Ok(None) => break,
            Err(e) => {
                let fatal = matches!(e, Error::Io(_));
                let _ = tx.send(Event::Frame(id, Err(e)));
                if fatal {
                    break;
                }
            }
        }
    }
    let _ = tx.send(Event::Closed(id));
}

struct Session<'a> {
    spec: &'a SessionSpec,
    digest: String,
    coord: Coordinator,
    conns: HashMap<usize, Conn>,
    hosts: BTreeMap<String, usize>,
    /// Submissions for the current round, by host.
    pending: BTreeMap<String, (HostSubmission, String)>,
    /// Digest of each host's submission in the previous round, for re-sends.
    previous: BTreeMap<String, String>,
    corpus_sizes: BTreeMap<String, u64>,
    finished: bool,
}

impl<'a> Session<'a> {
    fn new(spec: &'a SessionSpec, test: Dataset) -> Self {
        let coord = Coordinator::new(
            spec.initial(),
            test,
            spec.combine_config.clone(),
            StopRule::new(spec.stop_epsilon, spec.stop_patience),
        );
        Self {
            spec,
            digest: spec.architecture.digest(),
            coord,
            conns: HashMap::new(),
            hosts: BTreeMap::new(),
            pending: BTreeMap::new(),
            previous: BTreeMap::new(),
            corpus_sizes: BTreeMap::new(),
            finished: false,
        }
    }

    fn round(&self) -> u64 {
        self.coord.next_round() as u64
    }

    fn error_msg(&self, message: impl Into<String>) -> Message {
        Message::Error {
            session_id: self.spec.session_id.clone(),
            message: message.into(),
        }
    }

    fn reply(&mut self, conn: usize, msg: &Message) -> Result<()> {
        match self.conns.get_mut(&conn) {
            Some(c) => send(&mut c.stream, msg),
            None => Ok(()),
        }
    }

    /// Sends an ERROR and drops the connection.
    fn reject(&mut self, conn: usize, message: &str) {
        log::warn!("rejecting connection {conn}: {message}");
        let msg = self.error_msg(message);
        let _ = self.reply(conn, &msg);
        if let Some(c) = self.conns.remove(&conn) {
            let _ = c.stream.shutdown(Shutdown::Both);
        }
    }

    fn broadcast(&mut self, msg: &Message) -> Result<()> {
        let frame = encode_message(msg)?;
        for id in self.hosts.values() {
            if let Some(c) = self.conns.get_mut(id) {
                c.stream.write_all(&frame)?;
                c.stream.flush()?;
            }
        }
        Ok(())
    }

    fn abort(&mut self, err: Error) -> Error {
        let msg = self.error_msg(format!("session aborted: {err}"));
        let _ = self.broadcast(&msg);
        err
    }

    fn drive(
        &mut self,
        rx: &mpsc::Receiver<Event>,
        on_round: &mut impl FnMut(&RoundRecord, &ParameterSet) -> Result<()>,
    ) -> Result<()> {
        let mut deadline = Instant::now() + self.spec.round_timeout;
        while !self.finished {
            let wait = deadline.saturating_duration_since(Instant::now());
            let event = match rx.recv_timeout(wait) {
                Ok(ev) => ev,
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    let err = Error::Timeout(format!(
                        "round {} incomplete after {:?}: {} of {} submissions",
                        self.round(),
                        self.spec.round_timeout,
                        self.pending.len(),
                        self.spec.expected_hosts
                    ));
                    return Err(self.abort(err));
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(Error::protocol("listener stopped unexpectedly"));
                }
            };
            let before = self.round();
            match self.handle(event, on_round) {
                Ok(()) => {}
                Err(e) => return Err(self.abort(e)),
            }
            if self.round() != before {
                deadline = Instant::now() + self.spec.round_timeout;
            }
        }
        Ok(())
    }

    fn handle(
        &mut self,
        event: Event,
        on_round: &mut impl FnMut(&RoundRecord, &ParameterSet) -> Result<()>,
    ) -> Result<()> {
        match event {
            Event::Connected(id, stream) => {
                self.conns.insert(id, Conn { stream, host: None });
                Ok(())
            }
            Event::Closed(id) => {
                let host = self.conns.remove(&id).and_then(|c| c.host);
                match host {
                    Some(h) => Err(Error::protocol(format!("host {h} disconnected during round {}", self.round()))),
                    None => Ok(()),
                }
            }
            Event::Frame(id, Err(e)) => {
                let host = self.conns.get(&id).and_then(|c| c.host.clone());
                self.reject(id, &e.to_string());
                match host {
                    Some(h) => Err(Error::protocol(format!("host {h} sent a malformed frame: {e}"))),
                    None => Ok(()),
                }
            }
            Event::Frame(id, Ok(msg)) => self.on_message(id, msg, on_round),
        }
    }

    fn on_message(
        &mut self,
        id: usize,
        msg: Message,
        on_round: &mut impl FnMut(&RoundRecord, &ParameterSet) -> Result<()>,
    ) -> Result<()> {
        let registered = self.conns.get(&id).and_then(|c| c.host.clone());
        match msg {
            Message::Hello {
                session_id,
                host_id,
                architecture_digest,
            } => {
                if registered.is_some() {
                    self.reject(id, "duplicate HELLO on one connection");
                    return Err(Error::protocol("host repeated HELLO"));
                }
                if session_id != self.spec.session_id {
                    self.reject(id, &format!("unknown session {session_id:?}"));
                } else if architecture_digest != self.digest {
                    self.reject(id, "architecture digest mismatch");
                } else if self.hosts.contains_key(&host_id) {
                    self.reject(id, &format!("duplicate host_id {host_id:?}"));
                } else if self.hosts.len() >= self.spec.expected_hosts {
                    self.reject(id, "session full");
                } else {
                    log::info!("host {host_id} joined");
                    if let Some(c) = self.conns.get_mut(&id) {
                        c.host = Some(host_id.clone());
                    }
                    self.hosts.insert(host_id, id);
                    let welcome = Message::Welcome {
                        session_id: self.spec.session_id.clone(),
                        round: 0,
                    };
                    let init = Message::InitModel {
                        session_id: self.spec.session_id.clone(),
                        round: 0,
                        layers: self.coord.models().first().unwrap_or(self.coord.current()).to_layer_values(),
                    };
                    self.reply(id, &welcome)?;
                    self.reply(id, &init)?;
                }
                Ok(())
            }
            Message::Submit {
                session_id,
                round,
                host_id,
                corpus_size,
                layers,
            } => {
                let Some(owner) = registered else {
                    self.reject(id, "SUBMIT before HELLO");
                    return Ok(());
                };
                if owner != host_id || session_id != self.spec.session_id {
                    let msg = self.error_msg("SUBMIT host_id or session_id does not match the handshake");
                    self.reply(id, &msg)?;
                    return Err(Error::protocol(format!("host {owner} submitted as {host_id:?}")));
                }
                self.on_submit(id, host_id, round, corpus_size, layers, on_round)
            }
            other => {
                let kind = other.kind();
                let msg = self.error_msg(format!("unexpected {kind} from a host"));
                self.reply(id, &msg)?;
                match registered {
                    Some(h) => Err(Error::protocol(format!("host {h} sent {kind}"))),
                    None => Ok(()),
                }
            }
        }
    }

    fn on_submit(
        &mut self,
        id: usize,
        host_id: String,
        round: u64,
        corpus_size: u64,
        layers: Vec<LayerValues>,
        on_round: &mut impl FnMut(&RoundRecord, &ParameterSet) -> Result<()>,
    ) -> Result<()> {
        let params = match ParameterSet::from_layer_values(self.spec.architecture.clone(), layers) {
            Ok(p) => p,
            Err(e) => {
                let msg = self.error_msg(format!("architecture mismatch: {e}"));
                self.reply(id, &msg)?;
                return Err(Error::protocol(format!("host {host_id} submitted an incompatible model: {e}")));
            }
        };
        let digest = params.digest();
        let current = self.round();
        if round + 1 == current && self.previous.get(&host_id) == Some(&digest) {
            log::debug!("ignoring re-sent round {round} submission from {host_id}");
            return Ok(());
        }
        if round != current {
            let msg = self.error_msg(format!("stale or future round {round}, expected {current}"));
            self.reply(id, &msg)?;
            return Err(Error::protocol(format!("host {host_id} submitted round {round} during round {current}")));
        }
        if let Some((_, seen)) = self.pending.get(&host_id) {
            if *seen == digest {
                log::debug!("ignoring duplicate round {round} submission from {host_id}");
                return Ok(());
            }
            let msg = self.error_msg("conflicting second submission for this round");
            self.reply(id, &msg)?;
            return Err(Error::protocol(format!("host {host_id} submitted twice in round {round}")));
        }
        let sub = HostSubmission::new(host_id.clone(), round, corpus_size, params)
            .map_err(|e| Error::protocol(e.to_string()))?;
        if let Some(old) = self.corpus_sizes.insert(host_id.clone(), corpus_size) {
            if old != corpus_size {
                log::info!("host {host_id} corpus size changed from {old} to {corpus_size}");
            }
        }
        self.pending.insert(host_id, (sub, digest));
        if self.pending.len() == self.spec.expected_hosts {
            self.close_round(on_round)?;
        }
        Ok(())
    }

    fn close_round(&mut self, on_round: &mut impl FnMut(&RoundRecord, &ParameterSet) -> Result<()>) -> Result<()> {
        let round = self.round();
        let pending = std::mem::take(&mut self.pending);
        self.previous = pending.iter().map(|(h, (_, d))| (h.clone(), d.clone())).collect();
        let subs: Vec<HostSubmission> = pending.into_values().map(|(s, _)| s).collect();
        let (combined, stop) = self.coord.finish_round(&subs)?;
        let combined = combined.clone();
        let final_round = stop || round as usize >= self.spec.max_rounds;
        on_round(self.coord.records().last().expect("round recorded"), &combined)?;
        log::info!(
            "round {round}: combined accuracy {:.4}",
            self.coord.records().last().unwrap().combined_accuracy
        );
        self.broadcast(&Message::Combined {
            session_id: self.spec.session_id.clone(),
            round,
            final_round,
            layers: combined.to_layer_values(),
        })?;
        if final_round {
            self.broadcast(&Message::Done {
                session_id: self.spec.session_id.clone(),
                round,
            })?;
            self.finished = true;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct JoinOptions {
    pub session_id: String,
    pub architecture: ArchitectureDescriptor,
    pub connect_timeout: Duration,
    pub round_timeout: Duration,
}

impl JoinOptions {
    pub fn new(session_id: impl Into<String>, architecture: ArchitectureDescriptor) -> Self {
        Self {
            session_id: session_id.into(),
            architecture,
            connect_timeout: DEFAULT_CONNECT_TIMEOUT,
            round_timeout: DEFAULT_ROUND_TIMEOUT,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JoinResult {
    pub final_model: ParameterSet,
    pub rounds: u64,
}

fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<TcpStream> {
    let mut last = None;
    for a in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(last.map(Error::Io).unwrap_or_else(|| Error::config("server address resolved to nothing")))
}

fn expect_frame(reader: &mut impl BufRead) -> Result<Message> {
    match read_frame(reader) {
        Ok(Some(Message::Error { message, .. })) => Err(Error::Protocol(format!("server error: {message}"))),
        Ok(Some(m)) => Ok(m),
        Ok(None) => Err(Error::protocol("server closed the connection")),
        Err(Error::Io(e)) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
            Err(Error::Timeout("no message from the server within the round timeout".into()))
        }
        Err(e) => Err(e),
    }
}

/// Host side of a session: trains locally each round and adopts the combined
/// model, returning the last one received.
pub fn join(
    server_address: impl ToSocketAddrs,
    host_id: &str,
    local_dataset: &Dataset,
    train_config: &TrainConfig,
    options: &JoinOptions,
) -> Result<JoinResult> {
    train_config.validate(&options.architecture)?;
    let mut stream = connect(server_address, options.connect_timeout)?;
    stream.set_read_timeout(Some(options.round_timeout))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let sid = options.session_id.clone();
    send(
        &mut stream,
        &Message::Hello {
            session_id: sid.clone(),
            host_id: host_id.to_string(),
            architecture_digest: options.architecture.digest(),
        },
    )?;
    match expect_frame(&mut reader)? {
        Message::Welcome { .. } => {}
        other => return Err(Error::protocol(format!("expected WELCOME, got {}", other.kind()))),
    }
    let mut current = match expect_frame(&mut reader)? {
        Message::InitModel { layers, .. } => ParameterSet::from_layer_values(options.architecture.clone(), layers)
            .map_err(|e| Error::protocol(format!("INIT_MODEL does not fit the architecture: {e}")))?,
        other => return Err(Error::protocol(format!("expected INIT_MODEL, got {}", other.kind()))),
    };
    let mut round = 0u64;
    loop {
        let sub = host_step(host_id, local_dataset, train_config, &current, round)?;
        send(
            &mut stream,
            &Message::Submit {
                session_id: sid.clone(),
                round,
                host_id: host_id.to_string(),
                corpus_size: sub.corpus_size,
                layers: sub.params.to_layer_values(),
            },
        )?;
        match expect_frame(&mut reader)? {
            Message::Combined {
                round: r,
                final_round,
                layers,
                ..
            } => {
                if r != round {
                    return Err(Error::protocol(format!("COMBINED for round {r} while in round {round}")));
                }
                current = ParameterSet::from_layer_values(options.architecture.clone(), layers)
                    .map_err(|e| Error::protocol(format!("COMBINED does not fit the architecture: {e}")))?;
                if final_round {
                    match expect_frame(&mut reader)? {
                        Message::Done { .. } => {}
                        other => return Err(Error::protocol(format!("expected DONE, got {}", other.kind()))),
                    }
                    return Ok(JoinResult {
                        final_model: current,
                        rounds: round,
                    });
                }
            }
            Message::Done { .. } => {
                return Ok(JoinResult {
                    final_model: current,
                    rounds: round,
                })
            }
            other => return Err(Error::protocol(format!("expected COMBINED, got {}", other.kind()))),
        }
        round += 1;
    }
}
