use std::collections::HashMap;
use std::fmt;
use std::io;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream, UdpSocket};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use super::message::{DecodeError, EncodeError, Message, MAX_FRAME};

/// Datagram a UDP peer sends to open a logical session.
pub const ATTACH: &str = "ATTACH";
/// Datagram either UDP side sends to close a logical session.
pub const BYE: &str = "BYE";

/// Retransmissions of an unanswered datagram request before `Timeout`.
pub const UDP_RETRIES: u32 = 2;

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum WireError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("accept failed: {0}")]
    Accept(io::Error),
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: SocketAddr, source: io::Error },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("connection closed")]
    ConnectionClosed,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    Tcp,
    Udp,
    BtSim,
}

impl TransportKind {
    pub const ALL: [TransportKind; 3] = [TransportKind::Tcp, TransportKind::Udp, TransportKind::BtSim];

    pub fn as_str(self) -> &'static str {
        match self {
            TransportKind::Tcp => "tcp",
            TransportKind::Udp => "udp",
            TransportKind::BtSim => "bt-sim",
        }
    }

    pub fn default_port(self) -> u16 {
        match self {
            TransportKind::Tcp => 7700,
            TransportKind::Udp => 7701,
            TransportKind::BtSim => 7702,
        }
    }

    pub fn is_datagram(self) -> bool {
        self == TransportKind::Udp
    }
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tcp" => Ok(TransportKind::Tcp),
            "udp" => Ok(TransportKind::Udp),
            "bt-sim" | "bt" => Ok(TransportKind::BtSim),
            other => Err(format!("unknown transport {other:?} (expected tcp, udp or bt-sim)")),
        }
    }
}

/// A transport plus the latency injected into every session it carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransportProfile {
    pub kind: TransportKind,
    /// Slept before each send and after each receive on the gateway side.
    pub message_latency: Duration,
    /// Slept once when a session is established.
    pub setup_latency: Duration,
}

impl TransportProfile {
    pub fn tcp() -> Self {
        Self::zero_latency(TransportKind::Tcp)
    }

    pub fn udp() -> Self {
        Self::zero_latency(TransportKind::Udp)
    }

    /// Bluetooth stand-in: TCP with a slow link.
    pub fn bt_sim() -> Self {
        TransportProfile {
            kind: TransportKind::BtSim,
            message_latency: Duration::from_millis(30),
            setup_latency: Duration::from_millis(600),
        }
    }

    pub fn zero_latency(kind: TransportKind) -> Self {
        TransportProfile { kind, message_latency: Duration::ZERO, setup_latency: Duration::ZERO }
    }

    /// Default profile for a kind; only bt-sim carries latency.
    pub fn for_kind(kind: TransportKind) -> Self {
        match kind {
            TransportKind::BtSim => Self::bt_sim(),
            other => Self::zero_latency(other),
        }
    }
}

type PeerMap = Arc<Mutex<HashMap<SocketAddr, (u64, mpsc::UnboundedSender<Message>)>>>;

/// Removes a demultiplexed peer from the listener's routing table on drop.
struct PeerGuard {
    peers: PeerMap,
    peer: SocketAddr,
    inbox_id: u64,
}

impl Drop for PeerGuard {
    fn drop(&mut self) {
        let mut peers = self.peers.lock().unwrap();
        // A re-ATTACH may already have replaced our entry.
        if peers.get(&self.peer).map(|(id, _)| *id) == Some(self.inbox_id) {
            peers.remove(&self.peer);
        }
    }
}

enum Link {
    Stream {
        reader: BufReader<OwnedReadHalf>,
        writer: OwnedWriteHalf,
    },
    Demuxed {
        socket: Arc<UdpSocket>,
        peer: SocketAddr,
        inbox: mpsc::UnboundedReceiver<Message>,
        _guard: PeerGuard,
    },
    Datagram {
        socket: UdpSocket,
    },
}

impl Link {
    fn stream(stream: TcpStream) -> Self {
        let _ = stream.set_nodelay(true);
        let (r, w) = stream.into_split();
        Link::Stream { reader: BufReader::new(r), writer: w }
    }

    fn is_datagram(&self) -> bool {
        !matches!(self, Link::Stream { .. })
    }

    async fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        let frame = msg.encode()?;
        match self {
            Link::Stream { writer, .. } => {
                writer.write_all(&frame).await.map_err(closed_or_io)?;
            }
            Link::Demuxed { socket, peer, .. } => {
                socket.send_to(&frame, *peer).await?;
            }
            Link::Datagram { socket } => {
                socket.send(&frame).await.map_err(closed_or_io)?;
            }
        }
        Ok(())
    }

    async fn recv(&mut self) -> Result<Message, WireError> {
        match self {
            Link::Stream { reader, .. } => {
                let mut frame = Vec::with_capacity(128);
                let n = (&mut *reader)
                    .take(MAX_FRAME as u64)
                    .read_until(b'\n', &mut frame)
                    .await
                    .map_err(closed_or_io)?;
                if n == 0 {
                    return Err(WireError::ConnectionClosed);
                }
                if frame.last() != Some(&b'\n') {
                    if n < MAX_FRAME {
                        // peer closed mid-frame
                        return Err(WireError::ConnectionClosed);
                    }
                    frame.push(b'\n');
                }
                Ok(Message::decode(&frame)?)
            }
            Link::Demuxed { inbox, .. } => inbox.recv().await.ok_or(WireError::ConnectionClosed),
            Link::Datagram { socket } => {
                let mut buf = vec![0u8; MAX_FRAME + 1];
                let n = socket.recv(&mut buf).await.map_err(closed_or_io)?;
                let msg = Message::decode(&buf[..n])?;
                if msg.is(BYE) {
                    return Err(WireError::ConnectionClosed);
                }
                Ok(msg)
            }
        }
    }

    fn drain_stale(&mut self) {
        if let Link::Demuxed { inbox, .. } = self {
            while inbox.try_recv().is_ok() {}
        }
    }

    async fn close(&mut self) {
        match self {
            Link::Stream { writer, .. } => {
                let _ = writer.shutdown().await;
            }
            Link::Demuxed { socket, peer, .. } => {
                let _ = socket.send_to(b"BYE\n", *peer).await;
            }
            Link::Datagram { socket } => {
                let _ = socket.send(b"BYE\n").await;
            }
        }
    }
}

fn closed_or_io(e: io::Error) -> WireError {
    match e.kind() {
        io::ErrorKind::ConnectionReset
        | io::ErrorKind::ConnectionAborted
        | io::ErrorKind::BrokenPipe
        | io::ErrorKind::ConnectionRefused
        | io::ErrorKind::UnexpectedEof => WireError::ConnectionClosed,
        _ => WireError::Io(e),
    }
}

/// Device-side end of a link: plain send/receive, no latency shaping, no log.
pub struct Connection {
    link: Link,
    peer: SocketAddr,
}

impl Connection {
    /// Connects to a gateway listener. Datagram links announce themselves
    /// with `ATTACH`.
    pub async fn connect(kind: TransportKind, addr: SocketAddr) -> Result<Connection, WireError> {
        let link = if kind.is_datagram() {
            let bind: SocketAddr = if addr.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().unwrap();
            let socket = UdpSocket::bind(bind).await.map_err(|source| WireError::Connect { addr, source })?;
            socket.connect(addr).await.map_err(|source| WireError::Connect { addr, source })?;
            socket
                .send(&Message::new(ATTACH).encode()?)
                .await
                .map_err(|source| WireError::Connect { addr, source })?;
            Link::Datagram { socket }
        } else {
            let stream = TcpStream::connect(addr).await.map_err(|source| WireError::Connect { addr, source })?;
            Link::stream(stream)
        };
        Ok(Connection { link, peer: addr })
    }

    /// Plain TCP client, used for the data sink.
    pub async fn connect_stream(addr: SocketAddr) -> Result<Connection, WireError> {
        Self::connect(TransportKind::Tcp, addr).await
    }

    pub(crate) fn from_stream(stream: TcpStream) -> Connection {
        let peer = stream.peer_addr().unwrap_or_else(|_| ([0, 0, 0, 0], 0).into());
        Connection { link: Link::stream(stream), peer }
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }

    pub async fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        self.link.send(msg).await
    }

    pub async fn recv(&mut self) -> Result<Message, WireError> {
        self.link.recv().await
    }

    pub async fn request(&mut self, msg: &Message, timeout: Duration) -> Result<Message, WireError> {
        self.send(msg).await?;
        tokio::time::timeout(timeout, self.recv()).await.map_err(|_| WireError::Timeout(timeout))?
    }

    pub async fn close(mut self) {
        self.link.close().await;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Outbound,
    Inbound,
}

#[derive(Debug, Clone)]
pub struct LogEntry {
    pub direction: Direction,
    pub at: Instant,
    pub message: Message,
}

/// Gateway-side end of a sensor link, with latency shaping and a message log.
pub struct Session {
    link: Link,
    peer: SocketAddr,
    profile: TransportProfile,
    timeout: Duration,
    log: Vec<LogEntry>,
    accepted_at: Instant,
    established_at: Option<Instant>,
    closed: bool,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("peer", &self.peer)
            .field("transport", &self.profile.kind)
            .field("messages", &self.log.len())
            .field("closed", &self.closed)
            .finish()
    }
}

impl Session {
    fn new(link: Link, peer: SocketAddr, profile: TransportProfile) -> Self {
        Session {
            link,
            peer,
            profile,
            timeout: DEFAULT_REQUEST_TIMEOUT,
            log: Vec::new(),
            accepted_at: Instant::now(),
            established_at: None,
            closed: false,
        }
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }

    pub fn profile(&self) -> TransportProfile {
        self.profile
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    pub fn accepted_at(&self) -> Instant {
        self.accepted_at
    }

    pub fn established_at(&self) -> Option<Instant> {
        self.established_at
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Completes link setup, paying the profile's setup latency once.
    pub async fn establish(&mut self) -> Instant {
        if let Some(at) = self.established_at {
            return at;
        }
        if !self.profile.setup_latency.is_zero() {
            tokio::time::sleep(self.profile.setup_latency).await;
        }
        let at = Instant::now();
        self.established_at = Some(at);
        at
    }

    /// Sends `msg` and returns the next inbound frame. Datagram sessions
    /// retransmit up to [`UDP_RETRIES`] times before reporting `Timeout`.
    pub async fn request(&mut self, msg: &Message, timeout: Duration) -> Result<Message, WireError> {
        if self.closed {
            return Err(WireError::ConnectionClosed);
        }
        self.establish().await;
        self.link.drain_stale();
        self.shape().await;
        if let Err(e) = self.link.send(msg).await {
            return Err(self.fail(e));
        }
        self.log.push(LogEntry { direction: Direction::Outbound, at: Instant::now(), message: msg.clone() });

        let attempts = if self.link.is_datagram() { 1 + UDP_RETRIES } else { 1 };
        for attempt in 1..=attempts {
            match tokio::time::timeout(timeout, self.link.recv()).await {
                Ok(Ok(reply)) => {
                    self.shape().await;
                    self.log.push(LogEntry { direction: Direction::Inbound, at: Instant::now(), message: reply.clone() });
                    return Ok(reply);
                }
                Ok(Err(e)) => return Err(self.fail(e)),
                Err(_) if attempt < attempts => {
                    tracing::debug!(peer = %self.peer, attempt, "retransmitting {}", msg.verb());
                    if let Err(e) = self.link.send(msg).await {
                        return Err(self.fail(e));
                    }
                }
                Err(_) => {}
            }
        }
        Err(WireError::Timeout(timeout))
    }

    /// `request` with the session's configured timeout.
    pub async fn call(&mut self, msg: &Message) -> Result<Message, WireError> {
        let t = self.timeout;
        self.request(msg, t).await
    }

    async fn shape(&self) {
        if !self.profile.message_latency.is_zero() {
            tokio::time::sleep(self.profile.message_latency).await;
        }
    }

    fn fail(&mut self, e: WireError) -> WireError {
        match e {
            // a garbled frame leaves the stream position unknown
            WireError::ConnectionClosed | WireError::Io(_) | WireError::Decode(_) => self.closed = true,
            _ => {}
        }
        e
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Concatenated wire frames of the log, in order.
    pub fn transcript(&self) -> Vec<u8> {
        self.log.iter().flat_map(|e| e.message.encode().unwrap_or_default()).collect()
    }

    pub async fn close(&mut self) {
        if !self.closed {
            self.closed = true;
            self.link.close().await;
        }
    }
}

enum ListenerInner {
    Stream(TcpListener),
    Datagram { pending: mpsc::UnboundedReceiver<Session>, demux: JoinHandle<()> },
}

/// Accepts sensor sessions for one transport profile.
pub struct Listener {
    profile: TransportProfile,
    local_addr: SocketAddr,
    inner: ListenerInner,
}

impl fmt::Debug for Listener {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Listener").field("kind", &self.profile.kind).field("local_addr", &self.local_addr).finish()
    }
}

impl Drop for Listener {
    fn drop(&mut self) {
        if let ListenerInner::Datagram { demux, .. } = &self.inner {
            demux.abort();
        }
    }
}

pub async fn open_listener(profile: TransportProfile, bind: SocketAddr) -> Result<Listener, WireError> {
    Listener::bind(profile, bind).await
}

impl Listener {
    pub async fn bind(profile: TransportProfile, bind: SocketAddr) -> Result<Listener, WireError> {
        let bind_err = |source| WireError::Bind { addr: bind, source };
        if profile.kind.is_datagram() {
            let socket = Arc::new(UdpSocket::bind(bind).await.map_err(bind_err)?);
            let local_addr = socket.local_addr()?;
            let (tx, pending) = mpsc::unbounded_channel();
            let demux = tokio::spawn(demultiplex(socket, profile, tx));
            Ok(Listener { profile, local_addr, inner: ListenerInner::Datagram { pending, demux } })
        } else {
            let listener = TcpListener::bind(bind).await.map_err(bind_err)?;
            let local_addr = listener.local_addr()?;
            Ok(Listener { profile, local_addr, inner: ListenerInner::Stream(listener) })
        }
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn profile(&self) -> TransportProfile {
        self.profile
    }

    /// Next inbound session. An `Accept` error concerns one connection only.
    pub async fn accept(&mut self) -> Result<Session, WireError> {
        match &mut self.inner {
            ListenerInner::Stream(listener) => {
                let (stream, peer) = listener.accept().await.map_err(WireError::Accept)?;
                Ok(Session::new(Link::stream(stream), peer, self.profile))
            }
            ListenerInner::Datagram { pending, .. } => pending
                .recv()
                .await
                .ok_or_else(|| WireError::Accept(io::Error::other("datagram demultiplexer stopped"))),
        }
    }
}

async fn demultiplex(socket: Arc<UdpSocket>, profile: TransportProfile, accepted: mpsc::UnboundedSender<Session>) {
    let peers: PeerMap = Arc::default();
    let mut next_id = 0u64;
    let mut buf = vec![0u8; MAX_FRAME + 1];
    loop {
        let (n, peer) = match socket.recv_from(&mut buf).await {
            Ok(v) => v,
            Err(e) => {
                // ICMP unreachable from a departed peer surfaces here on some platforms
                tracing::debug!("udp recv error: {e}");
                continue;
            }
        };
        let msg = match Message::decode(&buf[..n]) {
            Ok(m) => m,
            Err(e) => {
                tracing::debug!(%peer, "dropping bad datagram: {e}");
                continue;
            }
        };
        if msg.is(ATTACH) {
            let (tx, inbox) = mpsc::unbounded_channel();
            next_id += 1;
            let guard = PeerGuard { peers: peers.clone(), peer, inbox_id: next_id };
            peers.lock().unwrap().insert(peer, (next_id, tx));
            let link = Link::Demuxed { socket: socket.clone(), peer, inbox, _guard: guard };
            if accepted.send(Session::new(link, peer, profile)).is_err() {
                return;
            }
            continue;
        }
        let mut map = peers.lock().unwrap();
        if msg.is(BYE) {
            map.remove(&peer);
        } else if let Some((_, tx)) = map.get(&peer) {
            if tx.send(msg).is_err() {
                map.remove(&peer);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn local() -> SocketAddr {
        "127.0.0.1:0".parse().unwrap()
    }

    async fn echo_device(kind: TransportKind, addr: SocketAddr) {
        let mut conn = Connection::connect(kind, addr).await.unwrap();
        while let Ok(m) = conn.recv().await {
            if conn.send(&Message::new("ECHO").arg("verb", m.verb())).await.is_err() {
                break;
            }
        }
    }

    #[tokio::test]
    async fn tcp_request_reply() {
        let mut l = open_listener(TransportProfile::tcp(), local()).await.unwrap();
        tokio::spawn(echo_device(TransportKind::Tcp, l.local_addr()));
        let mut s = l.accept().await.unwrap();
        let reply = s.request(&Message::new("WHO"), Duration::from_secs(1)).await.unwrap();
        assert_eq!(reply, Message::new("ECHO").arg("verb", "WHO"));
        assert_eq!(s.transcript(), b"WHO\nECHO|verb=WHO\n");
        assert_eq!(s.log()[0].direction, Direction::Outbound);
        assert!(s.log()[0].at <= s.log()[1].at);
    }

    #[tokio::test]
    async fn udp_sessions_are_demultiplexed_by_peer() {
        let mut l = open_listener(TransportProfile::udp(), local()).await.unwrap();
        let addr = l.local_addr();
        tokio::spawn(echo_device(TransportKind::Udp, addr));
        tokio::spawn(echo_device(TransportKind::Udp, addr));
        let mut a = l.accept().await.unwrap();
        let mut b = l.accept().await.unwrap();
        assert_ne!(a.peer(), b.peer());
        for i in 0..5 {
            let verb = format!("PING{i}");
            let ra = a.request(&Message::new(&verb), Duration::from_secs(1)).await.unwrap();
            let rb = b.request(&Message::new("PONG"), Duration::from_secs(1)).await.unwrap();
            assert_eq!(ra.get("verb"), Some(verb.as_str()));
            assert_eq!(rb.get("verb"), Some("PONG"));
        }
    }

    #[tokio::test]
    async fn bind_to_occupied_port_fails() {
        let l = open_listener(TransportProfile::tcp(), local()).await.unwrap();
        let err = open_listener(TransportProfile::tcp(), l.local_addr()).await.unwrap_err();
        assert!(matches!(err, WireError::Bind { .. }));
        let u = open_listener(TransportProfile::udp(), local()).await.unwrap();
        let err = open_listener(TransportProfile::udp(), u.local_addr()).await.unwrap_err();
        assert!(matches!(err, WireError::Bind { .. }));
    }

    #[tokio::test]
    async fn silent_peer_times_out() {
        let mut l = open_listener(TransportProfile::tcp(), local()).await.unwrap();
        let addr = l.local_addr();
        let _device = tokio::spawn(async move {
            let _c = Connection::connect(TransportKind::Tcp, addr).await.unwrap();
            tokio::time::sleep(Duration::from_secs(5)).await;
        });
        let mut s = l.accept().await.unwrap();
        let err = s.request(&Message::new("WHO"), Duration::from_millis(100)).await.unwrap_err();
        assert!(matches!(err, WireError::Timeout(_)));
    }

    #[tokio::test]
    async fn udp_retransmits_before_timeout() {
        let mut l = open_listener(TransportProfile::udp(), local()).await.unwrap();
        let addr = l.local_addr();
        let (seen_tx, mut seen) = mpsc::unbounded_channel();
        tokio::spawn(async move {
            let mut c = Connection::connect(TransportKind::Udp, addr).await.unwrap();
            while let Ok(m) = c.recv().await {
                let _ = seen_tx.send(m);
            }
        });
        let mut s = l.accept().await.unwrap();
        let err = s.request(&Message::new("WHO"), Duration::from_millis(50)).await.unwrap_err();
        assert!(matches!(err, WireError::Timeout(_)));
        let mut count = 0;
        while seen.try_recv().is_ok() {
            count += 1;
        }
        assert_eq!(count, 1 + UDP_RETRIES as usize);
        // retransmissions are transport-level and stay out of the log
        assert_eq!(s.log().len(), 1);
    }

    #[tokio::test]
    async fn closed_session_reports_connection_closed() {
        let mut l = open_listener(TransportProfile::tcp(), local()).await.unwrap();
        let addr = l.local_addr();
        tokio::spawn(async move {
            let c = Connection::connect(TransportKind::Tcp, addr).await.unwrap();
            c.close().await;
        });
        let mut s = l.accept().await.unwrap();
        let err = s.request(&Message::new("WHO"), Duration::from_secs(1)).await.unwrap_err();
        assert!(matches!(err, WireError::ConnectionClosed), "{err:?}");
        let err = s.request(&Message::new("WHO"), Duration::from_secs(1)).await.unwrap_err();
        assert!(matches!(err, WireError::ConnectionClosed));

        let mut l = open_listener(TransportProfile::tcp(), local()).await.unwrap();
        tokio::spawn(echo_device(TransportKind::Tcp, l.local_addr()));
        let mut s = l.accept().await.unwrap();
        s.close().await;
        assert!(matches!(s.call(&Message::new("WHO")).await, Err(WireError::ConnectionClosed)));
    }

    #[tokio::test]
    async fn bt_sim_latency_is_injected() {
        let profile = TransportProfile {
            kind: TransportKind::BtSim,
            message_latency: Duration::from_millis(40),
            setup_latency: Duration::from_millis(100),
        };
        let mut l = open_listener(profile, local()).await.unwrap();
        tokio::spawn(echo_device(TransportKind::BtSim, l.local_addr()));
        let mut s = l.accept().await.unwrap();
        let t0 = Instant::now();
        s.establish().await;
        assert!(t0.elapsed() >= profile.setup_latency);
        let t1 = Instant::now();
        s.request(&Message::new("WHO"), Duration::from_secs(1)).await.unwrap();
        assert!(t1.elapsed() >= 2 * profile.message_latency);
    }

    #[tokio::test]
    async fn udp_bye_closes_logical_session() {
        let mut l = open_listener(TransportProfile::udp(), local()).await.unwrap();
        let addr = l.local_addr();
        tokio::spawn(async move {
            let mut c = Connection::connect(TransportKind::Udp, addr).await.unwrap();
            let _ = c.recv().await;
            c.close().await;
        });
        let mut s = l.accept().await.unwrap();
        let err = s.request(&Message::new("WHO"), Duration::from_secs(1)).await.unwrap_err();
        assert!(matches!(err, WireError::ConnectionClosed), "{err:?}");
    }
}
