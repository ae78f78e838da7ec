//! Server/client message passing.
//!
//! Clients run on their own threads and talk to the server only through a
//! [`Link`]: either an in-process channel pair or a TCP connection carrying
//! [`frame`]-encoded messages. [`broadcast_and_collect`] is the round
//! barrier.

pub mod frame;

use std::io::{BufReader, BufWriter, ErrorKind};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::debug;

use crate::client::ClientNode;
use crate::error::{Error, Result};
use crate::fed::{ClientReport, RoundPlan};
use crate::numerics::ParamVector;
pub use frame::{decode_frame, encode_frame, Message};

/// Default per-round deadline over sockets.
pub const SOCKET_TIMEOUT: Duration = Duration::from_secs(60);

/// One end of a reliable, ordered message channel.
pub trait Link: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;

    /// Blocks for the next message. `Ok(None)` means the timeout elapsed.
    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<Message>>;
}

pub struct ChannelLink {
    tx: Sender<Message>,
    rx: Receiver<Message>,
}

/// A connected pair of in-process links.
pub fn channel_pair() -> (ChannelLink, ChannelLink) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        ChannelLink { tx: a_tx, rx: a_rx },
        ChannelLink { tx: b_tx, rx: b_rx },
    )
}

fn disconnected() -> Error {
    Error::Io(std::io::Error::new(ErrorKind::BrokenPipe, "peer disconnected"))
}

impl Link for ChannelLink {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.tx.send(msg.clone()).map_err(|_| disconnected())
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<Message>> {
        match timeout {
            None => self.rx.recv().map(Some).map_err(|_| disconnected()),
            Some(t) => match self.rx.recv_timeout(t) {
                Ok(m) => Ok(Some(m)),
                Err(RecvTimeoutError::Timeout) => Ok(None),
                Err(RecvTimeoutError::Disconnected) => Err(disconnected()),
            },
        }
    }
}

pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }
}

impl Link for TcpLink {
    fn send(&mut self, msg: &Message) -> Result<()> {
        frame::write_frame(&mut self.writer, msg)
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<Message>> {
        self.reader.get_ref().set_read_timeout(timeout)?;
        match frame::read_frame(&mut self.reader) {
            Ok(m) => Ok(Some(m)),
            Err(Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

/// Sends the round's instructions to every client and waits until all of
/// them have reported. Reports come back ordered by client id.
pub fn broadcast_and_collect(
    plan: &RoundPlan,
    links: &mut [Box<dyn Link>],
    timeout: Option<Duration>,
) -> Result<Vec<ClientReport>> {
    let k = plan.round;
    let abort = |client: usize, reason: String| Error::RoundAborted {
        round: k,
        client,
        reason,
    };
    if plan.tau_per_client.len() != links.len() {
        return Err(Error::InvalidArgument(format!(
            "plan covers {} clients but {} are connected",
            plan.tau_per_client.len(),
            links.len()
        )));
    }
    for (i, link) in links.iter_mut().enumerate() {
        let start = Message::RoundStart {
            round: k,
            tau: plan.tau_per_client[i],
            w: plan.w.clone(),
        };
        link.send(&start).map_err(|e| abort(i, e.to_string()))?;
        if let Some(g) = &plan.prev_global_grad {
            let prev = Message::PrevGlobalGrad {
                round: k - 1,
                grad: g.clone(),
            };
            link.send(&prev).map_err(|e| abort(i, e.to_string()))?;
        }
    }

    let deadline = timeout.map(|t| Instant::now() + t);
    let mut reports = Vec::with_capacity(links.len());
    for (i, link) in links.iter_mut().enumerate() {
        let remaining = deadline.map(|d| d.saturating_duration_since(Instant::now()).max(Duration::from_millis(1)));
        match link.recv(remaining).map_err(|e| abort(i, e.to_string()))? {
            Some(Message::Report(r)) if r.client_id == i => reports.push(r),
            Some(Message::Report(r)) => {
                return Err(abort(i, format!("report carries client id {}", r.client_id)))
            }
            Some(other) => return Err(abort(i, format!("unexpected message tag {}", other.tag()))),
            None => return Err(abort(i, "timed out waiting for report".into())),
        }
    }
    Ok(reports)
}

/// Client event loop: answer every round until `Stop` arrives.
pub fn serve_client(node: &ClientNode, link: &mut dyn Link) -> Result<()> {
    let mut pending: Option<(u32, u32, ParamVector)> = None;
    loop {
        let msg = link.recv(None)?.ok_or_else(disconnected)?;
        let report = match msg {
            Message::Stop => return Ok(()),
            Message::RoundStart { round: 0, tau, w } => node.run(0, tau, &w, None)?,
            Message::RoundStart { round, tau, w } => {
                pending = Some((round, tau, w));
                continue;
            }
            Message::PrevGlobalGrad { round, grad } => {
                let (k, tau, w) = pending.take().ok_or_else(|| {
                    Error::FrameMalformed("global gradient arrived before round start".into())
                })?;
                if round + 1 != k {
                    return Err(Error::FrameMalformed(format!(
                        "round {k} received the global gradient of round {round}"
                    )));
                }
                node.run(k, tau, &w, Some(&grad))?
            }
            Message::Report(_) => {
                return Err(Error::FrameMalformed("client received a report".into()))
            }
        };
        link.send(&Message::Report(report))?;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    /// Loopback TCP; port 0 picks an ephemeral port.
    Socket { port: u16 },
}

impl std::str::FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "inproc" {
            return Ok(Self::InProcess);
        }
        if let Some(port) = s.strip_prefix("socket:") {
            return port
                .parse()
                .map(|port| Self::Socket { port })
                .map_err(|_| Error::InvalidArgument(format!("bad socket port in {s:?}")));
        }
        Err(Error::InvalidArgument(format!(
            "transport must be `inproc` or `socket:<port>`, got {s:?}"
        )))
    }
}

impl std::fmt::Display for TransportKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportKind::InProcess => write!(f, "inproc"),
            TransportKind::Socket { port } => write!(f, "socket:{port}"),
        }
    }
}

/// A set of running client workers and the server's links to them.
pub struct Federation {
    links: Vec<Box<dyn Link>>,
    workers: Vec<JoinHandle<Result<()>>>,
    timeout: Option<Duration>,
}

impl Federation {
    pub fn launch(kind: TransportKind, nodes: Vec<ClientNode>) -> Result<Self> {
        match kind {
            TransportKind::InProcess => Ok(Self::in_process(nodes)),
            TransportKind::Socket { port } => Self::socket(port, nodes),
        }
    }

    pub fn in_process(nodes: Vec<ClientNode>) -> Self {
        let mut links: Vec<Box<dyn Link>> = Vec::new();
        let mut workers = Vec::new();
        for node in nodes {
            let (server_end, mut client_end) = channel_pair();
            links.push(Box::new(server_end));
            workers.push(thread::spawn(move || serve_client(&node, &mut client_end)));
        }
        Self {
            links,
            workers,
            timeout: None,
        }
    }

    /// Each client connects to a loopback listener in id order, so the
    /// `i`-th accepted connection belongs to client `i`.
    pub fn socket(port: u16, nodes: Vec<ClientNode>) -> Result<Self> {
        let listener = TcpListener::bind(SocketAddr::from((Ipv4Addr::LOCALHOST, port)))?;
        let addr = listener.local_addr()?;
        debug!("socket transport listening on {addr}");
        let mut links: Vec<Box<dyn Link>> = Vec::new();
        let mut workers = Vec::new();
        for node in nodes {
            let stream = TcpStream::connect(addr)?;
            let (server_side, _) = listener.accept()?;
            links.push(Box::new(TcpLink::new(server_side)?));
            let mut client_link = TcpLink::new(stream)?;
            workers.push(thread::spawn(move || serve_client(&node, &mut client_link)));
        }
        Ok(Self {
            links,
            workers,
            timeout: Some(SOCKET_TIMEOUT),
        })
    }

    pub fn with_timeout(mut self, timeout: Option<Duration>) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn round(&mut self, plan: &RoundPlan) -> Result<Vec<ClientReport>> {
        broadcast_and_collect(plan, &mut self.links, self.timeout)
    }

    /// Sends `Stop` and joins the workers, surfacing the first client error.
    pub fn shutdown(mut self) -> Result<()> {
        self.stop_and_join()
    }

    /// Tears the federation down after a failed round and prefers a client's
    /// own error (e.g. divergence) over the transport-level abort.
    pub fn abort(mut self, err: Error) -> Error {
        match self.stop_and_join() {
            Err(client_err) => client_err,
            Ok(()) => err,
        }
    }

    fn stop_and_join(&mut self) -> Result<()> {
        for link in &mut self.links {
            let _ = link.send(&Message::Stop);
        }
        self.links.clear();
        let mut first = Ok(());
        for w in self.workers.drain(..) {
            let res = w
                .join()
                .unwrap_or_else(|_| Err(Error::InvalidArgument("client worker panicked".into())));
            if first.is_ok() {
                first = res;
            }
        }
        first
    }
}

impl Drop for Federation {
    fn drop(&mut self) {
        if !self.workers.is_empty() {
            let _ = self.stop_and_join();
        }
    }
}
