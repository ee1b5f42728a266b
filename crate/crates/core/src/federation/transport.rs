//! Frame transports. Both carry exactly the bytes produced by
//! [`encode_frame`]; the in-process variant moves whole frames through a
//! channel, the TCP variant writes them to a socket.

use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

use super::frame::{decode_frame, encode_frame, read_frame, ModelEnvelope, ReadFrameError};

/// One bidirectional connection.
pub trait FrameLink: Send {
    fn send(&mut self, env: &ModelEnvelope) -> Result<()>;
    fn recv(&mut self) -> Result<ModelEnvelope>;
}

/// Server side: yields one link per incoming connection.
pub trait Listener: Send + Sync {
    fn accept(&self) -> Result<Box<dyn FrameLink>>;
}

/// Edge side: opens a fresh link to the server.
pub trait Connector: Send + Sync {
    fn connect(&self) -> Result<Box<dyn FrameLink>>;
}

// ---------------------------------------------------------------- in-process

pub struct InProcLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl InProcLink {
    pub fn pair() -> (Self, Self) {
        let (a_tx, b_rx) = mpsc::channel();
        let (b_tx, a_rx) = mpsc::channel();
        (Self { tx: a_tx, rx: a_rx }, Self { tx: b_tx, rx: b_rx })
    }
}

impl FrameLink for InProcLink {
    fn send(&mut self, env: &ModelEnvelope) -> Result<()> {
        self.tx
            .send(encode_frame(env))
            .map_err(|_| Error::Protocol("peer hung up".into()))
    }

    fn recv(&mut self) -> Result<ModelEnvelope> {
        let bytes = self.rx.recv().map_err(|_| Error::Protocol("peer hung up".into()))?;
        Ok(decode_frame(&bytes)?)
    }
}

pub struct InProcListener {
    incoming: Mutex<Receiver<InProcLink>>,
    abort: Arc<AtomicBool>,
}

impl InProcListener {
    /// Setting the returned flag makes a pending `accept` give up.
    pub fn abort_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.abort)
    }
}

#[derive(Clone)]
pub struct InProcConnector {
    outgoing: Sender<InProcLink>,
}

/// A listener and a connector bound to it. Once every connector clone is
/// dropped, `accept` fails instead of blocking.
pub fn in_process() -> (InProcListener, InProcConnector) {
    let (tx, rx) = mpsc::channel();
    let listener = InProcListener { incoming: Mutex::new(rx), abort: Arc::new(AtomicBool::new(false)) };
    (listener, InProcConnector { outgoing: tx })
}

impl Listener for InProcListener {
    fn accept(&self) -> Result<Box<dyn FrameLink>> {
        let rx = self.incoming.lock().expect("listener lock poisoned");
        loop {
            if self.abort.load(Ordering::SeqCst) {
                return Err(Error::Protocol("accept aborted".into()));
            }
            match rx.recv_timeout(Duration::from_millis(5)) {
                Ok(link) => return Ok(Box::new(link)),
                Err(mpsc::RecvTimeoutError::Timeout) => {}
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(Error::Protocol("no edges left to connect".into()))
                }
            }
        }
    }
}

impl Connector for InProcConnector {
    fn connect(&self) -> Result<Box<dyn FrameLink>> {
        let (ours, theirs) = InProcLink::pair();
        self.outgoing
            .send(theirs)
            .map_err(|_| Error::Protocol("server is not listening".into()))?;
        Ok(Box::new(ours))
    }
}

// ---------------------------------------------------------------------- tcp

pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpLink {
    pub fn new(stream: TcpStream, io_timeout: Option<Duration>) -> Result<Self> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(io_timeout)?;
        stream.set_write_timeout(io_timeout)?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: BufWriter::new(stream) })
    }
}

impl FrameLink for TcpLink {
    fn send(&mut self, env: &ModelEnvelope) -> Result<()> {
        self.writer.write_all(&encode_frame(env))?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<ModelEnvelope> {
        read_frame(&mut self.reader).map_err(|e| match e {
            ReadFrameError::Io(e) => Error::Io(e),
            ReadFrameError::Wire(e) => Error::Wire(e),
        })
    }
}

pub struct TcpFrameListener {
    inner: TcpListener,
    abort: Arc<AtomicBool>,
    accept_timeout: Option<Duration>,
    io_timeout: Option<Duration>,
}

impl TcpFrameListener {
    pub fn bind(addr: impl std::net::ToSocketAddrs) -> Result<Self> {
        let inner = TcpListener::bind(addr)?;
        inner.set_nonblocking(true)?;
        Ok(Self {
            inner,
            abort: Arc::new(AtomicBool::new(false)),
            accept_timeout: None,
            io_timeout: Some(Duration::from_secs(600)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.inner.local_addr()?)
    }

    /// Setting the returned flag makes a pending `accept` give up.
    pub fn abort_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.abort)
    }

    pub fn with_accept_timeout(mut self, t: Option<Duration>) -> Self {
        self.accept_timeout = t;
        self
    }

    pub fn with_io_timeout(mut self, t: Option<Duration>) -> Self {
        self.io_timeout = t;
        self
    }
}

impl Listener for TcpFrameListener {
    fn accept(&self) -> Result<Box<dyn FrameLink>> {
        let start = Instant::now();
        loop {
            if self.abort.load(Ordering::SeqCst) {
                return Err(Error::Protocol("accept aborted".into()));
            }
            match self.inner.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    return Ok(Box::new(TcpLink::new(stream, self.io_timeout)?));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if self.accept_timeout.is_some_and(|t| start.elapsed() > t) {
                        return Err(Error::Protocol("timed out waiting for an edge".into()));
                    }
                    thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

pub struct TcpConnector {
    addr: SocketAddr,
    io_timeout: Option<Duration>,
    retry_for: Duration,
}

impl TcpConnector {
    pub fn new(addr: SocketAddr) -> Self {
        Self { addr, io_timeout: Some(Duration::from_secs(600)), retry_for: Duration::from_secs(10) }
    }

    /// How long `connect` keeps retrying a refused connection.
    pub fn with_retry(mut self, retry_for: Duration) -> Self {
        self.retry_for = retry_for;
        self
    }
}

impl Connector for TcpConnector {
    fn connect(&self) -> Result<Box<dyn FrameLink>> {
        let start = Instant::now();
        loop {
            match TcpStream::connect(self.addr) {
                Ok(s) => return Ok(Box::new(TcpLink::new(s, self.io_timeout)?)),
                Err(e) if start.elapsed() < self.retry_for => {
                    log::debug!("connect to {} failed ({e}), retrying", self.addr);
                    thread::sleep(Duration::from_millis(20));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}
