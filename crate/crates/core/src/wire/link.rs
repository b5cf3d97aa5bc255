use std::io::{self, BufReader};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use super::{read_frame, write_frame, Message, WireError, WireResult, DEFAULT_MAX_FRAME};
use crate::world::Endpoint;

const BACKOFF_START: Duration = Duration::from_millis(5);
const BACKOFF_MAX: Duration = Duration::from_millis(100);

/// Ordered, bidirectional message stream over TCP.
pub struct Link {
    stream: TcpStream,
}

impl Link {
    pub fn from_stream(stream: TcpStream) -> Link {
        let _ = stream.set_nodelay(true);
        Link { stream }
    }

    pub fn peer(&self) -> Option<std::net::SocketAddr> {
        self.stream.peer_addr().ok()
    }

    /// Split into independently owned halves: one reader, one writer.
    pub fn split(self) -> WireResult<(LinkReader, LinkWriter)> {
        let write = self.stream.try_clone()?;
        Ok((
            LinkReader {
                inner: BufReader::new(self.stream),
                cap: DEFAULT_MAX_FRAME,
            },
            LinkWriter { stream: write },
        ))
    }
}

pub struct LinkReader {
    inner: BufReader<TcpStream>,
    cap: u32,
}

impl LinkReader {
    /// `Ok(None)` on orderly close.
    pub fn recv(&mut self) -> WireResult<Option<Message>> {
        match read_frame(&mut self.inner, self.cap)? {
            None => Ok(None),
            Some(frame) => Message::from_frame(&frame).map(Some),
        }
    }
}

pub struct LinkWriter {
    stream: TcpStream,
}

impl LinkWriter {
    pub fn send(&mut self, msg: &Message) -> WireResult<()> {
        write_frame(&mut self.stream, &msg.to_frame())
    }

    pub fn try_clone(&self) -> WireResult<LinkWriter> {
        Ok(LinkWriter {
            stream: self.stream.try_clone()?,
        })
    }

    pub fn close(&self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

fn is_retryable(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::ConnectionRefused
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::TimedOut
            | io::ErrorKind::WouldBlock
            | io::ErrorKind::Interrupted
    )
}

/// Connect to `endpoint`, retrying refused attempts with bounded exponential
/// backoff until `timeout` has elapsed. A zero timeout makes exactly one
/// attempt.
pub fn connect(endpoint: &Endpoint, timeout: Duration) -> WireResult<Link> {
    let addrs: Vec<_> = (endpoint.host.as_str(), endpoint.port)
        .to_socket_addrs()
        .map_err(|e| WireError::Io(io::Error::new(e.kind(), format!("{endpoint}: {e}"))))?
        .collect();
    let addr = *addrs.first().ok_or_else(|| {
        WireError::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{endpoint} resolves to no address"),
        ))
    })?;
    let deadline = Instant::now() + timeout;
    let mut backoff = BACKOFF_START;
    loop {
        let remaining = deadline.saturating_duration_since(Instant::now());
        let attempt = if remaining.is_zero() {
            TcpStream::connect(addr)
        } else {
            TcpStream::connect_timeout(&addr, remaining)
        };
        match attempt {
            Ok(stream) => return Ok(Link::from_stream(stream)),
            Err(e) if timeout.is_zero() && e.kind() == io::ErrorKind::ConnectionRefused => {
                return Err(WireError::Refused(endpoint.to_string()))
            }
            Err(e) if is_retryable(&e) => {
                let now = Instant::now();
                if now >= deadline {
                    return Err(WireError::ConnectTimeout(endpoint.to_string()));
                }
                thread::sleep(backoff.min(deadline - now));
                backoff = (backoff * 2).min(BACKOFF_MAX);
            }
            Err(e) => return Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::ControlMsg;
    use std::net::TcpListener;

    fn closed_port() -> u16 {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    }

    #[test]
    fn connects_to_listener() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let ep = Endpoint::new("127.0.0.1", l.local_addr().unwrap().port());
        let link = connect(&ep, Duration::from_secs(1)).unwrap();
        let (_, mut w) = link.split().unwrap();
        w.send(&Message::Control(ControlMsg::ResizeReq { m: 2 })).unwrap();
        let (s, _) = l.accept().unwrap();
        let (mut r, _) = Link::from_stream(s).split().unwrap();
        assert_eq!(
            r.recv().unwrap(),
            Some(Message::Control(ControlMsg::ResizeReq { m: 2 }))
        );
    }

    #[test]
    fn closed_port_times_out() {
        let ep = Endpoint::new("127.0.0.1", closed_port());
        let t = Instant::now();
        let err = connect(&ep, Duration::from_millis(100)).err().unwrap();
        assert!(matches!(err, WireError::ConnectTimeout(_)), "{err}");
        assert!(t.elapsed() >= Duration::from_millis(100));
        assert!(t.elapsed() < Duration::from_secs(2));
    }

    #[test]
    fn zero_timeout_reports_refused() {
        let ep = Endpoint::new("127.0.0.1", closed_port());
        assert!(matches!(connect(&ep, Duration::ZERO), Err(WireError::Refused(_))));
    }

    #[test]
    fn delayed_listener_is_reached_by_retry() {
        let port = closed_port();
        let server = thread::spawn(move || {
            thread::sleep(Duration::from_millis(50));
            let l = TcpListener::bind(("127.0.0.1", port)).unwrap();
            l.accept().unwrap();
        });
        let ep = Endpoint::new("127.0.0.1", port);
        let link = connect(&ep, Duration::from_secs(1));
        assert!(link.is_ok(), "{:?}", link.err());
        server.join().unwrap();
    }

    #[test]
    fn per_link_fifo() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let ep = Endpoint::new("127.0.0.1", l.local_addr().unwrap().port());
        let sender = thread::spawn(move || {
            let (_, mut w) = connect(&ep, Duration::from_secs(1)).unwrap().split().unwrap();
            for i in 0..500 {
                w.send(&Message::Control(ControlMsg::ForkRep { code: i }))
                    .unwrap();
            }
        });
        let (s, _) = l.accept().unwrap();
        let (mut r, _) = Link::from_stream(s).split().unwrap();
        for i in 0..500 {
            assert_eq!(
                r.recv().unwrap(),
                Some(Message::Control(ControlMsg::ForkRep { code: i }))
            );
        }
        sender.join().unwrap();
        assert_eq!(r.recv().unwrap(), None);
    }
}
