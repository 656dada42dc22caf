use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, Sender};

use super::wire::{decode_frame, read_frame, write_frame, ProtocolError, WireMessage};

/// A reliable, ordered, message-framed byte connection between one worker
/// and the coordinator.
pub trait Transport: Send {
    fn send(&mut self, msg: &WireMessage) -> Result<(), ProtocolError>;
    fn recv(&mut self) -> Result<WireMessage, ProtocolError>;
}

/// Transport over a TCP stream.
pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Result<Self, ProtocolError> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        let writer = BufWriter::new(stream);
        Ok(TcpTransport { reader, writer })
    }

    pub fn connect(endpoint: &str) -> Result<Self, ProtocolError> {
        Self::new(TcpStream::connect(endpoint)?)
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &WireMessage) -> Result<(), ProtocolError> {
        write_frame(&mut self.writer, msg)
    }

    fn recv(&mut self) -> Result<WireMessage, ProtocolError> {
        read_frame(&mut self.reader)
    }
}

/// In-memory transport for tests: frames are encoded to bytes and decoded on
/// receipt, so the codec is exercised exactly as it is over a socket.
pub struct MemTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl MemTransport {
    /// Ships raw bytes as one frame without encoding; lets tests inject
    /// malformed frames.
    pub fn send_raw(&mut self, frame: Vec<u8>) -> Result<(), ProtocolError> {
        self.tx.send(frame).map_err(|_| ProtocolError::Disconnected)
    }
}

/// Connected pair of in-memory endpoints.
pub fn mem_pair() -> (MemTransport, MemTransport) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    (MemTransport { tx: tx_a, rx: rx_a }, MemTransport { tx: tx_b, rx: rx_b })
}

impl Transport for MemTransport {
    fn send(&mut self, msg: &WireMessage) -> Result<(), ProtocolError> {
        self.send_raw(super::wire::encode_frame(msg))
    }

    fn recv(&mut self) -> Result<WireMessage, ProtocolError> {
        let frame = self.rx.recv().map_err(|_| ProtocolError::Disconnected)?;
        decode_frame(&frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mem_pair_round_trips_through_codec() {
        let (mut a, mut b) = mem_pair();
        a.send(&WireMessage::Hello { channel_id: 3 }).unwrap();
        assert_eq!(b.recv().unwrap(), WireMessage::Hello { channel_id: 3 });
        b.send(&WireMessage::Done { step: 9 }).unwrap();
        assert_eq!(a.recv().unwrap(), WireMessage::Done { step: 9 });
    }

    #[test]
    fn dropped_peer_reports_disconnect() {
        let (mut a, b) = mem_pair();
        drop(b);
        assert!(matches!(a.recv(), Err(ProtocolError::Disconnected)));
        assert!(matches!(
            a.send(&WireMessage::Shutdown),
            Err(ProtocolError::Disconnected)
        ));
    }

    #[test]
    fn malformed_raw_frame_surfaces_protocol_error() {
        let (mut a, mut b) = mem_pair();
        a.send_raw(b"XXXX\x01\x00\x00\x00\x00\x00\x00\x00\x00".to_vec()).unwrap();
        assert!(matches!(b.recv(), Err(ProtocolError::BadMagic)));
    }

    #[test]
    fn tcp_transport_round_trips() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut t = TcpTransport::new(stream).unwrap();
            let msg = t.recv().unwrap();
            t.send(&msg).unwrap();
        });
        let mut client = TcpTransport::connect(&addr.to_string()).unwrap();
        let msg = WireMessage::Emb { step: 5, rows: 2, dim: 3, data: vec![1.0; 6] };
        client.send(&msg).unwrap();
        assert_eq!(client.recv().unwrap(), msg);
        server.join().unwrap();
    }
}
