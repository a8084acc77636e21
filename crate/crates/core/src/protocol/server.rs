use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use super::wire::{read_frame, write_frame, ErrorCode, MsgType, Received, WireMessage};
use crate::error::Result;
use crate::models::SegmentationBackend;
use crate::scalar::Scalar;
use crate::tensor::{LabelField, Volume};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServerOptions {
    /// Accept mixed-label training traffic.
    pub training: bool,
}

/// Labeled mixtures received in training mode.
pub type TrainingInbox<T> = Arc<Mutex<Vec<(Volume<T>, LabelField<T>)>>>;

/// Handle to a running server; dropping it does not stop the service.
pub struct ServerHandle<T: Scalar> {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    inbox: TrainingInbox<T>,
    acceptor: Option<JoinHandle<()>>,
}

impl<T: Scalar> ServerHandle<T> {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn inbox(&self) -> TrainingInbox<T> {
        self.inbox.clone()
    }

    /// Stops accepting connections and waits for the acceptor thread.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    /// Blocks until the acceptor exits.
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

/// Binds `addr` and serves each connection on its own thread.
pub fn serve<T: Scalar>(backend: Arc<SegmentationBackend<T>>, addr: impl ToSocketAddrs, opts: ServerOptions) -> Result<ServerHandle<T>> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let inbox: TrainingInbox<T> = Arc::default();
    let name = backend.name();
    let acceptor = {
        let stop = stop.clone();
        let inbox = inbox.clone();
        thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                match conn {
                    Ok(stream) => {
                        let backend = backend.clone();
                        let inbox = inbox.clone();
                        thread::spawn(move || {
                            if let Err(e) = handle_connection(stream, &backend, opts, &inbox) {
                                log::warn!("connection ended with error: {e}");
                            }
                        });
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })
    };
    log::info!("serving {name} backend on {local}");
    Ok(ServerHandle { addr: local, stop, inbox, acceptor: Some(acceptor) })
}

/// Produces the reply to one message; `None` means close the connection.
pub fn respond<T: Scalar>(
    msg: &WireMessage,
    backend: &SegmentationBackend<T>,
    opts: ServerOptions,
    inbox: &TrainingInbox<T>,
) -> Option<WireMessage> {
    let (sid, idx) = (msg.session_id, msg.patch_index);
    let reply = match msg.msg_type {
        MsgType::Hello => WireMessage::hello(sid),
        MsgType::Bye => return None,
        MsgType::SegmentRequest => match msg.tensors::<T>() {
            Err(e) => WireMessage::error(sid, idx, ErrorCode::Malformed, &e.to_string()),
            Ok(ts) if ts.len() != 1 || ts[0].dims.len() != 3 => {
                WireMessage::error(sid, idx, ErrorCode::Rejected, "inference requests carry exactly one intensity patch")
            }
            Ok(mut ts) => match ts.pop().expect("one tensor").into_volume().and_then(|x| backend.segment(&x)) {
                Ok(y) => WireMessage::segment_response(sid, idx, &y),
                Err(e) => WireMessage::error(sid, idx, ErrorCode::Backend, &e.to_string()),
            },
        },
        MsgType::TrainingRequest if !opts.training => {
            WireMessage::error(sid, idx, ErrorCode::Rejected, "server is not in training mode")
        }
        MsgType::TrainingRequest => {
            let parsed = msg.tensors::<T>().and_then(|mut ts| {
                if ts.len() != 2 {
                    return Err(super::ProtocolError::Payload("training requests carry an image and its labels".into()).into());
                }
                let y = ts.pop().expect("two").into_labels()?;
                let x = ts.pop().expect("two").into_volume()?;
                Ok((x, y))
            });
            match parsed {
                Ok((x, y)) => match backend.segment(&x) {
                    Ok(pred) => {
                        inbox.lock().expect("inbox lock").push((x, y));
                        WireMessage::segment_response(sid, idx, &pred)
                    }
                    Err(e) => WireMessage::error(sid, idx, ErrorCode::Backend, &e.to_string()),
                },
                Err(e) => WireMessage::error(sid, idx, ErrorCode::Malformed, &e.to_string()),
            }
        }
        MsgType::SegmentResponse | MsgType::Error => {
            WireMessage::error(sid, idx, ErrorCode::Unexpected, "servers do not accept responses")
        }
    };
    Some(reply)
}

fn handle_connection<T: Scalar>(
    stream: TcpStream,
    backend: &SegmentationBackend<T>,
    opts: ServerOptions,
    inbox: &TrainingInbox<T>,
) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let reply = match read_frame(&mut reader)? {
            Received::Closed => return Ok(()),
            Received::Malformed(e) => WireMessage::error(0, 0, ErrorCode::Malformed, &e.to_string()),
            Received::Message(msg) => match respond(&msg, backend, opts, inbox) {
                Some(r) => r,
                None => {
                    write_frame(&mut writer, &WireMessage::bye(msg.session_id))?;
                    writer.flush()?;
                    return Ok(());
                }
            },
        };
        write_frame(&mut writer, &reply)?;
        writer.flush()?;
    }
}
